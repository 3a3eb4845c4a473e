//! Propagation of an input Gaussian through a network to an output Gaussian.
//!
//! Every method implements [`Propagator`] and is looked up by name in a
//! [`Registry`], so callers select methods at runtime.

mod ekf;
mod fg;
mod mc;
mod ut;

use std::collections::BTreeMap;

pub use ekf::propagate_ekf;
pub use fg::{propagate_fg, FgConfig};
pub use mc::{propagate_mc, DEFAULT_MC_SAMPLES};
pub use ut::{propagate_ut, sigma_points, unscented_transform, SigmaPoints, UtParams};

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::net::Network;

/// RNG streams, so methods sharing a trial seed draw independent numbers.
pub(crate) mod stream {
    pub const FG_SAMPLES: u64 = 1;
    pub const MC: u64 = 2;
}

pub trait Propagator: Send + Sync {
    fn name(&self) -> &str;

    /// Propagates `input` through `net`. Deterministic methods ignore `seed`.
    fn propagate(&self, net: &Network, input: &Gaussian, seed: u64) -> Result<Gaussian>;
}

pub struct FactorGraphMethod(pub FgConfig);

impl Propagator for FactorGraphMethod {
    fn name(&self) -> &str {
        "fg"
    }

    fn propagate(&self, net: &Network, input: &Gaussian, seed: u64) -> Result<Gaussian> {
        propagate_fg(net, input, &FgConfig { seed, ..self.0.clone() })
    }
}

pub struct ExtendedKalman;

impl Propagator for ExtendedKalman {
    fn name(&self) -> &str {
        "ekf"
    }

    fn propagate(&self, net: &Network, input: &Gaussian, _seed: u64) -> Result<Gaussian> {
        propagate_ekf(net, input)
    }
}

pub struct Unscented(pub UtParams);

impl Propagator for Unscented {
    fn name(&self) -> &str {
        "ut"
    }

    fn propagate(&self, net: &Network, input: &Gaussian, _seed: u64) -> Result<Gaussian> {
        propagate_ut(net, input, &self.0)
    }
}

pub struct MonteCarlo {
    pub samples: usize,
}

impl Propagator for MonteCarlo {
    fn name(&self) -> &str {
        "mc"
    }

    fn propagate(&self, net: &Network, input: &Gaussian, seed: u64) -> Result<Gaussian> {
        propagate_mc(net, input, self.samples, seed)
    }
}

/// Propagation methods by name.
#[derive(Default)]
pub struct Registry {
    methods: BTreeMap<String, Box<dyn Propagator>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `fg`, `ekf`, `ut` and `mc` with the given settings.
    pub fn standard(fg: FgConfig, ut: UtParams, mc_samples: usize) -> Self {
        let mut r = Self::new();
        r.register(Box::new(FactorGraphMethod(fg)));
        r.register(Box::new(ExtendedKalman));
        r.register(Box::new(Unscented(ut)));
        r.register(Box::new(MonteCarlo { samples: mc_samples }));
        r
    }

    /// Adds a method, replacing any previous one with the same name.
    pub fn register(&mut self, method: Box<dyn Propagator>) {
        self.methods.insert(method.name().to_string(), method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Propagator> {
        self.methods.get(name).map(|m| m.as_ref()).ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    /// Methods in the requested order; rejects unknown and repeated names.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<&dyn Propagator>> {
        let mut out: Vec<&dyn Propagator> = Vec::with_capacity(names.len());
        for n in names {
            let m = self.get(n.as_ref())?;
            if out.iter().any(|o| o.name() == m.name()) {
                return Err(Error::Config(format!("method `{}` listed twice", m.name())));
            }
            out.push(m);
        }
        Ok(out)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.methods.keys().map(String::as_str)
    }
}

fn check_input(net: &Network, input: &Gaussian) -> Result<()> {
    if input.dim() != net.input_dim() {
        return Err(Error::Shape { expected: net.input_dim(), got: input.dim() });
    }
    Ok(())
}
