//! The noise-setting sweep and the input-node ablation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use fgprop_core::corruption::{input_covariance, BlurOperator, NoiseSetting};
use fgprop_core::metrics::{friedman_test, nemenyi_test, wasserstein2, FriedmanResult, NemenyiResult, ScoreTable};
use fgprop_core::net::load_model;
use fgprop_core::propagate::{propagate_fg, propagate_mc, FgConfig, Registry, UtParams, DEFAULT_MC_SAMPLES};
use fgprop_core::{Dataset, Gaussian, LayerId, Network};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which layer's activation is propagated to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LayerSelector {
    #[default]
    Output,
    /// The layer feeding the output layer.
    Penultimate,
    Id(LayerId),
}

impl LayerSelector {
    pub fn resolve(&self, net: &Network) -> Result<LayerId> {
        Ok(match self {
            LayerSelector::Output => net.output_id(),
            LayerSelector::Penultimate => {
                let last = net.layers().last().expect("network has layers");
                *last.inputs.first().context("the output layer has no source layer")?
            }
            LayerSelector::Id(id) => {
                net.position(*id)?;
                *id
            }
        })
    }
}

impl fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelector::Output => f.write_str("output"),
            LayerSelector::Penultimate => f.write_str("penultimate"),
            LayerSelector::Id(id) => write!(f, "{id}"),
        }
    }
}

impl FromStr for LayerSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "output" => Ok(LayerSelector::Output),
            "penultimate" => Ok(LayerSelector::Penultimate),
            _ => s.parse().map(LayerSelector::Id).map_err(|_| format!("expected `output`, `penultimate` or a layer id, got `{s}`")),
        }
    }
}

impl From<LayerSelector> for String {
    fn from(l: LayerSelector) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for LayerSelector {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// The four settings: σ ∈ {0.05, 0.2} × k ∈ {1, 5}.
pub fn standard_settings() -> Vec<NoiseSetting> {
    [(0.05, 1), (0.05, 5), (0.2, 1), (0.2, 5)].iter().map(|&(s, k)| NoiseSetting { sigma: s, kernel: k }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    pub data: PathBuf,
    pub layer: LayerSelector,
    pub settings: Vec<NoiseSetting>,
    pub trials: usize,
    pub methods: Vec<String>,
    /// Sample count of the Monte-Carlo reference.
    pub mc_reference: usize,
    /// Sample count of the `mc` method when it is among `methods`.
    pub mc_samples: usize,
    pub fg: FgConfig,
    pub ut: UtParams,
    pub seed: u64,
    /// Nemenyi significance level.
    pub alpha: f64,
    /// Report directory; not part of the configuration hash.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(model: impl Into<PathBuf>, data: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            data: data.into(),
            layer: LayerSelector::Output,
            settings: standard_settings(),
            trials: 500,
            methods: vec!["fg".into(), "ekf".into(), "ut".into()],
            mc_reference: DEFAULT_MC_SAMPLES,
            mc_samples: DEFAULT_MC_SAMPLES,
            fg: FgConfig::default(),
            ut: UtParams::default(),
            seed: 0,
            alpha: 0.001,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.trials >= 1, "trial count must be at least 1");
        ensure!(!self.settings.is_empty(), "at least one noise setting is required");
        ensure!(!self.methods.is_empty(), "at least one method is required");
        ensure!(self.mc_reference >= 2, "the Monte-Carlo reference needs at least 2 samples");
        for s in &self.settings {
            s.validate()?;
        }
        self.fg.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn registry(&self) -> Registry {
        Registry::standard(self.fg.clone(), self.ut, self.mc_samples)
    }

    /// Loads the model and dataset named by the configuration.
    pub fn load(&self) -> Result<(Network, Dataset)> {
        ensure!(self.model.exists(), "model file {} does not exist", self.model.display());
        ensure!(self.data.exists(), "dataset file {} does not exist", self.data.display());
        let net = load_model(&self.model).with_context(|| format!("loading model {}", self.model.display()))?;
        let data = Dataset::load(&self.data).with_context(|| format!("loading dataset {}", self.data.display()))?;
        Ok((net, data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub setting: String,
    pub sigma: f64,
    pub kernel: usize,
    pub trial: usize,
    pub method: String,
    pub w2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialTiming {
    pub setting: String,
    pub trial: usize,
    pub method: String,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingSummary {
    pub setting: String,
    pub sigma: f64,
    pub kernel: usize,
    pub methods: Vec<MethodSummary>,
    pub failed_trials: usize,
    pub friedman: Option<FriedmanResult>,
    pub nemenyi: Option<NemenyiResult>,
}

impl SettingSummary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub target_layer: LayerId,
    pub trials: usize,
    pub methods: Vec<String>,
    pub mc_reference: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub settings: Vec<SettingSummary>,
    #[serde(skip)]
    pub scores: Vec<TrialScore>,
    #[serde(skip)]
    pub timings: Vec<TrialTiming>,
}

impl ExperimentReport {
    pub fn setting(&self, sigma: f64, kernel: usize) -> Option<&SettingSummary> {
        self.settings.iter().find(|s| s.sigma == sigma && s.kernel == kernel)
    }
}

/// Seed of trial `t`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_add(t as u64)
}

/// The Monte-Carlo reference draws from a stream unrelated to the methods'.
fn reference_seed(trial_seed: u64) -> u64 {
    trial_seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Seeded order in which dataset samples are used by trials.
fn sample_order(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Input Gaussians for one noise setting: mean `B·image`, covariance `σ²BBᵀ`.
pub struct SettingInputs<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    blur: BlurOperator,
    base: Gaussian,
}

impl<'a> SettingInputs<'a> {
    pub fn new(data: &'a Dataset, setting: &NoiseSetting, seed: u64) -> Result<Self> {
        let shape = data
            .image_shape_or_square()
            .context("dataset inputs are not images; pass an image shape in the dataset manifest")?;
        let blur = BlurOperator::new(setting.kernel, shape.0, shape.1)?;
        let base = Gaussian::new(DVector::zeros(data.input_dim), input_covariance(setting, shape)?)?;
        // Decompose once; every trial shares the cached factorization.
        base.eigen();
        Ok(Self { data, order: sample_order(data.len(), seed), blur, base })
    }

    pub fn sample_index(&self, trial: usize) -> usize {
        self.order[trial % self.order.len()]
    }

    pub fn input(&self, trial: usize) -> Result<Gaussian> {
        let image = &self.data.samples[self.sample_index(trial)].input;
        Ok(self.base.with_mean(self.blur.apply(image)?)?)
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

type TrialOutcome = std::result::Result<Vec<(f64, f64)>, String>;

/// Loads the model and data, runs the sweep and writes reports when an
/// output directory is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (net, data) = cfg.load()?;
    let report = run_on(&net, &data, cfg)?;
    if let Some(dir) = &cfg.out {
        crate::report::write_reports(&report, dir)?;
    }
    Ok(report)
}

/// Runs every method on every (setting, trial) and scores it against the
/// Monte-Carlo reference. Trials run in parallel; results are assembled in
/// trial order, so the report does not depend on scheduling.
pub fn run_on(net: &Network, data: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let target = cfg.layer.resolve(net)?;
    let net = net.truncate(target)?;
    ensure!(net.input_dim() == data.input_dim, "model expects inputs of size {}, dataset has {}", net.input_dim(), data.input_dim);
    let registry = cfg.registry();
    let methods = registry.select(&cfg.methods)?;

    let mut scores = Vec::new();
    let mut timings = Vec::new();
    let mut summaries = Vec::new();
    for setting in &cfg.settings {
        let label = setting.label();
        let inputs = SettingInputs::new(data, setting, cfg.seed)?;
        let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let run = || -> Result<Vec<(f64, f64)>> {
                    let seed = trial_seed(cfg.seed, t);
                    let input = inputs.input(t)?;
                    let reference = propagate_mc(&net, &input, cfg.mc_reference, reference_seed(seed))?;
                    methods
                        .iter()
                        .map(|m| {
                            let start = Instant::now();
                            let out = m.propagate(&net, &input, seed)?;
                            let ms = start.elapsed().as_secs_f64() * 1e3;
                            Ok((wasserstein2(&out, &reference, false)?, ms))
                        })
                        .collect()
                };
                run().map_err(|e| format!("{e:#}"))
            })
            .collect();

        let failed = outcomes.iter().filter(|o| o.is_err()).count();
        if failed * 100 > cfg.trials {
            let first = outcomes.iter().find_map(|o| o.as_ref().err()).unwrap();
            bail!("{failed} of {} trials failed in setting {label}; first error: {first}", cfg.trials);
        }
        let mut rows = Vec::new();
        for (t, outcome) in outcomes.into_iter().enumerate() {
            let Ok(row) = outcome else { continue };
            for (m, &(w2, ms)) in methods.iter().zip(&row) {
                ensure!(w2.is_finite() && w2 >= 0.0, "non-finite score for {} in trial {t}", m.name());
                scores.push(TrialScore { setting: label.clone(), sigma: setting.sigma, kernel: setting.kernel, trial: t, method: m.name().to_string(), w2 });
                timings.push(TrialTiming { setting: label.clone(), trial: t, method: m.name().to_string(), wall_ms: ms });
            }
            rows.push(row.iter().map(|r| r.0).collect::<Vec<f64>>());
        }
        summaries.push(summarize(setting, &label, &cfg.methods, rows, failed, cfg.alpha)?);
    }

    Ok(ExperimentReport {
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            target_layer: target,
            trials: cfg.trials,
            methods: cfg.methods.clone(),
            mc_reference: cfg.mc_reference,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        settings: summaries,
        scores,
        timings,
    })
}

fn summarize(
    setting: &NoiseSetting,
    label: &str,
    methods: &[String],
    rows: Vec<Vec<f64>>,
    failed: usize,
    alpha: f64,
) -> Result<SettingSummary> {
    let per_method: Vec<MethodSummary> = methods
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let count = col.len();
            let mean = if count == 0 { f64::NAN } else { col.iter().sum::<f64>() / count as f64 };
            let median = if count == 0 { f64::NAN } else { median(&col) };
            MethodSummary { method: name.clone(), mean, median, count }
        })
        .collect();
    let (friedman, nemenyi) = if methods.len() >= 2 && rows.len() >= 2 {
        let table = ScoreTable::new(methods.to_vec(), rows)?;
        let nemenyi = if methods.len() <= 10 { Some(nemenyi_test(&table, alpha)?) } else { None };
        (Some(friedman_test(&table)), nemenyi)
    } else {
        (None, None)
    };
    Ok(SettingSummary { setting: label.to_string(), sigma: setting.sigma, kernel: setting.kernel, methods: per_method, failed_trials: failed, friedman, nemenyi })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationPoint {
    pub m: usize,
    pub mean_w2: f64,
    /// Total factor-graph propagation time over all trials.
    pub wall_seconds: f64,
    pub trials: usize,
}

/// Mean W2 of factor-graph propagation for each input-node count, over the
/// configured no-blur settings. References are computed once and shared.
/// Propagation runs serially, visiting every node count for each case in
/// turn so that load changes on the machine affect all counts alike.
pub fn run_ablation_on(
    net: &Network,
    data: &Dataset,
    cfg: &ExperimentConfig,
    node_counts: impl IntoIterator<Item = usize>,
) -> Result<Vec<AblationPoint>> {
    cfg.validate()?;
    let target = cfg.layer.resolve(net)?;
    let net = net.truncate(target)?;
    let settings: Vec<&NoiseSetting> = cfg.settings.iter().filter(|s| s.kernel == 1).collect();
    ensure!(!settings.is_empty(), "the ablation uses the no-blur settings; none are configured");

    let mut cases: Vec<(Gaussian, Gaussian, u64)> = Vec::new();
    for setting in settings {
        let inputs = SettingInputs::new(data, setting, cfg.seed)?;
        let batch: Vec<Result<(Gaussian, Gaussian, u64)>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(cfg.seed, t);
                let input = inputs.input(t)?;
                let reference = propagate_mc(&net, &input, cfg.mc_reference, reference_seed(seed))?;
                Ok((input, reference, seed))
            })
            .collect();
        for c in batch {
            cases.push(c?);
        }
    }

    let node_counts: Vec<usize> = node_counts.into_iter().collect();
    let mut totals = vec![0.0; node_counts.len()];
    let mut seconds = vec![0.0; node_counts.len()];
    for (input, reference, seed) in &cases {
        for (i, &m) in node_counts.iter().enumerate() {
            let fg = FgConfig { m, seed: *seed, ..cfg.fg.clone() };
            let start = Instant::now();
            let out = propagate_fg(&net, input, &fg)?;
            seconds[i] += start.elapsed().as_secs_f64();
            totals[i] += wasserstein2(&out, reference, false)?;
        }
    }
    Ok(node_counts
        .iter()
        .enumerate()
        .map(|(i, &m)| AblationPoint { m, mean_w2: totals[i] / cases.len() as f64, wall_seconds: seconds[i], trials: cases.len() })
        .collect())
}

/// [`run_ablation_on`] over `1..=max_m` after loading the configured files.
pub fn run_ablation(cfg: &ExperimentConfig, max_m: usize) -> Result<Vec<AblationPoint>> {
    ensure!(max_m >= 1, "maximum node count must be at least 1");
    cfg.validate()?;
    let (net, data) = cfg.load()?;
    let points = run_ablation_on(&net, &data, cfg, 1..=max_m)?;
    if let Some(dir) = &cfg.out {
        crate::report::write_ablation(&points, dir)?;
    }
    Ok(points)
}

/// Seeded output-space samples for scatter plots.
pub fn reference_samples(net: &Network, input: &Gaussian, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(reference_seed(seed));
    let z = DMatrix::from_fn(input.dim(), count, |_, _| StandardNormal.sample(&mut rng));
    let mut xs = input.sqrt_cov() * z;
    for mut col in xs.column_iter_mut() {
        col += input.mean();
    }
    Ok(net.output_batch(&xs)?)
}
