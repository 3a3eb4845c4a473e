use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_input, stream};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::net::Network;

pub const DEFAULT_MC_SAMPLES: usize = 3000;

const BATCH: usize = 512;

/// Sample mean and unbiased sample covariance of the network outputs for
/// `samples` seeded draws `x = μ + S·z`, `S` the symmetric square root.
pub fn propagate_mc(net: &Network, input: &Gaussian, samples: usize, seed: u64) -> Result<Gaussian> {
    check_input(net, input)?;
    if samples < 2 {
        return Err(Error::Config(format!("Monte-Carlo needs at least 2 samples, got {samples}")));
    }
    let n = input.dim();
    let root = input.sqrt_cov();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream::MC);

    let k = net.output_dim();
    let mut mean = DVector::zeros(k);
    let mut m2 = DMatrix::zeros(k, k);
    let mut count = 0usize;
    while count < samples {
        let b = BATCH.min(samples - count);
        let z = DMatrix::from_fn(n, b, |_, _| StandardNormal.sample(&mut rng));
        let mut xs = &root * z;
        for mut col in xs.column_iter_mut() {
            col += input.mean();
        }
        let ys = net.output_batch(&xs)?;
        // Welford updates keep the estimate exact for constant outputs.
        for y in ys.column_iter() {
            count += 1;
            let delta = y - &mean;
            mean += &delta / count as f64;
            let delta_after = y - &mean;
            m2.ger(1.0, &delta, &delta_after, 1.0);
        }
    }
    Gaussian::from_estimate(mean, m2 / (samples - 1) as f64)
}
