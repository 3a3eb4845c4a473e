//! Image corruption (additive white noise followed by a box blur) and the
//! input covariance it induces.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

const CORRUPTION_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSetting {
    pub sigma: f64,
    pub kernel: usize,
}

impl NoiseSetting {
    pub fn new(sigma: f64, kernel: usize) -> Result<Self> {
        let s = Self { sigma, kernel };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!("blur kernel must be odd and >= 1, got {}", self.kernel)));
        }
        Ok(())
    }

    /// Label such as `s0.2-k5`.
    pub fn label(&self) -> String {
        format!("s{}-k{}", self.sigma, self.kernel)
    }
}

/// `k×k` uniform blur over an `h×w` row-major image with reflect padding
/// (the edge pixel is not repeated).
#[derive(Debug, Clone, PartialEq)]
pub struct BlurOperator {
    kernel: usize,
    height: usize,
    width: usize,
    matrix: DMatrix<f64>,
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    (if r > n as isize - 1 { period - r } else { r }) as usize
}

impl BlurOperator {
    pub fn new(kernel: usize, height: usize, width: usize) -> Result<Self> {
        NoiseSetting::new(0.0, kernel)?;
        if height == 0 || width == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        let n = height * width;
        let r = (kernel / 2) as isize;
        let weight = 1.0 / (kernel * kernel) as f64;
        let mut matrix = DMatrix::zeros(n, n);
        for y in 0..height {
            for x in 0..width {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = reflect(y as isize + dy, height);
                        let sx = reflect(x as isize + dx, width);
                        matrix[(y * width + x, sy * width + sx)] += weight;
                    }
                }
            }
        }
        Ok(Self { kernel, height, width, matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn apply(&self, image: &DVector<f64>) -> Result<DVector<f64>> {
        if image.len() != self.height * self.width {
            return Err(Error::Shape { expected: self.height * self.width, got: image.len() });
        }
        if self.kernel == 1 {
            return Ok(image.clone());
        }
        Ok(&self.matrix * image)
    }
}

/// `B·(image + η)` with `η ~ N(0, σ²I)` drawn from `seed`. Pixels are not
/// clipped.
pub fn corrupt(image: &DVector<f64>, setting: &NoiseSetting, shape: (usize, usize), seed: u64) -> Result<DVector<f64>> {
    setting.validate()?;
    let blur = BlurOperator::new(setting.kernel, shape.0, shape.1)?;
    corrupt_with(image, setting, &blur, seed)
}

/// [`corrupt`] with a prebuilt blur operator.
pub fn corrupt_with(image: &DVector<f64>, setting: &NoiseSetting, blur: &BlurOperator, seed: u64) -> Result<DVector<f64>> {
    if blur.kernel() != setting.kernel {
        return Err(Error::Config("blur operator does not match the noise setting".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CORRUPTION_STREAM);
    let noisy = if setting.sigma == 0.0 {
        image.clone()
    } else {
        image.map(|p| {
            let z: f64 = StandardNormal.sample(&mut rng);
            p + setting.sigma * z
        })
    };
    blur.apply(&noisy)
}

/// `Σ_in = σ²·B·Bᵀ`.
pub fn input_covariance(setting: &NoiseSetting, shape: (usize, usize)) -> Result<DMatrix<f64>> {
    setting.validate()?;
    let n = shape.0 * shape.1;
    let var = setting.sigma * setting.sigma;
    if setting.kernel == 1 {
        return Ok(DMatrix::identity(n, n) * var);
    }
    let b = BlurOperator::new(setting.kernel, shape.0, shape.1)?;
    Ok(symmetrize(&(b.matrix() * b.matrix().transpose() * var)))
}

/// Streaming unbiased covariance estimate. Sums are taken relative to the
/// first sample, which keeps constant data exactly at zero covariance.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    shift: Option<DVector<f64>>,
    count: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { shift: None, count: 0, sum: DVector::zeros(dim), outer: DMatrix::zeros(dim, dim) }
    }

    /// Adds the columns of `batch` as samples.
    pub fn push_batch(&mut self, batch: &DMatrix<f64>) -> Result<()> {
        if batch.nrows() != self.sum.len() {
            return Err(Error::Shape { expected: self.sum.len(), got: batch.nrows() });
        }
        if batch.ncols() == 0 {
            return Ok(());
        }
        let shift = self.shift.get_or_insert_with(|| batch.column(0).into_owned());
        let mut centred = batch.clone();
        for mut col in centred.column_iter_mut() {
            col -= &*shift;
        }
        self.sum += centred.column_sum();
        self.outer += &centred * centred.transpose();
        self.count += batch.ncols();
        Ok(())
    }

    pub fn push(&mut self, sample: &DVector<f64>) -> Result<()> {
        self.push_batch(&DMatrix::from_column_slice(sample.len(), 1, sample.as_slice()))
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<DVector<f64>> {
        let shift = self.shift.as_ref()?;
        Some(shift + &self.sum / self.count as f64)
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.count < 2 {
            return Err(Error::Config(format!("covariance needs at least 2 samples, got {}", self.count)));
        }
        let n = self.count as f64;
        let cov = (&self.outer - &self.sum * self.sum.transpose() / n) / (n - 1.0);
        Ok(symmetrize(&cov))
    }
}

/// Unbiased sample covariance of residual vectors.
pub fn empirical_covariance(residuals: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let dim = residuals.first().map_or(0, |r| r.len());
    let mut acc = CovarianceAccumulator::new(dim);
    for r in residuals {
        acc.push(r)?;
    }
    acc.covariance()
}
