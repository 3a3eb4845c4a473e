//! Differentiable vector functions used as between-factor measurement models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::net::Network;

pub trait VectorFunction: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// `(f(x), J_f(x)·seed)`.
    fn linearize_with_seed(&self, x: &DVector<f64>, seed: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;

    /// `(f(x), J_f(x))`.
    fn linearize(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.input_dim();
        self.linearize_with_seed(x, &DMatrix::identity(n, n))
    }
}

impl VectorFunction for Network {
    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        Network::output_dim(self)
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.output(x)
    }

    fn linearize_with_seed(&self, x: &DVector<f64>, seed: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.push_tangent(x, self.output_id(), seed)
    }
}

/// `z ↦ f(offset + basis·z)`: an affine change of input coordinates.
pub struct Reparameterized<'a> {
    inner: &'a dyn VectorFunction,
    offset: DVector<f64>,
    basis: DMatrix<f64>,
}

impl<'a> Reparameterized<'a> {
    pub fn new(inner: &'a dyn VectorFunction, offset: DVector<f64>, basis: DMatrix<f64>) -> Result<Self> {
        if offset.len() != inner.input_dim() || basis.nrows() != inner.input_dim() {
            return Err(Error::Shape { expected: inner.input_dim(), got: basis.nrows() });
        }
        Ok(Self { inner, offset, basis })
    }

    pub fn lift(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.basis * z
    }
}

impl VectorFunction for Reparameterized<'_> {
    fn input_dim(&self) -> usize {
        self.basis.ncols()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn eval(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.eval(&self.lift(z))
    }

    fn linearize_with_seed(&self, z: &DVector<f64>, seed: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.inner.linearize_with_seed(&self.lift(z), &(&self.basis * seed))
    }
}

/// Wraps closures for a value and its Jacobian.
pub struct FnFunction<F, J> {
    input_dim: usize,
    output_dim: usize,
    value: F,
    jac: J,
}

impl<F, J> FnFunction<F, J>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(input_dim: usize, output_dim: usize, value: F, jac: J) -> Self {
        Self { input_dim, output_dim, value, jac }
    }
}

impl<F, J> VectorFunction for FnFunction<F, J>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Shape { expected: self.input_dim, got: x.len() });
        }
        Ok((self.value)(x))
    }

    fn linearize_with_seed(&self, x: &DVector<f64>, seed: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let v = self.eval(x)?;
        Ok((v, (self.jac)(x) * seed))
    }
}
