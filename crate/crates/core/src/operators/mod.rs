//! Forward models `A_I`, their adjoints, and the normal operator
//! `H = A^H A + lambda * sum_j E_j^T E_j` of the reconstruction update.

mod cartesian;
mod coils;
pub(crate) mod fft;
mod radial;
pub mod trajectory;

pub use cartesian::CartesianOp;
pub use coils::CoilMaps;
pub use radial::RadialOp;
pub use trajectory::RadialTrajectory;

use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};
use crate::patches::{coverage_weights, PatchGeometry};
use crate::tensor::{ComplexVolume, Dims, KSpaceData, SampleLayout};

/// A linear, frame-wise Fourier encoding operator.
pub trait ForwardOperator: Send + Sync {
    fn dims(&self) -> Dims;

    fn layout(&self) -> &SampleLayout;

    fn forward(&self, x: &ComplexVolume) -> Result<KSpaceData>;

    fn adjoint(&self, y: &KSpaceData) -> Result<ComplexVolume>;

    /// `A^H A x`.
    fn normal(&self, x: &ComplexVolume) -> Result<ComplexVolume> {
        self.adjoint(&self.forward(x)?)
    }

    /// True when `||A x|| = ||x||` for every `x`.
    fn is_isometry(&self) -> bool {
        false
    }

    fn check_volume(&self, x: &ComplexVolume) -> Result<()> {
        x.check_dims(self.dims())
    }

    fn check_kspace(&self, y: &KSpaceData) -> Result<()> {
        if &y.layout != self.layout() {
            return dim_err("k-space layout does not match the operator's sampling descriptor");
        }
        Ok(())
    }
}

/// A Hermitian linear map on flat complex vectors, the contract the CG
/// solver works against.
pub trait LinearMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>>;
}

/// Wraps a closure as a [`LinearMap`].
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F> FnMap<F>
where
    F: Fn(&[Complex64]) -> Vec<Complex64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnMap { dim, f }
    }
}

impl<F> LinearMap for FnMap<F>
where
    F: Fn(&[Complex64]) -> Vec<Complex64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.dim {
            return dim_err(format!("map of size {} applied to {}", self.dim, x.len()));
        }
        Ok((self.f)(x))
    }
}

/// `H x = A^H A x + lambda * W x` where `W` is the patch coverage diagonal.
pub struct NormalSystem<'a> {
    op: &'a dyn ForwardOperator,
    weights: Vec<f64>,
    lambda: f64,
}

impl<'a> NormalSystem<'a> {
    pub fn new(op: &'a dyn ForwardOperator, geometry: &PatchGeometry, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if geometry.image() != op.dims() {
            return dim_err(format!(
                "patch geometry image {} differs from operator dims {}",
                geometry.image(),
                op.dims()
            ));
        }
        Ok(NormalSystem { op, weights: coverage_weights(geometry), lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn operator(&self) -> &dyn ForwardOperator {
        self.op
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply_volume(&self, x: &ComplexVolume) -> Result<ComplexVolume> {
        let mut out = self.op.normal(x)?;
        if self.lambda > 0.0 {
            for ((o, xi), w) in out.as_mut_slice().iter_mut().zip(x.as_slice()).zip(&self.weights) {
                *o += xi * (self.lambda * w);
            }
        }
        Ok(out)
    }

    /// `c = x_u + lambda * sum_j E_j^T z_j` given the raw patch sum.
    pub fn rhs(&self, adjoint_data: &ComplexVolume, raw_patch_sum: &ComplexVolume) -> Result<ComplexVolume> {
        raw_patch_sum.check_dims(adjoint_data.dims())?;
        let mut c = adjoint_data.clone();
        for (ci, zi) in c.as_mut_slice().iter_mut().zip(raw_patch_sum.as_slice()) {
            *ci += zi * self.lambda;
        }
        Ok(c)
    }
}

impl LinearMap for NormalSystem<'_> {
    fn dim(&self) -> usize {
        self.op.dims().len()
    }

    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let v = ComplexVolume::from_vec(self.op.dims(), x.to_vec())?;
        Ok(self.apply_volume(&v)?.into_vec())
    }
}

/// `H x` for the given operator, patch geometry and `lambda`.
pub fn apply_normal_system(
    op: &dyn ForwardOperator,
    geometry: &PatchGeometry,
    lambda: f64,
    x: &ComplexVolume,
) -> Result<ComplexVolume> {
    op.check_volume(x)?;
    NormalSystem::new(op, geometry, lambda)?.apply_volume(x)
}
