//! Probabilistic models, their support transforms, and the coordinate systems
//! the samplers work in.

pub mod distributions;
mod gaussian_fit;
mod nsi;
pub mod transform;

pub use gaussian_fit::GaussianFitModel;
pub use nsi::{
    nsi_log_density, nsi_sphere_to_cartesian, NsiCouplings, NsiModel, NsiObservation, NsiParameters, RatePlugin,
    SurrogateRate, FLAVOR_PAIRS,
};
pub use transform::{logistic_transform, Bijector, CubeMap, SupportTransform};

use crate::error::{Error, Result};
use crate::scalar::Real;
use rand::Rng;
use rand_distr::StandardNormal;

/// A prior and likelihood over model coordinates θ.
///
/// Both terms return −∞ (never NaN) outside the support, so samplers can
/// reject such points instead of failing.
pub trait PosteriorModel: Send + Sync {
    fn dim(&self) -> usize;
    fn parameter_names(&self) -> Vec<String>;
    fn log_prior<T: Real>(&self, theta: &[T]) -> T;
    fn log_likelihood<T: Real>(&self, theta: &[T]) -> T;
    fn support(&self) -> &SupportTransform;
    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;

    /// log π(θ) + log p(X|θ).
    fn log_density<T: Real>(&self, theta: &[T]) -> T {
        let lp = self.log_prior(theta);
        if lp.value() == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.log_likelihood(theta)
    }

    fn checked_log_density(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(self.log_density(theta))
    }
}

/// A log-density on ℝ^d whose points map to model coordinates.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density<T: Real>(&self, x: &[T]) -> T;
    fn to_model(&self, x: &[f64]) -> Vec<f64>;

    /// Starting point for a sampler chain; a standard-normal draw by default.
    fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// A log-density on the open unit cube; the prior there is uniform.
pub trait CubeDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, u: &[f64]) -> f64;
    fn to_model(&self, u: &[f64]) -> Vec<f64>;
}

/// A model seen through its unconstrained bijectors.
pub struct Unconstrained<'a, M>(pub &'a M);

impl<M: PosteriorModel> LogDensity for Unconstrained<'_, M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_density<T: Real>(&self, x: &[T]) -> T {
        let (theta, log_jac) = self.0.support().forward(x);
        self.0.log_density(&theta) + log_jac
    }

    fn to_model(&self, x: &[f64]) -> Vec<f64> {
        self.0.support().forward(x).0
    }

    /// Unconstrained image of a prior draw plus standard-normal jitter.
    fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let theta = self.0.sample_prior(rng);
        self.0
            .support()
            .inverse(&theta)
            .into_iter()
            .map(|x| x + rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// A model seen through its unit-cube maps: log-density plus cube log-Jacobian.
pub struct OnCube<'a, M>(pub &'a M);

impl<M: PosteriorModel> CubeDensity for OnCube<'_, M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        let (theta, log_jac) = transform::cube_forward_unchecked(&self.0.support().cube, u);
        self.0.log_density(&theta) + log_jac
    }

    fn to_model(&self, u: &[f64]) -> Vec<f64> {
        transform::cube_forward_unchecked(&self.0.support().cube, u).0
    }
}

/// A cube density given directly as a closure; the model space is the cube.
pub struct CubeFn<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> CubeFn<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> CubeDensity for CubeFn<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, u: &[f64]) -> f64 {
        (self.f)(u)
    }
    fn to_model(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

impl<D: LogDensity> LogDensity for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density<T: Real>(&self, x: &[T]) -> T {
        (**self).log_density(x)
    }
    fn to_model(&self, x: &[f64]) -> Vec<f64> {
        (**self).to_model(x)
    }
    fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (**self).initial_point(rng)
    }
}

impl<D: CubeDensity> CubeDensity for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, u: &[f64]) -> f64 {
        (**self).log_density(u)
    }
    fn to_model(&self, u: &[f64]) -> Vec<f64> {
        (**self).to_model(u)
    }
}
