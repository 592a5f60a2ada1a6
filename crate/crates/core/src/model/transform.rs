//! Support transforms with their log-Jacobian corrections.
//!
//! Each model coordinate carries two maps: one from ℝ (where the gradient
//! samplers and flows operate) and one from the open unit interval (where
//! nested sampling operates).

use super::distributions::{log_sigmoid, sigmoid};
use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Map from ℝ to one model coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bijector {
    Identity,
    /// θ = lo + (hi − lo)·σ(x).
    Interval { lo: f64, hi: f64 },
}

impl Bijector {
    pub fn forward<T: Real>(&self, x: T) -> (T, T) {
        match *self {
            Bijector::Identity => (x, T::zero()),
            Bijector::Interval { lo, hi } => {
                let width = hi - lo;
                let theta = T::cst(lo) + T::cst(width) * sigmoid(x);
                let log_jac = T::cst(width.ln()) + log_sigmoid(x) + log_sigmoid(-x);
                (theta, log_jac)
            }
        }
    }

    pub fn inverse(&self, theta: f64) -> f64 {
        match *self {
            Bijector::Identity => theta,
            Bijector::Interval { lo, hi } => {
                let p = (theta - lo) / (hi - lo);
                (p / (1.0 - p)).ln()
            }
        }
    }
}

/// Map from the open unit interval to one model coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CubeMap {
    /// θ = scale·logit(u) + shift.
    Logistic { scale: f64, shift: f64 },
    /// θ = lo + (hi − lo)·u.
    Affine { lo: f64, hi: f64 },
    /// θ = mean + sd·Φ⁻¹(u).
    GaussianQuantile { mean: f64, sd: f64 },
}

impl CubeMap {
    /// `(θ, ln|dθ/du|)` for `u` in the open unit interval.
    pub fn forward(&self, u: f64) -> (f64, f64) {
        match *self {
            CubeMap::Logistic { scale, shift } => {
                let theta = scale * (u.ln() - (-u).ln_1p()) + shift;
                (theta, scale.ln() - u.ln() - (-u).ln_1p())
            }
            CubeMap::Affine { lo, hi } => (lo + (hi - lo) * u, (hi - lo).ln()),
            CubeMap::GaussianQuantile { mean, sd } => {
                let z = std_normal().inverse_cdf(u);
                (mean + sd * z, sd.ln() + LN_SQRT_2PI + 0.5 * z * z)
            }
        }
    }

    pub fn inverse(&self, theta: f64) -> f64 {
        match *self {
            CubeMap::Logistic { scale, shift } => sigmoid((theta - shift) / scale),
            CubeMap::Affine { lo, hi } => (theta - lo) / (hi - lo),
            CubeMap::GaussianQuantile { mean, sd } => std_normal().cdf((theta - mean) / sd),
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Per-coordinate support description of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportTransform {
    pub unconstrained: Vec<Bijector>,
    pub cube: Vec<CubeMap>,
}

impl SupportTransform {
    pub fn new(unconstrained: Vec<Bijector>, cube: Vec<CubeMap>) -> Self {
        assert_eq!(unconstrained.len(), cube.len());
        Self { unconstrained, cube }
    }

    pub fn dim(&self) -> usize {
        self.cube.len()
    }

    /// Unconstrained point to model coordinates plus the summed log-Jacobian.
    pub fn forward<T: Real>(&self, x: &[T]) -> (Vec<T>, T) {
        let mut log_jac = T::zero();
        let theta = self
            .unconstrained
            .iter()
            .zip(x)
            .map(|(b, &xi)| {
                let (t, lj) = b.forward(xi);
                log_jac += lj;
                t
            })
            .collect();
        (theta, log_jac)
    }

    pub fn inverse(&self, theta: &[f64]) -> Vec<f64> {
        self.unconstrained
            .iter()
            .zip(theta)
            .map(|(b, &t)| b.inverse(t))
            .collect()
    }

    /// Unit-cube point to model coordinates plus the summed log-Jacobian.
    pub fn cube_forward(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        if let Some((index, &value)) = u.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v < 1.0)) {
            return Err(Error::CubeBoundary { index, value });
        }
        Ok(cube_forward_unchecked(&self.cube, u))
    }

    pub fn cube_inverse(&self, theta: &[f64]) -> Vec<f64> {
        self.cube.iter().zip(theta).map(|(m, &t)| m.inverse(t)).collect()
    }
}

pub(crate) fn cube_forward_unchecked(maps: &[CubeMap], u: &[f64]) -> (Vec<f64>, f64) {
    let mut log_jac = 0.0;
    let theta = maps
        .iter()
        .zip(u)
        .map(|(m, &ui)| {
            let (t, lj) = m.forward(ui);
            log_jac += lj;
            t
        })
        .collect();
    (theta, log_jac)
}

/// Logistic cube map `θ_i = scale_i·logit(u_i) + shift_i` with its log-Jacobian.
pub fn logistic_transform(u: &[f64], scale: &[f64], shift: &[f64]) -> Result<(Vec<f64>, f64)> {
    let maps: Vec<CubeMap> = scale
        .iter()
        .zip(shift)
        .map(|(&scale, &shift)| CubeMap::Logistic { scale, shift })
        .collect();
    SupportTransform::new(vec![Bijector::Identity; maps.len()], maps).cube_forward(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_grad, value_and_grad};
    use proptest::prelude::*;

    #[test]
    fn logistic_at_half() {
        let (theta, lj) = logistic_transform(&[0.5], &[1.0], &[0.0]).unwrap();
        assert_eq!(theta, vec![0.0]);
        assert!((lj - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn boundary_is_rejected() {
        assert!(matches!(
            logistic_transform(&[0.0], &[1.0], &[0.0]),
            Err(Error::CubeBoundary { index: 0, .. })
        ));
        assert!(logistic_transform(&[0.3, 1.0], &[1.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn gaussian_quantile_change_of_variables() {
        // A uniform cube density plus the log-Jacobian of the quantile map is
        // the standard-normal log-density at the image point.
        let map = CubeMap::GaussianQuantile { mean: 0.0, sd: 1.0 };
        for &u in &[0.01, 0.2, 0.5, 0.77, 0.999] {
            let (z, lj) = map.forward(u);
            let uniform_log_density = 0.0;
            let expected = -LN_SQRT_2PI - 0.5 * z * z;
            // density on θ = density on u / |dθ/du|
            assert!((uniform_log_density - lj - expected).abs() < 1e-10, "u = {u}");
        }
    }

    #[test]
    fn interval_log_jacobian_matches_derivative() {
        let b = Bijector::Interval { lo: -5.0, hi: 5.0 };
        for &x in &[-3.0, -0.2, 0.0, 1.7, 6.0] {
            let (_, lj) = b.forward(x);
            let fd = finite_difference_grad(|v| b.forward(v[0]).0, &[x], 1e-6)[0];
            assert!((lj - fd.ln()).abs() < 1e-7);
            let g = value_and_grad(|v| b.forward(v[0]).0, &[x]);
            assert!((lj - g.gradient[0].ln()).abs() < 1e-12);
        }
    }

    /// ∫ f(θ) dθ over model space equals ∫ f(θ(u))·|dθ/du| du over the cube.
    #[test]
    fn change_of_variables_quadrature_1d() {
        let f = |t: f64| (-(t - 0.7) * (t - 0.7) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let maps = [
            CubeMap::Logistic { scale: 2.0, shift: 0.5 },
            CubeMap::GaussianQuantile { mean: 0.0, sd: 3.0 },
        ];
        for map in maps {
            let n = 200_000;
            let total: f64 = (0..n)
                .map(|i| {
                    let u = (i as f64 + 0.5) / n as f64;
                    let (t, lj) = map.forward(u);
                    (f(t).ln() + lj).exp() / n as f64
                })
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "{map:?}: {total}");
        }
    }

    #[test]
    fn change_of_variables_quadrature_2d() {
        // Product of N(0,1) and uniform on (−2, 2); integral 1.
        let support = SupportTransform::new(
            vec![Bijector::Identity, Bijector::Interval { lo: -2.0, hi: 2.0 }],
            vec![
                CubeMap::Logistic { scale: 1.5, shift: 0.0 },
                CubeMap::Affine { lo: -2.0, hi: 2.0 },
            ],
        );
        let log_f = |t: &[f64]| -LN_SQRT_2PI - 0.5 * t[0] * t[0] - 4f64.ln();
        let n = 800;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                let (t, lj) = support.cube_forward(&u).unwrap();
                total += (log_f(&t) + lj).exp() / (n * n) as f64;
            }
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    proptest! {
        #[test]
        fn cube_round_trip(u in 1e-6..(1.0 - 1e-6), scale in 0.1..20.0f64, shift in -3.0..3.0f64) {
            let maps = [
                CubeMap::Logistic { scale, shift },
                CubeMap::Affine { lo: shift - scale, hi: shift + scale },
            ];
            for m in maps {
                let (t, _) = m.forward(u);
                prop_assert!((m.inverse(t) - u).abs() < 1e-12);
            }
        }

        #[test]
        fn unconstrained_round_trip(x in -10.0..10.0f64) {
            let b = Bijector::Interval { lo: -std::f64::consts::FRAC_PI_2, hi: std::f64::consts::FRAC_PI_2 };
            let (t, _) = b.forward(x);
            prop_assert!((b.inverse(t) - x).abs() < 1e-9);
        }
    }
}
