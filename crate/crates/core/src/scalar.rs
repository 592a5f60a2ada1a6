//! The scalar abstraction every density, transform and flow is written against.
//!
//! [`Real`] is implemented for `f32`, `f64` and the reverse-mode variable
//! [`Var`](crate::autodiff::Var), so the same log-density code yields plain
//! values, single-precision values, or exact gradients.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps};
use std::fmt::{Debug, Display};

/// Floating point scalar usable by the models, flows and quadrature.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssignOps + Default + Debug + Display + Send + Sync + 'static
{
    /// Lift an `f64` constant into this scalar type.
    fn cst(x: f64) -> Self;

    /// Primal value as `f64`.
    fn value(self) -> f64;

    /// Gauss error function.
    fn erf(self) -> Self;

    /// Standard normal cumulative distribution function, Φ(x).
    fn std_normal_cdf(self) -> Self {
        (Self::one() + (self * Self::FRAC_1_SQRT_2()).erf()) * Self::cst(0.5)
    }

    /// Σ a_i b_i. Overridden by [`Var`](crate::autodiff::Var) to record a single node.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = Self::zero();
        for (&x, &y) in a.iter().zip(b) {
            acc += x * y;
        }
        acc
    }

    /// Σ x_i.
    fn sum(xs: &[Self]) -> Self {
        let mut acc = Self::zero();
        for &x in xs {
            acc += x;
        }
        acc
    }

    /// Lift a value of another `Real` type by its primal value.
    fn lift<S: Real>(s: S) -> Self {
        Self::cst(s.value())
    }
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
    #[inline]
    fn std_normal_cdf(self) -> Self {
        0.5 * libm::erfc(-self * std::f64::consts::FRAC_1_SQRT_2)
    }
}

impl Real for f32 {
    #[inline]
    fn cst(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn value(self) -> f64 {
        self as f64
    }
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self as f64) as f32
    }
    #[inline]
    fn std_normal_cdf(self) -> Self {
        (self as f64).std_normal_cdf() as f32
    }
}

/// Numerically stable log(Σ exp(x_i)) over plain values. Returns −∞ for an
/// empty slice or when every term is −∞.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// log(exp(a) + exp(b)).
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let max = a.max(b);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + ((a - max).exp() + (b - max).exp()).ln()
}

/// Scientific notation with 17 significant digits; parses back exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi<T: Real>(x: T) -> T {
        x.std_normal_cdf()
    }

    #[test]
    fn normal_cdf_reference_values() {
        // Φ(−1) = 0.158655253931457051414767454367962...
        assert!((phi(-1.0_f64) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((phi(0.0_f64) - 0.5).abs() < 1e-16);
        // Φ(2) = 0.977249868051820792799...
        assert!((phi(2.0_f64) - 0.977_249_868_051_820_8).abs() < 1e-15);
        assert!((phi(-1.0_f32) - 0.158_655_25).abs() < 1e-6);
    }

    #[test]
    fn erf_matches_series() {
        // Maclaurin series of erf converges quickly for |x| ≤ 1.5.
        for &x in &[-1.5, -0.7, -0.1, 0.0, 0.3, 1.0, 1.5] {
            let mut term = x;
            let mut sum = x;
            for n in 1..60 {
                term *= -x * x / n as f64;
                sum += term / (2 * n + 1) as f64;
            }
            let series = sum * 2.0 / std::f64::consts::PI.sqrt();
            assert!((series - Real::erf(x)).abs() < 1e-13, "x = {x}");
        }
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_add_exp(-1e300, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn formatted_values_round_trip() {
        for x in [0.1, -11.003_566_123_456_789, 1e-300, 6.02e23, f64::MIN_POSITIVE] {
            let s = format_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            assert_eq!(s.split('e').next().unwrap().trim_start_matches('-').len(), 18);
        }
    }
}
