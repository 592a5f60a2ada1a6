//! Elementary log-density primitives.

use crate::error::{Error, Result};
use crate::scalar::Real;
use statrs::function::factorial::ln_factorial;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// log N(x; mean, variance).
#[inline]
pub fn normal_log_pdf<T: Real>(x: T, mean: T, variance: T) -> T {
    let d = x - mean;
    -T::cst(LN_SQRT_2PI) - T::cst(0.5) * variance.ln() - d * d / (T::cst(2.0) * variance)
}

/// Poisson log-mass `n ln λ − λ − ln n!`.
pub fn poisson_log_pmf(n: u64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Poisson mean must be positive and finite, got {lambda}"
        )));
    }
    Ok(poisson_log_pmf_unchecked(n, lambda))
}

pub(crate) fn poisson_log_pmf_unchecked<T: Real>(n: u64, lambda: T) -> T {
    T::cst(n as f64) * lambda.ln() - lambda - T::cst(ln_factorial(n))
}

/// Log-density of a normal truncated below at `lower`, including the
/// normalization `−ln(1 − Φ((lower − mean)/σ))`. Returns −∞ for `x < lower`.
pub fn truncnorm_log_pdf(x: f64, mean: f64, sigma: f64, lower: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "truncated-normal sigma must be positive, got {sigma}"
        )));
    }
    Ok(truncnorm_log_pdf_unchecked(x, mean, sigma, lower))
}

pub(crate) fn truncnorm_log_pdf_unchecked<T: Real>(x: T, mean: f64, sigma: f64, lower: f64) -> T {
    if x.value() < lower {
        return T::neg_infinity();
    }
    let z = (x - T::cst(mean)) / T::cst(sigma);
    let tail = 1.0 - ((lower - mean) / sigma).std_normal_cdf();
    -T::cst(0.5) * z * z - T::cst(LN_SQRT_2PI + sigma.ln() + tail.ln())
}

/// ln σ(x), stable for large |x|.
#[inline]
pub(crate) fn log_sigmoid<T: Real>(x: T) -> T {
    -softplus(-x)
}

/// ln(1 + eˣ), stable for large |x|.
#[inline]
pub(crate) fn softplus<T: Real>(x: T) -> T {
    if x.value() > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x.value() >= 0.0 {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
