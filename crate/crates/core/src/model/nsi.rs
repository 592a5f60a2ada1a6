//! Neutrino non-standard-interaction model: eight parameters (six flavor
//! strengths plus two direction angles), a Poisson nuclear-recoil count and a
//! truncated-normal electron-recoil ratio.
//!
//! The recoil rates come from a [`RatePlugin`]. The crate ships
//! [`SurrogateRate`], a cheap closed form with the right qualitative shape,
//! in place of a full solar-neutrino rate computation.

use super::distributions::{poisson_log_pmf_unchecked, truncnorm_log_pdf_unchecked};
use super::transform::{Bijector, CubeMap, SupportTransform};
use super::PosteriorModel;
use crate::scalar::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

pub const FLAVOR_PAIRS: [&str; 6] = ["ee", "emu", "etau", "mumu", "mutau", "tautau"];

const EPS_BOUND: f64 = 5.0;

/// Point in the spherical parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsiParameters<T = f64> {
    pub eps: [T; 6],
    /// Proton-versus-electron angle, in (−π/2, π/2).
    pub phi_angle: T,
    /// sin η, in (−1, 1).
    pub sin_eta: T,
}

impl<T: Real> NsiParameters<T> {
    pub fn from_slice(theta: &[T]) -> Self {
        let mut eps = [T::zero(); 6];
        eps.copy_from_slice(&theta[..6]);
        Self {
            eps,
            phi_angle: theta[6],
            sin_eta: theta[7],
        }
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut v = self.eps.to_vec();
        v.push(self.phi_angle);
        v.push(self.sin_eta);
        v
    }

    /// Inside the open uniform-prior box.
    pub fn in_support(&self) -> bool {
        self.eps.iter().all(|e| e.value().abs() < EPS_BOUND)
            && self.phi_angle.value().abs() < FRAC_PI_2
            && self.sin_eta.value().abs() < 1.0
    }
}

/// Proton, electron and neutron couplings per flavor pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsiCouplings<T = f64> {
    pub eps_p: [T; 6],
    pub eps_e: [T; 6],
    pub eps_n: [T; 6],
}

/// ε^p = √5 ε cos η cos φ, ε^e = √5 ε cos η sin φ, ε^n = √5 ε sin η.
pub fn nsi_sphere_to_cartesian<T: Real>(p: &NsiParameters<T>) -> NsiCouplings<T> {
    let sqrt5 = T::cst(5f64.sqrt());
    // η ∈ (−π/2, π/2), so cos η = √(1 − sin²η) ≥ 0.
    let cos_eta = (T::one() - p.sin_eta * p.sin_eta).sqrt();
    let (sin_phi, cos_phi) = (p.phi_angle.sin(), p.phi_angle.cos());
    let wp = sqrt5 * cos_eta * cos_phi;
    let we = sqrt5 * cos_eta * sin_phi;
    let wn = sqrt5 * p.sin_eta;
    NsiCouplings {
        eps_p: p.eps.map(|e| wp * e),
        eps_e: p.eps.map(|e| we * e),
        eps_n: p.eps.map(|e| wn * e),
    }
}

/// Expected recoil counts as a function of the Cartesian couplings.
///
/// At zero couplings an implementation must return the Standard-Model values
/// (`nr_rate` = λ_SM, `er_ratio` = 1). Both outputs must be finite and ≥ 0.
pub trait RatePlugin: Send + Sync {
    /// Expected nuclear-recoil signal count λ_NR.
    fn nr_rate<T: Real>(&self, c: &NsiCouplings<T>) -> T;
    /// Electron-recoil count relative to the Standard Model, r_ER.
    fn er_ratio<T: Real>(&self, c: &NsiCouplings<T>) -> T;
}

/// Closed-form stand-in for the solar-neutrino rate calculation:
///
/// λ_NR = λ_SM·(w_p ε̄^p + w_n ε̄^n + 1)², r_ER = (w_e ε̄^e + 1)²
///
/// with ε̄^x = Σ f_αβ ε^x_αβ the flavor-weighted mean coupling. With the
/// default weights the nuclear term vanishes along η = −35° (at φ = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateRate {
    pub lambda_sm: f64,
    pub w_p: f64,
    pub w_n: f64,
    pub w_e: f64,
    pub flavor_weights: [f64; 6],
}

impl Default for SurrogateRate {
    fn default() -> Self {
        let cancel = 35f64.to_radians();
        Self {
            lambda_sm: 0.62,
            w_p: cancel.sin(),
            w_n: cancel.cos(),
            w_e: 1.0,
            flavor_weights: [1.0 / 6.0; 6],
        }
    }
}

impl SurrogateRate {
    fn mean<T: Real>(&self, eps: &[T; 6]) -> T {
        let w = self.flavor_weights.map(T::cst);
        T::dot(&w, eps)
    }
}

impl RatePlugin for SurrogateRate {
    fn nr_rate<T: Real>(&self, c: &NsiCouplings<T>) -> T {
        let a = T::cst(self.w_p) * self.mean(&c.eps_p) + T::cst(self.w_n) * self.mean(&c.eps_n)
            + T::one();
        T::cst(self.lambda_sm) * a * a
    }

    fn er_ratio<T: Real>(&self, c: &NsiCouplings<T>) -> T {
        let a = T::cst(self.w_e) * self.mean(&c.eps_e) + T::one();
        a * a
    }
}

/// Fixed measurement constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NsiObservation {
    pub n_nr_observed: u64,
    pub lambda_bkg: f64,
    pub er_ratio_mean: f64,
    pub er_ratio_sigma: f64,
}

impl Default for NsiObservation {
    fn default() -> Self {
        Self {
            n_nr_observed: 6,
            lambda_bkg: 5.38,
            er_ratio_mean: 1.72,
            er_ratio_sigma: 1.72,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NsiModel<P = SurrogateRate> {
    pub observation: NsiObservation,
    pub plugin: P,
    support: SupportTransform,
}

impl<P: RatePlugin> NsiModel<P> {
    pub fn new(observation: NsiObservation, plugin: P) -> Self {
        let mut unconstrained = vec![Bijector::Interval { lo: -EPS_BOUND, hi: EPS_BOUND }; 6];
        let mut cube = vec![CubeMap::Affine { lo: -EPS_BOUND, hi: EPS_BOUND }; 6];
        unconstrained.push(Bijector::Interval { lo: -FRAC_PI_2, hi: FRAC_PI_2 });
        cube.push(CubeMap::Affine { lo: -FRAC_PI_2, hi: FRAC_PI_2 });
        unconstrained.push(Bijector::Interval { lo: -1.0, hi: 1.0 });
        cube.push(CubeMap::Affine { lo: -1.0, hi: 1.0 });
        Self {
            observation,
            plugin,
            support: SupportTransform::new(unconstrained, cube),
        }
    }

    /// Poisson log-mass of the observed NR count.
    pub fn nr_term<T: Real>(&self, c: &NsiCouplings<T>) -> T {
        let lambda = T::cst(self.observation.lambda_bkg) + self.plugin.nr_rate(c);
        poisson_log_pmf_unchecked(self.observation.n_nr_observed, lambda)
    }

    /// Truncated-normal log-density of the predicted ER ratio.
    pub fn er_term<T: Real>(&self, c: &NsiCouplings<T>) -> T {
        let o = &self.observation;
        truncnorm_log_pdf_unchecked(self.plugin.er_ratio(c), o.er_ratio_mean, o.er_ratio_sigma, 0.0)
    }
}

impl Default for NsiModel<SurrogateRate> {
    fn default() -> Self {
        Self::new(NsiObservation::default(), SurrogateRate::default())
    }
}

/// Uniform priors + Poisson NR term + truncated-normal ER term.
pub fn nsi_log_density<P: RatePlugin>(p: &NsiParameters, obs: &NsiObservation, plugin: &P) -> f64 {
    NsiModel::new(*obs, plugin).log_density(&p.to_vec())
}

impl<P: RatePlugin> RatePlugin for &P {
    fn nr_rate<T: Real>(&self, c: &NsiCouplings<T>) -> T {
        (**self).nr_rate(c)
    }
    fn er_ratio<T: Real>(&self, c: &NsiCouplings<T>) -> T {
        (**self).er_ratio(c)
    }
}

impl<P: RatePlugin> PosteriorModel for NsiModel<P> {
    fn dim(&self) -> usize {
        8
    }

    fn parameter_names(&self) -> Vec<String> {
        FLAVOR_PAIRS
            .iter()
            .map(|f| format!("eps_{f}"))
            .chain(["phi_angle".to_string(), "sin_eta".to_string()])
            .collect()
    }

    fn log_prior<T: Real>(&self, theta: &[T]) -> T {
        if !NsiParameters::from_slice(theta).in_support() {
            return T::neg_infinity();
        }
        T::cst(-(6.0 * (2.0 * EPS_BOUND).ln() + PI.ln() + 2f64.ln()))
    }

    fn log_likelihood<T: Real>(&self, theta: &[T]) -> T {
        let couplings = nsi_sphere_to_cartesian(&NsiParameters::from_slice(theta));
        self.nr_term(&couplings) + self.er_term(&couplings)
    }

    fn support(&self) -> &SupportTransform {
        &self.support
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v: Vec<f64> = (0..6).map(|_| rng.random_range(-EPS_BOUND..EPS_BOUND)).collect();
        v.push(rng.random_range(-FRAC_PI_2..FRAC_PI_2));
        v.push(rng.random_range(-1.0..1.0));
        v
    }
}
