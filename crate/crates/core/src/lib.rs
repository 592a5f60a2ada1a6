//! Bayesian evidence and posterior estimation: nested sampling, NUTS, and
//! neural-transport reparameterization with block neural autoregressive flows.
//!
//! Numerical code is generic over [`Real`]; the aliases below fix the common
//! `f64` instantiations.

pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod ground_truth;
pub mod model;
pub mod nested;
pub mod nuts;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ParameterVector = Vec<f64>;
pub type GaussianFit = model::GaussianFitModel<f64>;
pub type Bnaf = flow::BnafFlow;
pub type NeutraGaussianFit<'a> = flow::NeutraDensity<'a, model::Unconstrained<'a, GaussianFit>>;
