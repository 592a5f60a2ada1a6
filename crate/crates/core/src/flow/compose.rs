use super::BnafFlow;
use crate::model::distributions::softplus;
use crate::model::{CubeDensity, LogDensity};
use crate::scalar::Real;

/// ln p̃(f(z)) + ln|∂f/∂z|, with `target` already on ℝ^k.
pub fn neutra_log_density<D: LogDensity, T: Real>(flow: &BnafFlow, target: &D, z: &[T]) -> T {
    let (x, log_det) = flow.forward(z);
    let lp = target.log_density(&x);
    if lp.value() == f64::NEG_INFINITY {
        return lp;
    }
    lp + log_det
}

/// The latent-space density seen by NeuTra samplers.
pub struct NeutraDensity<'a, D> {
    flow: &'a BnafFlow,
    target: D,
}

impl<'a, D: LogDensity> NeutraDensity<'a, D> {
    pub fn new(flow: &'a BnafFlow, target: D) -> Self {
        assert_eq!(flow.dim(), target.dim(), "flow and target dimensions differ");
        Self { flow, target }
    }

    pub fn flow(&self) -> &BnafFlow {
        self.flow
    }

    pub fn target(&self) -> &D {
        &self.target
    }

    /// The same density behind a logistic map from the unit cube.
    pub fn on_cube(&self, scale: f64) -> LatentCube<&Self> {
        LatentCube::new(self, scale)
    }
}

impl<D: LogDensity> LogDensity for NeutraDensity<'_, D> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density<T: Real>(&self, z: &[T]) -> T {
        neutra_log_density(self.flow, &self.target, z)
    }

    fn to_model(&self, z: &[f64]) -> Vec<f64> {
        self.target.to_model(&self.flow.forward(z).0)
    }
}

/// A density on ℝ^k seen from the unit cube through z = s·logit(u).
///
/// The cube log-Jacobian is added, so nested sampling over the cube reports
/// the evidence of the inner density unchanged.
pub struct LatentCube<D> {
    inner: D,
    scale: f64,
}

impl<D: LogDensity> LatentCube<D> {
    pub fn new(inner: D, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "latent scale must be positive");
        Self { inner, scale }
    }

    /// `(z, ln|dz/du|)`.
    pub fn to_latent(&self, u: &[f64]) -> (Vec<f64>, f64) {
        let mut log_jac = 0.0;
        let z = u
            .iter()
            .map(|&ui| {
                let x = (ui / (1.0 - ui)).ln();
                log_jac += self.scale.ln() + softplus(x) + softplus(-x);
                self.scale * x
            })
            .collect();
        (z, log_jac)
    }
}

impl<D: LogDensity> CubeDensity for LatentCube<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        let (z, log_jac) = self.to_latent(u);
        if z.iter().any(|x| !x.is_finite()) {
            return f64::NEG_INFINITY;
        }
        self.inner.log_density(&z) + log_jac
    }

    fn to_model(&self, u: &[f64]) -> Vec<f64> {
        self.inner.to_model(&self.to_latent(u).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal;

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            1
        }
        fn log_density<T: Real>(&self, x: &[T]) -> T {
            -x[0] * x[0] * T::cst(0.5) - T::cst(0.5 * std::f64::consts::TAU.ln())
        }
        fn to_model(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
    }

    #[test]
    fn latent_cube_integrates_to_inner_mass() {
        let cube = LatentCube::new(StdNormal, 1.0);
        let n = 200_000;
        let h = 1.0 / n as f64;
        let total: f64 = (0..n).map(|i| cube.log_density(&[(i as f64 + 0.5) * h]).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn cube_boundary_is_minus_infinity() {
        let cube = LatentCube::new(StdNormal, 1.0);
        assert_eq!(cube.log_density(&[0.0]), f64::NEG_INFINITY);
        assert_eq!(cube.log_density(&[1.0]), f64::NEG_INFINITY);
    }
}
