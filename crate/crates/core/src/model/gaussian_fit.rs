//! Per-group Gaussian fit with unknown mean and log-variance.
//!
//! θ = (μ_1..μ_k, C_1..C_k), priors μ_i, C_i ~ N(0, σ̃²) and observations
//! x_ij ~ N(μ_i, e^{C_i}) where e^{C_i} is the *variance*. The evidence oracle
//! in [`ground_truth`](crate::ground_truth) uses the same convention.

use super::transform::{Bijector, CubeMap, SupportTransform};
use super::PosteriorModel;
use crate::error::{Error, Result};
use crate::scalar::Real;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const DEFAULT_PRIOR_VARIANCE: f64 = 10.0;

const REFERENCE_CSV: &str = include_str!("../../data/gaussian_fit_reference.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFitModel<S: Real = f64> {
    data: Vec<Vec<S>>,
    prior_variance: S,
    support: SupportTransform,
}

impl<S: Real> GaussianFitModel<S> {
    /// One row per group; every row must have the same, nonzero length.
    pub fn new(data: Vec<Vec<S>>) -> Result<Self> {
        let n = data.first().map_or(0, Vec::len);
        if data.is_empty() || n == 0 {
            return Err(Error::InvalidArgument(
                "Gaussian fit needs at least one group and one observation".into(),
            ));
        }
        Self::with_prior(data, S::cst(DEFAULT_PRIOR_VARIANCE))
    }

    /// Same model with no observations; the evidence is then exactly 1.
    pub fn prior_only(k_groups: usize) -> Self {
        assert!(k_groups >= 1);
        Self::with_prior(vec![Vec::new(); k_groups], S::cst(DEFAULT_PRIOR_VARIANCE))
            .expect("empty rows are consistent")
    }

    pub fn with_prior(data: Vec<Vec<S>>, prior_variance: S) -> Result<Self> {
        let n = data.first().map_or(0, Vec::len);
        if data.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("ragged data matrix".into()));
        }
        if data.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite observation".into()));
        }
        if !(prior_variance.value() > 0.0) {
            return Err(Error::InvalidArgument("prior variance must be positive".into()));
        }
        let k = data.len();
        let scale = 4.0 * prior_variance.value().sqrt();
        let support = SupportTransform::new(
            vec![Bijector::Identity; 2 * k],
            vec![CubeMap::Logistic { scale, shift: 0.0 }; 2 * k],
        );
        Ok(Self {
            data,
            prior_variance,
            support,
        })
    }

    /// Parse one comma-separated row per group; `#` lines are comments.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map(S::cst).map_err(|e| {
                        Error::InvalidArgument(format!("line {}: {e}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<S>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn k_groups(&self) -> usize {
        self.data.len()
    }

    pub fn n_obs(&self) -> usize {
        self.data[0].len()
    }

    pub fn data(&self) -> &[Vec<S>] {
        &self.data
    }

    pub fn prior_variance(&self) -> S {
        self.prior_variance
    }
}

impl GaussianFitModel<f64> {
    /// The pinned 3 × 2 dataset shipped with the crate.
    pub fn reference() -> Self {
        Self::from_csv(REFERENCE_CSV).expect("bundled dataset parses")
    }

    /// `k_groups × n_obs` standard-normal observations from a seeded stream.
    pub fn synthetic(k_groups: usize, n_obs: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..k_groups)
            .map(|_| (0..n_obs).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Self::new(data)
    }

    /// Rows in the format read by [`from_csv`](Self::from_csv).
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.data {
            let fields: Vec<String> = row.iter().map(|x| crate::scalar::format_f64(*x)).collect();
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }
}

impl<S: Real> PosteriorModel for GaussianFitModel<S> {
    fn dim(&self) -> usize {
        2 * self.data.len()
    }

    fn parameter_names(&self) -> Vec<String> {
        let k = self.data.len();
        (1..=k)
            .map(|i| format!("mu_{i}"))
            .chain((1..=k).map(|i| format!("C_{i}")))
            .collect()
    }

    fn log_prior<T: Real>(&self, theta: &[T]) -> T {
        let var = self.prior_variance.value();
        let norm = T::cst(-0.5 * (LN_2PI + var.ln()) * theta.len() as f64);
        let sq = T::dot(theta, theta);
        norm - sq / T::cst(2.0 * var)
    }

    fn log_likelihood<T: Real>(&self, theta: &[T]) -> T {
        let k = self.data.len();
        let n = self.n_obs() as f64;
        let mut total = T::cst(-0.5 * n * k as f64 * LN_2PI);
        for (i, row) in self.data.iter().enumerate() {
            let mu = theta[i];
            let c = theta[k + i];
            let mut ss = T::zero();
            for &x in row {
                let d = T::lift(x) - mu;
                ss += d * d;
            }
            total += -T::cst(0.5 * n) * c - T::cst(0.5) * ss * (-c).exp();
        }
        total
    }

    fn support(&self) -> &SupportTransform {
        &self.support
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let normal = Normal::new(0.0, self.prior_variance.value().sqrt()).expect("positive sd");
        (0..self.dim()).map(|_| normal.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_grad, value_and_grad, Var};
    use crate::model::distributions::normal_log_pdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct term-by-term evaluation, independent of the vectorised path.
    fn direct(model: &GaussianFitModel, theta: &[f64]) -> f64 {
        let k = model.k_groups();
        let mut total = 0.0;
        for &t in theta {
            total += normal_log_pdf(t, 0.0, 10.0);
        }
        for i in 0..k {
            for &x in &model.data()[i] {
                total += normal_log_pdf(x, theta[i], theta[k + i].exp());
            }
        }
        total
    }

    #[test]
    fn symmetric_zero_case() {
        let m = GaussianFitModel::new(vec![vec![0.0]]).unwrap();
        let expected = 2.0 * normal_log_pdf(0.0, 0.0, 10.0) + normal_log_pdf(0.0, 0.0, 1.0);
        assert!((m.log_density(&[0.0f64, 0.0]) - expected).abs() < 1e-14);
    }

    #[test]
    fn matches_direct_evaluation() {
        let m = GaussianFitModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let theta: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
            let a = m.log_density(&theta);
            let b = direct(&m, &theta);
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = GaussianFitModel::reference();
        assert!(matches!(
            m.checked_log_density(&[0.0; 5]),
            Err(Error::DimensionMismatch { expected: 6, got: 5 })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = GaussianFitModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let theta: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = value_and_grad(|x: &[Var]| m.log_density(x), &theta);
            let fd = finite_difference_grad(|x| m.log_density(x), &theta, 1e-5);
            for (a, b) in g.gradient.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn reference_dataset_shape() {
        let m = GaussianFitModel::reference();
        assert_eq!((m.k_groups(), m.n_obs()), (3, 2));
        assert_eq!(m.parameter_names(), ["mu_1", "mu_2", "mu_3", "C_1", "C_2", "C_3"]);
    }

    #[test]
    fn rejects_bad_data() {
        assert!(GaussianFitModel::<f64>::new(vec![]).is_err());
        assert!(GaussianFitModel::new(vec![vec![0.0, 1.0], vec![2.0]]).is_err());
        assert!(GaussianFitModel::new(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn single_precision_agrees() {
        let m64 = GaussianFitModel::reference();
        let m32 = GaussianFitModel::<f32>::new(
            m64.data().iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect(),
        )
        .unwrap();
        let theta = [0.1, -0.2, 0.3, 0.5, -1.0, 0.0];
        let t32: Vec<f32> = theta.iter().map(|&x| x as f32).collect();
        assert!((m32.log_density(&t32) as f64 - m64.log_density(&theta)).abs() < 1e-4);
    }
}
