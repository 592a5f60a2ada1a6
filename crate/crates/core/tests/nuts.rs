use neutra_core::diagnostics::{mcmc_ess, rhat};
use neutra_core::model::LogDensity;
use neutra_core::nuts::{nuts_step, run_nuts, ChainState, NutsConfig};
use neutra_core::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Zero-mean Gaussian with the given standard deviations and one correlation
/// between the first two coordinates.
struct Gauss {
    sd: Vec<f64>,
    rho: f64,
}

impl Gauss {
    fn standard(k: usize) -> Self {
        Self { sd: vec![1.0; k], rho: 0.0 }
    }
}

impl LogDensity for Gauss {
    fn dim(&self) -> usize {
        self.sd.len()
    }
    fn log_density<T: Real>(&self, x: &[T]) -> T {
        let z: Vec<T> = x.iter().zip(&self.sd).map(|(&xi, &s)| xi / T::cst(s)).collect();
        let mut q = T::dot(&z, &z);
        if self.rho != 0.0 {
            let (a, b) = (z[0], z[1]);
            let r = T::cst(self.rho);
            q = q - a * a - b * b + (a * a - T::cst(2.0) * r * a * b + b * b) / T::cst(1.0 - self.rho * self.rho);
        }
        -q * T::cst(0.5)
    }
    fn to_model(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

fn config(n_chains: usize, n_warmup: usize, n_samples: usize, seed: u64) -> NutsConfig {
    NutsConfig {
        n_chains,
        n_warmup,
        n_samples,
        seed,
        ..NutsConfig::default()
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

#[test]
fn standard_normal_moments() {
    let run = run_nuts(&Gauss::standard(1), &config(1, 1000, 10_000, 1)).unwrap();
    let chains = run.column(0);
    let (m, v) = mean_var(&chains[0]);
    let ess = mcmc_ess(&chains).unwrap();
    let mcse = (v / ess).sqrt();
    assert!(m.abs() < 4.0 * mcse, "mean {m}, mcse {mcse}");
    assert!((v - 1.0).abs() < 0.05, "variance {v}");
}

#[test]
fn hard_wall_is_never_crossed() {
    struct Walled;
    impl LogDensity for Walled {
        fn dim(&self) -> usize {
            1
        }
        fn log_density<T: Real>(&self, x: &[T]) -> T {
            if x[0].value() < -0.5 {
                T::neg_infinity()
            } else {
                -x[0] * x[0] * T::cst(0.5)
            }
        }
        fn to_model(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
    }
    let d = Walled;
    let run = run_nuts(&d, &config(2, 500, 3000, 2)).unwrap();
    for chain in &run.chains {
        for draw in chain {
            assert!(draw[0] >= -0.5 && d.log_density(draw).is_finite());
        }
    }

    let mut state = ChainState::new(&d, vec![-0.4], 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        nuts_step(&d, &mut state, 10, 1000.0, &mut rng);
        assert!(state.log_density.is_finite());
        assert!(state.position[0] >= -0.5);
    }
}

#[test]
fn correlated_gaussian_correlation() {
    let d = Gauss {
        sd: vec![1.0, 1.0],
        rho: 0.9,
    };
    let run = run_nuts(&d, &config(4, 1000, 25_000, 3)).unwrap();
    let x: Vec<f64> = run.column(0).concat();
    let y: Vec<f64> = run.column(1).concat();
    let (mx, vx) = mean_var(&x);
    let (my, vy) = mean_var(&y);
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64;
    let r = cov / (vx * vy).sqrt();
    assert!((r - 0.9).abs() < 0.02, "{r}");
}

#[test]
fn adapted_acceptance_near_target() {
    let run = run_nuts(&Gauss::standard(10), &config(4, 1000, 2000, 4)).unwrap();
    let mean = run.accept_stat.iter().sum::<f64>() / run.accept_stat.len() as f64;
    assert!((0.7..=0.9).contains(&mean), "{mean}");
}

#[test]
fn mass_matrix_matches_anisotropic_scales() {
    let d = Gauss {
        sd: vec![1.0, 100.0],
        rho: 0.0,
    };
    let run = run_nuts(&d, &config(2, 1500, 10, 5)).unwrap();
    for m in &run.inv_mass_diag {
        let ratio = m[1] / m[0];
        assert!((5e3..=2e4).contains(&ratio), "{ratio}");
    }
}

#[test]
fn many_chains_agree() {
    let run = run_nuts(&Gauss::standard(2), &config(20, 500, 1000, 6)).unwrap();
    for j in 0..2 {
        let r = rhat(&run.column(j)).unwrap();
        assert!(r < 1.01, "R-hat {r}");
    }
}

#[test]
fn no_divergences_on_standard_normal() {
    let run = run_nuts(&Gauss::standard(2), &config(4, 1000, 25_000, 7)).unwrap();
    assert_eq!(run.total_divergences(), 0);
}

#[test]
fn one_step_preserves_a_skewed_target() {
    // p(x) = exp(x − eˣ), CDF 1 − exp(−eˣ).
    struct Gumbel;
    impl LogDensity for Gumbel {
        fn dim(&self) -> usize {
            1
        }
        fn log_density<T: Real>(&self, x: &[T]) -> T {
            x[0] - x[0].exp()
        }
        fn to_model(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
    }
    let cdf = |x: f64| 1.0 - (-x.exp()).exp();
    let n_bins = 20;
    let n = 20_000;
    let mut counts = vec![0usize; n_bins];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..n {
        let u: f64 = rng.random();
        let x0 = (-(1.0 - u).ln()).ln();
        let mut state = ChainState::new(&Gumbel, vec![x0], 0.4);
        nuts_step(&Gumbel, &mut state, 10, 1000.0, &mut rng);
        let bin = ((cdf(state.position[0]) * n_bins as f64) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    let expect = n as f64 / n_bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 99.9% quantile of χ² with 19 degrees of freedom.
    assert!(chi2 < 43.82, "χ² = {chi2}, counts {counts:?}");
}

#[test]
fn chain_results_do_not_depend_on_chain_count() {
    let d = Gauss::standard(2);
    let a = run_nuts(&d, &config(2, 200, 300, 9)).unwrap();
    let b = run_nuts(&d, &config(4, 200, 300, 9)).unwrap();
    assert_eq!(a.chains[..], b.chains[..2]);
}
