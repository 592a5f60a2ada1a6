use neutra_core::diagnostics::kish_ess;
use neutra_core::model::{CubeFn, CubeMap, OnCube};
use neutra_core::nested::{run_ns, NsConfig, NsRunResult};
use neutra_core::GaussianFit;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn run<D: neutra_core::model::CubeDensity>(d: &D, n_live: usize, seed: u64) -> NsRunResult {
    let cfg = NsConfig {
        n_live,
        seed,
        ..NsConfig::default()
    };
    run_ns(d, &cfg).unwrap()
}

/// N(0, 1) prior per coordinate through the Gaussian quantile map, times a
/// Gaussian likelihood N(m; θ, s²). Z = Π N(m; 0, 1 + s²).
fn conjugate(m: [f64; 2], s: f64) -> (impl neutra_core::model::CubeDensity, f64) {
    let map = CubeMap::GaussianQuantile { mean: 0.0, sd: 1.0 };
    let d = CubeFn::new(2, move |u: &[f64]| {
        u.iter()
            .zip(&m)
            .map(|(&ui, &mi)| {
                let theta = map.forward(ui).0;
                -0.5 * ((theta - mi) / s).powi(2) - 0.5 * LN_2PI - s.ln()
            })
            .sum()
    });
    let var = 1.0 + s * s;
    let log_z = m.iter().map(|mi| -0.5 * mi * mi / var - 0.5 * (LN_2PI + var.ln())).sum();
    (d, log_z)
}

#[test]
fn error_bars_are_calibrated_on_a_linear_likelihood() {
    let d = CubeFn::new(1, |u: &[f64]| (2.0 * u[0]).ln());
    let runs: Vec<NsRunResult> = (0..16).map(|s| run(&d, 400, 1000 + s)).collect();
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.log_z).sum::<f64>() / n;
    let sd = (runs.iter().map(|r| (r.log_z - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let reported = runs.iter().map(|r| r.log_z_err).sum::<f64>() / n;
    let ratio = sd / reported;
    assert!((0.5..=2.0).contains(&ratio), "scatter {sd} vs reported {reported}");
}

#[test]
fn doubling_live_points_reduces_error() {
    let (d, truth) = conjugate([0.8, -1.5], 0.3);
    let mean_err = |n_live: usize| {
        (0..32)
            .map(|s| (run(&d, n_live, 500 + s).log_z - truth).abs())
            .sum::<f64>()
            / 32.0
    };
    let (coarse, fine) = (mean_err(100), mean_err(200));
    assert!(fine < coarse, "{fine} !< {coarse}");
}

#[test]
fn conjugate_evidence_within_reported_error() {
    let (d, truth) = conjugate([0.3, 2.0], 0.5);
    let r = run(&d, 500, 3);
    assert!((r.log_z - truth).abs() < 3.0 * r.log_z_err, "{} vs {truth} ± {}", r.log_z, r.log_z_err);
}

#[test]
fn dead_points_have_nondecreasing_likelihood() {
    let (d, _) = conjugate([0.0, 1.0], 0.4);
    let r = run(&d, 200, 4);
    let dead = &r.log_likelihoods[..r.n_iterations];
    assert!(dead.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn weights_are_normalized_and_kish_is_reproducible() {
    let (d, _) = conjugate([0.5, 0.5], 0.7);
    let a = run(&d, 150, 8);
    let b = run(&d, 150, 8);
    assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(kish_ess(&a.weights).unwrap(), kish_ess(&b.weights).unwrap());
}

#[test]
fn gaussian_fit_evidence_matches_oracle() {
    use neutra_core::ground_truth::{log_evidence_at, QuadratureGrid};
    let model = GaussianFit::reference();
    let oracle = log_evidence_at(&model, &QuadratureGrid::new(-50.0, 50.0, 241).unwrap());
    let r = run(&OnCube(&model), 400, 11);
    assert!(
        (r.log_z - oracle).abs() < 3.0 * r.log_z_err,
        "{} ± {} vs {oracle}",
        r.log_z,
        r.log_z_err
    );
}
