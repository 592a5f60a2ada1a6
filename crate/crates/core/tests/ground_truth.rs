use neutra_core::ground_truth::{
    log_evidence_at, log_evidence_oracle, marginal_contour, marginal_interval, mu_gaussian_integral,
    mu_marginal_coefficients, QuadratureGrid,
};
use neutra_core::model::{GaussianFitModel, PosteriorModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain tensor-product trapezoid of exp(log_f) over a rectangle.
fn trapezoid_2d(log_f: impl Fn(f64, f64) -> f64, x: (f64, f64, usize), y: (f64, f64, usize)) -> f64 {
    let hx = (x.1 - x.0) / (x.2 - 1) as f64;
    let hy = (y.1 - y.0) / (y.2 - 1) as f64;
    let w = |i: usize, n: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let mut total = 0.0;
    for i in 0..x.2 {
        for j in 0..y.2 {
            let (a, b) = (x.0 + hx * i as f64, y.0 + hy * j as f64);
            total += w(i, x.2) * w(j, y.2) * log_f(a, b).exp();
        }
    }
    total * hx * hy
}

#[test]
fn brute_force_matches_reduction_for_single_group() {
    let m = GaussianFitModel::new(vec![vec![0.4]]).unwrap();
    // With one datum the μ-integrand narrows to width e^{C/2}; the μ spacing
    // resolves it down to C ≈ −12, below which the prior mass is < 1e-4.
    let brute = trapezoid_2d(|mu, c| m.log_density(&[mu, c]), (-15.0, 15.0, 60_001), (-25.0, 25.0, 2001)).ln();
    let reduced = log_evidence_at(&m, &QuadratureGrid::new(-50.0, 50.0, 4001).unwrap());
    assert!((brute - reduced).abs() < 1e-4, "{brute} vs {reduced}");
}

#[test]
fn brute_force_matches_reduction_on_reference_dataset() {
    // Groups are independent, so log Z is the sum of per-group 2-D integrals.
    let m = GaussianFitModel::reference();
    let mut brute = 0.0;
    for row in m.data() {
        let g = GaussianFitModel::new(vec![row.clone()]).unwrap();
        brute += trapezoid_2d(|mu, c| g.log_density(&[mu, c]), (-30.0, 30.0, 3001), (-30.0, 30.0, 3001)).ln();
    }
    let oracle = log_evidence_oracle(&m, &QuadratureGrid::default()).log_z;
    assert!((brute - oracle).abs() < 1e-4, "{brute} vs {oracle}");
}

#[test]
fn coefficients_reproduce_exponent() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = [0.3, -1.2, 0.8];
    for _ in 0..100 {
        let c_i: f64 = rng.random_range(-3.0..3.0);
        let mu: f64 = rng.random_range(-5.0..5.0);
        let (a, b, c) = mu_marginal_coefficients(c_i, &y, 10.0);
        let direct = mu * mu / 20.0
            + c_i * c_i / 20.0
            + 0.5 * (-c_i).exp() * y.iter().map(|v| (v - mu).powi(2)).sum::<f64>();
        let poly = a * mu * mu + b * mu + c;
        assert!((poly - direct).abs() < 1e-12 * (1.0 + direct.abs()));
    }
}

#[test]
fn gaussian_integral_matches_trapezoid() {
    for (a, b, c) in [(0.5, 0.0, 0.0), (1.0, 2.0, 1.0), (3.7, -1.1, 0.4), (0.08, 0.3, -0.2)] {
        let n = 200_001;
        let h = 100.0 / (n - 1) as f64;
        let quad: f64 = (0..n)
            .map(|i| {
                let x = -50.0 + h * i as f64;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * (-(a * x * x + b * x + c)).exp()
            })
            .sum::<f64>()
            * h;
        let exact = mu_gaussian_integral(a, b, c).unwrap();
        assert!(((quad - exact) / exact).abs() < 1e-9, "{quad} vs {exact}");
    }
}

#[test]
fn reference_evidence_independent_value() {
    // Adaptive Gauss–Kronrod quadrature of the same factorized integral.
    let r = log_evidence_oracle(&GaussianFitModel::reference(), &QuadratureGrid::default());
    assert!((r.log_z - (-11.003_566)).abs() < 1e-4, "{}", r.log_z);
}

#[test]
fn nested_refinements_converge_monotonically_beyond_knee() {
    let m = GaussianFitModel::reference();
    let r = log_evidence_oracle(&m, &QuadratureGrid::new(-50.0, 50.0, 241).unwrap());
    let knee = r.knee.unwrap();
    // Halving the spacing keeps every node, so the error must shrink.
    let finest = log_evidence_at(&m, &QuadratureGrid::new(-50.0, 50.0, 1921).unwrap());
    let mut n = knee;
    let mut errors = Vec::new();
    while n <= 481 {
        let v = log_evidence_at(&m, &QuadratureGrid::new(-50.0, 50.0, n).unwrap());
        errors.push((v - finest).abs());
        n = 2 * n - 1;
    }
    assert!(errors.len() >= 3);
    assert!(errors.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{errors:?}");
}

#[test]
fn contour_mass_self_consistency() {
    let m = GaussianFitModel::reference();
    let coarse = marginal_contour(&m, 0, 3, 301, &[0.68, 0.95]).unwrap();
    let fine = marginal_contour(&m, 0, 3, 601, &[]).unwrap();
    for &(rho, level) in &coarse.levels {
        let rescaled = level * (coarse.log_scale - fine.log_scale).exp();
        let mass = fine.mass_above(rescaled);
        assert!((mass - rho).abs() < 0.005, "ρ = {rho}: {mass}");
    }
}

#[test]
fn intervals_are_nested() {
    let m = GaussianFitModel::reference();
    let (a, b) = marginal_interval(&m, 0, 0.68).unwrap();
    let (c, d) = marginal_interval(&m, 0, 0.95).unwrap();
    assert!(c < a && a < b && b < d);
}

