//! Quadrature oracle for the Gaussian-fit model.
//!
//! With variance e^{C_i}, group i contributes the exponent
//! E_i(μ) = a μ² + b μ + c with
//!
//! a = ½(1/σ̃² + n e^{−C}), b = −e^{−C} Σ y, c = C²/(2σ̃²) + ½ e^{−C} Σ y²,
//!
//! times e^{−nC/2}. The μ integrals are Gaussian; each C_i is integrated with
//! the trapezoid rule. Groups are independent, so the tensor-product rule over
//! (C_1..C_k) factorizes into a product of one-dimensional rules.

use crate::error::{Error, Result};
use crate::model::GaussianFitModel;
use crate::scalar::{format_f64, log_sum_exp};
use std::f64::consts::PI;
use std::fmt::Write as _;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Successive-refinement tolerance on log Z.
pub const CONVERGENCE_TOL: f64 = 0.01;
/// Mass-fraction tolerance for contour levels.
pub const CONTOUR_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub lo: f64,
    pub hi: f64,
    pub points_per_dim: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self {
            lo: -50.0,
            hi: 50.0,
            points_per_dim: 151,
        }
    }
}

impl QuadratureGrid {
    pub fn new(lo: f64, hi: f64, points_per_dim: usize) -> Result<Self> {
        if !(lo < hi) || points_per_dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs lo < hi and at least 2 points, got [{lo}, {hi}] × {points_per_dim}"
            )));
        }
        Ok(Self { lo, hi, points_per_dim })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points_per_dim - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.points_per_dim).map(|i| self.lo + h * i as f64).collect()
    }

    fn with_points(&self, points_per_dim: usize) -> Self {
        Self { points_per_dim, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceOracleResult {
    pub log_z: f64,
    pub grid: QuadratureGrid,
    /// (points per dimension, log Z) for every resolution from 2 up to the grid's.
    pub trace: Vec<(usize, f64)>,
    /// Whether the last two refinements agree within [`CONVERGENCE_TOL`].
    pub converged: bool,
    /// Smallest resolution from which every finer value lies within
    /// [`CONVERGENCE_TOL`] of the final one.
    pub knee: Option<usize>,
}

impl EvidenceOracleResult {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("points_per_dim,log_z\n");
        for (n, lz) in &self.trace {
            let _ = writeln!(s, "{n},{}", format_f64(*lz));
        }
        s
    }
}

/// Coefficients (a, b, c) of the group exponent in μ.
pub fn mu_marginal_coefficients(c_i: f64, y: &[f64], prior_variance: f64) -> (f64, f64, f64) {
    let n = y.len() as f64;
    let inv = (-c_i).exp();
    let sum: f64 = y.iter().sum();
    let sum_sq: f64 = y.iter().map(|v| v * v).sum();
    let a = 0.5 * (1.0 / prior_variance + n * inv);
    let b = -inv * sum;
    let c = c_i * c_i / (2.0 * prior_variance) + 0.5 * inv * sum_sq;
    (a, b, c)
}

/// ∫ exp(−(aμ² + bμ + c)) dμ = √(π/a)·exp((b² − 4ac)/(4a)).
pub fn mu_gaussian_integral(a: f64, b: f64, c: f64) -> Result<f64> {
    Ok(log_mu_gaussian_integral(a, b, c)?.exp())
}

pub fn log_mu_gaussian_integral(a: f64, b: f64, c: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("Gaussian integral needs a > 0, got {a}")));
    }
    Ok(0.5 * (PI / a).ln() + (b * b - 4.0 * a * c) / (4.0 * a))
}

/// Log trapezoid sum of exp(log_f) on a uniform grid of spacing h.
pub fn log_trapezoid(log_f: &[f64], h: f64) -> f64 {
    let n = log_f.len();
    let terms: Vec<f64> = log_f
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == 0 || i + 1 == n { v - 2f64.ln() } else { v })
        .collect();
    log_sum_exp(&terms) + h.ln()
}

struct Group<'a> {
    y: &'a [f64],
    var: f64,
}

impl Group<'_> {
    /// log of e^{−nC/2}·e^{−E(μ)} at (μ, C).
    fn log_joint(&self, mu: f64, c: f64) -> f64 {
        let ss: f64 = self.y.iter().map(|v| (v - mu).powi(2)).sum();
        -0.5 * self.y.len() as f64 * c - 0.5 * (mu * mu + c * c) / self.var - 0.5 * (-c).exp() * ss
    }

    /// μ integrated out analytically.
    ///
    /// Uses min E = C²/(2σ̃²) + ½e^{−C}·Σ(y − ȳ)² + ½(Σy)²/n · (1/σ̃²)/(e^C/σ̃² + n),
    /// which avoids the cancellation in b² − 4ac when e^{−C} is large.
    fn log_c_marginal(&self, c: f64) -> f64 {
        let n = self.y.len() as f64;
        let p = 1.0 / self.var;
        let a = 0.5 * (p + n * (-c).exp());
        let mut e_min = 0.5 * p * c * c;
        if n > 0.0 {
            let s: f64 = self.y.iter().sum();
            let mean = s / n;
            let ss: f64 = self.y.iter().map(|v| (v - mean).powi(2)).sum();
            e_min += 0.5 * (-c).exp() * ss + 0.5 * s * s / n * p / (p * c.exp() + n);
        }
        -0.5 * n * c + 0.5 * (PI / a).ln() - e_min
    }
}

fn groups<'a>(model: &'a GaussianFitModel) -> Vec<Group<'a>> {
    let var = model.prior_variance();
    model.data().iter().map(|y| Group { y, var }).collect()
}

fn log_prefactor(model: &GaussianFitModel) -> f64 {
    let k = model.k_groups() as f64;
    let n = model.data()[0].len() as f64;
    -0.5 * n * k * LN_2PI - k * (LN_2PI + model.prior_variance().ln())
}

/// log Z at one resolution.
pub fn log_evidence_at(model: &GaussianFitModel, grid: &QuadratureGrid) -> f64 {
    let nodes = grid.nodes();
    let h = grid.step();
    let mut total = log_prefactor(model);
    for g in groups(model) {
        let vals: Vec<f64> = nodes.iter().map(|&c| g.log_c_marginal(c)).collect();
        total += log_trapezoid(&vals, h);
    }
    total
}

/// log Z with a convergence trace over all resolutions up to the grid's.
pub fn log_evidence_oracle(model: &GaussianFitModel, grid: &QuadratureGrid) -> EvidenceOracleResult {
    let trace: Vec<(usize, f64)> = (2..=grid.points_per_dim)
        .map(|n| (n, log_evidence_at(model, &grid.with_points(n))))
        .collect();
    let log_z = trace.last().expect("at least 2 points").1;
    let converged =
        trace.len() >= 2 && (trace[trace.len() - 1].1 - trace[trace.len() - 2].1).abs() < CONVERGENCE_TOL;
    let mut knee = None;
    for &(n, lz) in trace.iter().rev() {
        if (lz - log_z).abs() < CONVERGENCE_TOL {
            knee = Some(n);
        } else {
            break;
        }
    }
    EvidenceOracleResult {
        log_z,
        grid: *grid,
        trace,
        converged,
        knee: if converged { knee } else { None },
    }
}

/// Which coordinate of which group a parameter index refers to.
fn locate(model: &GaussianFitModel, j: usize) -> Result<(usize, bool)> {
    let k = model.k_groups();
    if j >= 2 * k {
        return Err(Error::DimensionMismatch { expected: 2 * k, got: j + 1 });
    }
    Ok((j % k, j < k))
}

const C_NODES: usize = 4001;

fn c_nodes() -> (Vec<f64>, f64) {
    let grid = QuadratureGrid::default().with_points(C_NODES);
    (grid.nodes(), grid.step())
}

/// Unnormalized log marginal density of parameter `j` at each of `xs`.
fn log_marginal_at(model: &GaussianFitModel, j: usize, xs: &[f64]) -> Result<Vec<f64>> {
    let (group, is_mu) = locate(model, j)?;
    let g = &groups(model)[group];
    if !is_mu {
        return Ok(xs.iter().map(|&c| g.log_c_marginal(c)).collect());
    }
    let (cs, h) = c_nodes();
    Ok(xs
        .iter()
        .map(|&mu| {
            let vals: Vec<f64> = cs.iter().map(|&c| g.log_joint(mu, c)).collect();
            log_trapezoid(&vals, h)
        })
        .collect())
}

/// Range holding all but a negligible tail of parameter `j`'s marginal.
fn marginal_support(model: &GaussianFitModel, j: usize) -> Result<(f64, f64)> {
    let coarse = QuadratureGrid::new(-50.0, 50.0, 2001)?;
    let xs = coarse.nodes();
    let lv = log_marginal_at(model, j, &xs)?;
    let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..xs.len()).filter(|&i| lv[i] > max - 40.0).collect();
    let h = coarse.step();
    let lo = (xs[keep[0]] - 2.0 * h).max(-50.0);
    let hi = (xs[*keep.last().expect("max is kept")] + 2.0 * h).min(50.0);
    Ok((lo, hi))
}

/// Normalized marginal density of parameter `j` on `points` nodes.
pub fn marginal_density(model: &GaussianFitModel, j: usize, points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = marginal_support(model, j)?;
    let grid = QuadratureGrid::new(lo, hi, points)?;
    let xs = grid.nodes();
    let lv = log_marginal_at(model, j, &xs)?;
    let log_norm = log_trapezoid(&lv, grid.step());
    Ok((xs, lv.iter().map(|v| (v - log_norm).exp()).collect()))
}

/// Equal-tailed interval of parameter `j` from the quadrature marginal.
pub fn marginal_interval(model: &GaussianFitModel, j: usize, rho: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("interval mass must lie in (0, 1), got {rho}")));
    }
    let (xs, dens) = marginal_density(model, j, 4001)?;
    let h = xs[1] - xs[0];
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
    }
    let total = cdf[cdf.len() - 1];
    let quantile = |q: f64| {
        let target = q * total;
        let i = cdf.partition_point(|&v| v < target).clamp(1, xs.len() - 1);
        let t = (target - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
        xs[i - 1] + t * h
    };
    Ok((quantile(0.5 * (1.0 - rho)), quantile(0.5 * (1.0 + rho))))
}

/// Two-parameter marginal on a grid, with super-level contour levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourField {
    pub names: (String, String),
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// F[i][j] at (u[i], v[j]), scaled so the maximum is 1.
    pub f: Vec<Vec<f64>>,
    /// log of the scale removed from F.
    pub log_scale: f64,
    /// (mass ρ, level ς) pairs.
    pub levels: Vec<(f64, f64)>,
    /// Bisection failures; the affected levels fall back to the grid crossing.
    pub diagnostics: Vec<String>,
}

impl ContourField {
    /// Mass fraction of the super-level set {F ≥ level}.
    pub fn mass_above(&self, level: f64) -> f64 {
        super_level_mass(&self.f, level)
    }

    pub fn contains(&self, level: f64, u: f64, v: f64) -> bool {
        self.value_at(u, v) >= level
    }

    /// Bilinear interpolation of F; zero outside the grid.
    pub fn value_at(&self, u: f64, v: f64) -> f64 {
        let locate = |xs: &[f64], x: f64| -> Option<(usize, f64)> {
            if x < xs[0] || x > xs[xs.len() - 1] {
                return None;
            }
            let h = xs[1] - xs[0];
            let i = (((x - xs[0]) / h) as usize).min(xs.len() - 2);
            Some((i, (x - xs[i]) / h))
        };
        let (Some((i, s)), Some((j, t))) = (locate(&self.u, u), locate(&self.v, v)) else {
            return 0.0;
        };
        let f = &self.f;
        (1.0 - s) * (1.0 - t) * f[i][j] + s * (1.0 - t) * f[i + 1][j] + (1.0 - s) * t * f[i][j + 1] + s * t * f[i + 1][j + 1]
    }

    pub fn csv(&self) -> String {
        let mut s = format!("{},{},f\n", self.names.0, self.names.1);
        for (i, u) in self.u.iter().enumerate() {
            for (j, v) in self.v.iter().enumerate() {
                let _ = writeln!(s, "{},{},{}", format_f64(*u), format_f64(*v), format_f64(self.f[i][j]));
            }
        }
        s
    }

    pub fn levels_csv(&self) -> String {
        let mut s = String::from("mass,level,mass_check\n");
        for &(rho, level) in &self.levels {
            let _ = writeln!(s, "{},{},{}", format_f64(rho), format_f64(level), format_f64(self.mass_above(level)));
        }
        s
    }
}

fn super_level_mass(f: &[Vec<f64>], level: f64) -> f64 {
    let mut above = 0.0;
    let mut total = 0.0;
    for row in f {
        for &x in row {
            total += x;
            if x >= level {
                above += x;
            }
        }
    }
    above / total
}

/// Smallest grid value whose super-level set holds at least `rho`.
fn crossing_level(f: &[Vec<f64>], rho: f64) -> f64 {
    let mut cells: Vec<f64> = f.iter().flatten().copied().collect();
    cells.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = cells.iter().sum();
    let mut acc = 0.0;
    for &c in &cells {
        acc += c;
        if acc >= rho * total {
            return c;
        }
    }
    0.0
}

/// Level ς whose super-level set holds mass fraction `rho`, by bisection.
pub fn contour_level(f: &[Vec<f64>], rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("contour mass must lie in (0, 1], got {rho}")));
    }
    if rho == 1.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, f.iter().flatten().copied().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = super_level_mass(f, mid);
        if (m - rho).abs() < CONTOUR_TOL {
            return Ok(mid);
        }
        if m > rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Bracketing(format!(
        "no level within {CONTOUR_TOL} of mass {rho}; refine the grid"
    )))
}

/// Joint marginal of parameters `ju`, `jv` on a `points × points` grid over
/// their marginal supports, plus levels for each mass in `masses`.
pub fn marginal_contour(
    model: &GaussianFitModel,
    ju: usize,
    jv: usize,
    points: usize,
    masses: &[f64],
) -> Result<ContourField> {
    if ju == jv {
        return Err(Error::InvalidArgument("contour needs two distinct parameters".into()));
    }
    let (gu, mu_u) = locate(model, ju)?;
    let (gv, _) = locate(model, jv)?;
    let (ulo, uhi) = marginal_support(model, ju)?;
    let (vlo, vhi) = marginal_support(model, jv)?;
    let u = QuadratureGrid::new(ulo, uhi, points)?.nodes();
    let v = QuadratureGrid::new(vlo, vhi, points)?.nodes();
    let log_f: Vec<Vec<f64>> = if gu == gv {
        let g = &groups(model)[gu];
        u.iter()
            .map(|&a| {
                v.iter()
                    .map(|&b| if mu_u { g.log_joint(a, b) } else { g.log_joint(b, a) })
                    .collect()
            })
            .collect()
    } else {
        let lu = log_marginal_at(model, ju, &u)?;
        let lv = log_marginal_at(model, jv, &v)?;
        lu.iter().map(|a| lv.iter().map(|b| a + b).collect()).collect()
    };
    let max = log_f.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<Vec<f64>> = log_f.iter().map(|r| r.iter().map(|x| (x - max).exp()).collect()).collect();
    let mut levels = Vec::with_capacity(masses.len());
    let mut diagnostics = Vec::new();
    for &rho in masses {
        let level = match contour_level(&f, rho) {
            Ok(l) => l,
            Err(Error::Bracketing(msg)) => {
                diagnostics.push(msg);
                crossing_level(&f, rho)
            }
            Err(e) => return Err(e),
        };
        levels.push((rho, level));
    }
    let names = model_names(model, ju, jv);
    Ok(ContourField {
        names,
        u,
        v,
        f,
        log_scale: max,
        levels,
        diagnostics,
    })
}

fn model_names(model: &GaussianFitModel, ju: usize, jv: usize) -> (String, String) {
    use crate::model::PosteriorModel;
    let names = model.parameter_names();
    (names[ju].clone(), names[jv].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_examples() {
        let (a, b, c) = mu_marginal_coefficients(1.3, &[], 10.0);
        assert_eq!(a, 0.05);
        assert_eq!(b, 0.0);
        assert!((c - 1.69 / 20.0).abs() < 1e-15);
        let (a, b, _) = mu_marginal_coefficients(0.0, &[0.0, 0.0], 10.0);
        assert!((a - 1.05).abs() < 1e-15);
        assert_eq!(b, 0.0);
    }

    #[test]
    fn gaussian_integral_examples() {
        assert!((mu_gaussian_integral(0.5, 0.0, 0.0).unwrap() - (2.0 * PI).sqrt()).abs() < 1e-14);
        assert!((mu_gaussian_integral(1.0, 2.0, 1.0).unwrap() - PI.sqrt()).abs() < 1e-14);
        assert!(mu_gaussian_integral(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn no_data_gives_unit_evidence() {
        let m = GaussianFitModel::prior_only(1);
        let r = log_evidence_oracle(&m, &QuadratureGrid::default());
        assert!(r.log_z.abs() < 1e-6, "{}", r.log_z);
    }

    #[test]
    fn coarse_grid_is_flagged() {
        let m = GaussianFitModel::reference();
        let r = log_evidence_oracle(&m, &QuadratureGrid::new(-50.0, 50.0, 2).unwrap());
        assert!(!r.converged);
        assert_eq!(r.knee, None);
    }

    #[test]
    fn full_mass_level_is_zero() {
        let f = vec![vec![0.2, 1.0], vec![0.5, 0.1]];
        assert_eq!(contour_level(&f, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn csv_round_trips() {
        let m = GaussianFitModel::reference();
        let r = log_evidence_oracle(&m, &QuadratureGrid::new(-50.0, 50.0, 20).unwrap());
        let csv = r.trace_csv();
        let last = csv.lines().last().unwrap();
        let value: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(value, r.log_z);
    }
}
