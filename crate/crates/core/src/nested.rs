//! Nested sampling on the unit cube with likelihood-constrained slice sampling.
//!
//! The cube density already includes the prior-to-cube Jacobian, so the
//! prior is uniform on (0,1)^k and the density plays the role of L.

use crate::error::{Error, Result};
use crate::model::CubeDensity;
use crate::scalar::{log_add_exp, log_sum_exp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const MIN_BRACKET: f64 = 1e-12;
const MAX_DIRECTION_FAILURES: usize = 100;
const MAX_PRIOR_REDRAWS: usize = 100_000;
const MAX_STEP_OUT: usize = 64;
const WIDTH_FACTOR: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NsConfig {
    pub n_live: usize,
    /// Stop once the live points can add less than this fraction of Z.
    pub frac_remain: f64,
    /// Slice steps per replacement; `None` means 2k.
    pub slice_steps: Option<usize>,
    /// Draw each shrinkage factor from Beta(N, 1) instead of using its mean.
    pub stochastic_shrinkage: bool,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            n_live: 1600,
            frac_remain: 0.01,
            slice_steps: None,
            stochastic_shrinkage: false,
            max_iterations: 10_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LivePointSet {
    pub points: Vec<Vec<f64>>,
    pub log_likelihoods: Vec<f64>,
    /// Nominal live-point count N; the set is empty after a plateau retires it.
    pub n_live: usize,
}

impl LivePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn lowest(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.log_likelihoods.iter().enumerate() {
            if l < self.log_likelihoods[best] {
                best = i;
            }
        }
        best
    }

    fn max_log_l(&self) -> f64 {
        self.log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadPoint {
    pub point: Vec<f64>,
    pub log_l: f64,
    /// log ΔV of the shell this point was retired with.
    pub log_volume_shell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub log_z: f64,
    pub log_z_err: f64,
    /// Kullback–Leibler information H in nats.
    pub information: f64,
    /// Normalized weights, dead points first then live points.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsRunResult {
    pub log_z: f64,
    pub log_z_err: f64,
    pub information: f64,
    /// Posterior samples in model space.
    pub samples: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
    pub n_likelihood_evals: u64,
    pub n_iterations: usize,
}

/// Σ ΔV_i L_i over dead points plus (V_end/N)·Σ L_j over the final live set.
///
/// Log-space accumulation; the information H is accumulated in the same pass
/// and gives `log_z_err = √(H/N)`.
pub fn accumulate_evidence(
    dead: &[DeadPoint],
    live: &LivePointSet,
    log_v_end: f64,
) -> Result<Evidence> {
    if dead.is_empty() {
        return Err(Error::InvalidArgument("empty dead-point sequence".into()));
    }
    let log_live_shell = log_v_end - (live.n_live as f64).ln();
    let log_w: Vec<f64> = dead
        .iter()
        .map(|d| d.log_volume_shell + d.log_l)
        .chain(live.log_likelihoods.iter().map(|&l| log_live_shell + l))
        .collect();
    let log_l = dead.iter().map(|d| d.log_l).chain(live.log_likelihoods.iter().copied());

    let log_z = log_sum_exp(&log_w);
    let mut weights = Vec::with_capacity(log_w.len());
    let mut mean_log_l = 0.0;
    for (lw, ll) in log_w.iter().zip(log_l) {
        let p = (lw - log_z).exp();
        if p > 0.0 {
            mean_log_l += p * ll;
        }
        weights.push(p);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let information = (mean_log_l - log_z).max(0.0);
    let log_z_err = (information / live.n_live as f64).sqrt().max(f64::MIN_POSITIVE);
    Ok(Evidence {
        log_z,
        log_z_err,
        information,
        weights,
    })
}

/// Per-iteration covariance of the live cube points; sets slice widths.
#[derive(Debug, Clone)]
pub struct SliceScale {
    cov: Vec<Vec<f64>>,
}

impl SliceScale {
    pub fn from_live(live: &LivePointSet) -> Self {
        let k = live.points[0].len();
        let n = live.len() as f64;
        let mut mean = vec![0.0; k];
        for p in &live.points {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x / n;
            }
        }
        let mut cov = vec![vec![0.0; k]; k];
        for p in &live.points {
            for i in 0..k {
                let di = p[i] - mean[i];
                for j in 0..=i {
                    cov[i][j] += di * (p[j] - mean[j]) / n;
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                cov[j][i] = cov[i][j];
            }
        }
        Self { cov }
    }

    fn width(&self, d: &[f64]) -> f64 {
        let mut q = 0.0;
        for (i, row) in self.cov.iter().enumerate() {
            q += d[i] * crate::scalar::Real::dot(row.as_slice(), d);
        }
        (WIDTH_FACTOR * q.max(0.0).sqrt()).max(1e-6)
    }
}

fn in_cube(u: &[f64]) -> bool {
    u.iter().all(|&x| x > 0.0 && x < 1.0)
}

/// Range of t for which u + t·d stays in the closed cube.
fn cube_extent(u: &[f64], d: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (&x, &di) in u.iter().zip(d) {
        if di > 0.0 {
            lo = lo.max(-x / di);
            hi = hi.min((1.0 - x) / di);
        } else if di < 0.0 {
            lo = lo.max((1.0 - x) / di);
            hi = hi.min(-x / di);
        }
    }
    (lo, hi)
}

/// log L at x + t·d, with −∞ outside the open cube or for NaN.
fn line_eval<D: CubeDensity>(density: &D, x: &[f64], d: &[f64], t: f64, y: &mut [f64], evals: &mut u64) -> f64 {
    for i in 0..x.len() {
        y[i] = x[i] + t * d[i];
    }
    if !in_cube(y) {
        return f64::NEG_INFINITY;
    }
    *evals += 1;
    let l = density.log_density(y);
    if l.is_nan() {
        f64::NEG_INFINITY
    } else {
        l
    }
}

fn draw_prior<D: CubeDensity, R: Rng>(density: &D, rng: &mut R, evals: &mut u64) -> Result<(Vec<f64>, f64)> {
    let k = density.dim();
    for _ in 0..MAX_PRIOR_REDRAWS {
        let u: Vec<f64> = (0..k).map(|_| open01(rng)).collect();
        let l = density.log_density(&u);
        *evals += 1;
        if l.is_finite() {
            return Ok((u, l));
        }
    }
    Err(Error::SamplerFailure(format!(
        "no finite likelihood in {MAX_PRIOR_REDRAWS} prior draws"
    )))
}

fn open01<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let x: f64 = rng.random();
        if x > 0.0 {
            return x;
        }
    }
}

/// Draw a point from the prior restricted to log L > `threshold`.
///
/// With `threshold = −∞` this is a plain prior draw. Otherwise a live point
/// above the threshold seeds `steps` slice-sampling moves along random
/// directions. Returns the point, its log-likelihood and the evaluation count.
pub fn replace_lowest<D: CubeDensity, R: Rng>(
    live: &LivePointSet,
    threshold: f64,
    density: &D,
    scale: &SliceScale,
    steps: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64, u64)> {
    if live.len() < 2 {
        return Err(Error::InvalidArgument("need at least two live points".into()));
    }
    let mut evals = 0;
    if threshold == f64::NEG_INFINITY {
        let (u, l) = draw_prior(density, rng, &mut evals)?;
        return Ok((u, l, evals));
    }
    let above: Vec<usize> = (0..live.len()).filter(|&i| live.log_likelihoods[i] > threshold).collect();
    if above.is_empty() {
        return Err(Error::SamplerFailure("no live point above the threshold".into()));
    }
    let start = above[rng.random_range(0..above.len())];
    let mut x = live.points[start].clone();
    let mut lx = live.log_likelihoods[start];
    let k = x.len();
    let mut d = vec![0.0; k];
    let mut y = vec![0.0; k];
    let mut failures = 0;
    let mut done = 0;
    'steps: while done < steps {
        for di in d.iter_mut() {
            *di = StandardNormal.sample(rng);
        }
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v /= norm);

        let (t_min, t_max) = cube_extent(&x, &d);
        let w = scale.width(&d);
        let r: f64 = rng.random();
        let mut a = (-r * w).max(t_min);
        let mut b = ((1.0 - r) * w).min(t_max);
        for _ in 0..MAX_STEP_OUT {
            if a <= t_min || line_eval(density, &x, &d, a, &mut y, &mut evals) <= threshold {
                break;
            }
            a = (a - w).max(t_min);
        }
        for _ in 0..MAX_STEP_OUT {
            if b >= t_max || line_eval(density, &x, &d, b, &mut y, &mut evals) <= threshold {
                break;
            }
            b = (b + w).min(t_max);
        }
        loop {
            if b - a < MIN_BRACKET {
                failures += 1;
                if failures >= MAX_DIRECTION_FAILURES {
                    return Err(Error::SamplerFailure(format!(
                        "slice bracket collapsed {failures} times"
                    )));
                }
                continue 'steps;
            }
            let t = a + (b - a) * rng.random::<f64>();
            let l = line_eval(density, &x, &d, t, &mut y, &mut evals);
            if l > threshold {
                x.copy_from_slice(&y);
                lx = l;
                done += 1;
                break;
            }
            if t < 0.0 {
                a = t;
            } else {
                b = t;
            }
        }
    }
    assert!(lx > threshold, "replacement violates the likelihood constraint");
    Ok((x, lx, evals))
}

/// Run nested sampling to the remaining-evidence halting criterion.
pub fn run_ns<D: CubeDensity>(density: &D, config: &NsConfig) -> Result<NsRunResult> {
    let k = density.dim();
    let n = config.n_live;
    if k == 0 {
        return Err(Error::InvalidArgument("zero-dimensional density".into()));
    }
    if n < 2 * k || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_live = {n} is below 2k = {}",
            2 * k
        )));
    }
    if !(config.frac_remain > 0.0 && config.frac_remain < 1.0) {
        return Err(Error::InvalidArgument("frac_remain must lie in (0, 1)".into()));
    }
    let steps = config.slice_steps.unwrap_or(2 * k).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let mut evals = 0u64;
    let mut live = LivePointSet {
        points: Vec::with_capacity(n),
        log_likelihoods: Vec::with_capacity(n),
        n_live: n,
    };
    for _ in 0..n {
        let (u, l) = draw_prior(density, &mut rng, &mut evals)?;
        live.points.push(u);
        live.log_likelihoods.push(l);
    }

    let log_frac = config.frac_remain.ln();
    let refresh = (n / 10).max(1);
    let mut dead: Vec<DeadPoint> = Vec::new();
    let mut log_v = 0.0;
    let mut log_z = f64::NEG_INFINITY;
    let mut scale = SliceScale::from_live(&live);
    let mut iteration = 0;
    loop {
        if live.max_log_l() + log_v - log_z < log_frac || iteration >= config.max_iterations {
            break;
        }
        let worst = live.lowest();
        let threshold = live.log_likelihoods[worst];
        if threshold == live.max_log_l() {
            // Plateau: no point beats the threshold. Retire the whole set
            // with equal shares of the remaining volume.
            let log_shell = log_v - (n as f64).ln();
            for (point, log_l) in live.points.drain(..).zip(live.log_likelihoods.drain(..)) {
                dead.push(DeadPoint {
                    point,
                    log_l,
                    log_volume_shell: log_shell,
                });
            }
            log_v = f64::NEG_INFINITY;
            break;
        }
        let shrink = if config.stochastic_shrinkage {
            open01(&mut rng).ln() / n as f64
        } else {
            -1.0 / n as f64
        };
        let log_v_next = log_v + shrink;
        // ΔV = V_{i−1} − V_i
        let log_shell = log_v + (-(shrink.exp_m1())).ln();
        log_z = log_add_exp(log_z, log_shell + threshold);

        if iteration % refresh == 0 {
            scale = SliceScale::from_live(&live);
        }
        let mut step_rng = ChaCha8Rng::seed_from_u64(config.seed);
        step_rng.set_stream(iteration as u64 + 1);
        let (u, l, e) = replace_lowest(&live, threshold, density, &scale, steps, &mut step_rng)?;
        evals += e;

        let old = std::mem::replace(&mut live.points[worst], u);
        live.log_likelihoods[worst] = l;
        dead.push(DeadPoint {
            point: old,
            log_l: threshold,
            log_volume_shell: log_shell,
        });
        log_v = log_v_next;
        iteration += 1;
    }

    let evidence = accumulate_evidence(&dead, &live, log_v)?;
    let mut samples = Vec::with_capacity(evidence.weights.len());
    let mut weights = Vec::with_capacity(evidence.weights.len());
    let mut log_likelihoods = Vec::with_capacity(evidence.weights.len());
    let all = dead
        .iter()
        .map(|d| (&d.point, d.log_l))
        .chain(live.points.iter().zip(live.log_likelihoods.iter().copied()));
    for ((u, l), &w) in all.zip(&evidence.weights) {
        if w > 0.0 {
            samples.push(density.to_model(u));
            weights.push(w);
            log_likelihoods.push(l);
        }
    }
    Ok(NsRunResult {
        log_z: evidence.log_z,
        log_z_err: evidence.log_z_err,
        information: evidence.information,
        samples,
        weights,
        log_likelihoods,
        n_likelihood_evals: evals,
        n_iterations: iteration,
    })
}
