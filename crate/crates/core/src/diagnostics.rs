//! Effective sample sizes, weighted intervals and benchmark metrics.

use crate::error::{Error, Result};
use crate::nested::NsRunResult;
use crate::nuts::NutsRunResult;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Samples with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSampleSet {
    pub samples: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl WeightedSampleSet {
    pub fn new(samples: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if samples.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                got: weights.len(),
            });
        }
        check_normalized(&weights)?;
        Ok(Self { samples, weights })
    }

    pub fn unweighted(samples: Vec<Vec<f64>>) -> Self {
        let n = samples.len();
        Self {
            samples,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn from_ns(result: &NsRunResult) -> Self {
        Self {
            samples: result.samples.clone(),
            weights: result.weights.clone(),
        }
    }

    /// All chains pooled with equal weights.
    pub fn from_nuts(result: &NutsRunResult) -> Self {
        Self::unweighted(result.chains.iter().flatten().cloned().collect())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }
}

fn check_normalized(weights: &[f64]) -> Result<()> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "weights must be nonnegative and sum to 1 (sum = {total})"
        )));
    }
    Ok(())
}

/// Kish effective sample size N / D_eff, D_eff = 1 + (1/N)·Σ(N w_i − 1)².
pub fn kish_ess(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no weights".into()));
    }
    check_normalized(weights)?;
    let n = weights.len() as f64;
    let d_eff = 1.0 + weights.iter().map(|w| (n * w - 1.0).powi(2)).sum::<f64>() / n;
    Ok(n / d_eff)
}

fn validate_chains(chains: &[Vec<f64>]) -> Result<usize> {
    let n = chains.first().map_or(0, Vec::len);
    if chains.is_empty() || n < 4 {
        return Err(Error::UndefinedEss("need at least one chain of 4 draws".into()));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::UndefinedEss("chains differ in length".into()));
    }
    if chains.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::UndefinedEss("non-finite draw".into()));
    }
    let first = chains[0][0];
    if chains.iter().flatten().all(|&x| x == first) {
        return Err(Error::UndefinedEss("constant chain".into()));
    }
    Ok(n)
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let half = chains[0].len() / 2;
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        // Odd lengths drop the middle draw.
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of pooled fractional ranks, ties averaged.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let flat: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = flat.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && flat[order[j + 1]] == flat[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25)))
        .collect();
    z.chunks(n).map(<[f64]>::to_vec).collect()
}

/// Multi-chain ESS with Geyer's initial positive and monotone sequences.
fn ess_raw(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let acov = |t: usize| -> f64 {
        let mut total = 0.0;
        for (c, mu) in chains.iter().zip(&means) {
            let mut s = 0.0;
            for i in 0..n - t {
                s += (c[i] - mu) * (c[i + t] - mu);
            }
            total += s / n as f64;
        }
        total / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let grand = means.iter().sum::<f64>() / m as f64;
        var_plus += means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    if !(var_plus > 0.0) {
        return Err(Error::UndefinedEss("zero variance".into()));
    }
    let rho = |t: usize| 1.0 - (mean_var - acov(t)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 3 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t.saturating_sub(2).max(1).min(n - 1);
    if even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho_hat[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho_hat[..=max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    Ok(total / tau)
}

/// Bulk effective sample size of one parameter over M chains of N draws:
/// split chains, rank-normalize, then N_eff = MN/τ.
pub fn mcmc_ess(chains: &[Vec<f64>]) -> Result<f64> {
    validate_chains(chains)?;
    ess_raw(&rank_normalize(&split(chains)))
}

/// Rank-normalized split R-hat.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    validate_chains(chains)?;
    let z = rank_normalize(&split(chains));
    let m = z.len() as f64;
    let n = z[0].len() as f64;
    let means: Vec<f64> = z.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = z
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    Ok((((n - 1.0) / n * w + b / n) / w).sqrt())
}

/// Weighted quantile by linear interpolation on the midpoint empirical CDF.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            got: weights.len(),
        });
    }
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .filter(|&(_, w)| w > 0.0)
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let distinct = pairs.windows(2).filter(|p| p[0].0 != p[1].0).count() + 1;
    if pairs.is_empty() || distinct < 2 {
        return Err(Error::InvalidArgument("need at least two distinct samples".into()));
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut cum = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for &(x, w) in &pairs {
        let mid = (cum + 0.5 * w) / total;
        cum += w;
        if q <= mid {
            return Ok(match prev {
                None => x,
                Some((px, pm)) => px + (x - px) * (q - pm) / (mid - pm),
            });
        }
        prev = Some((x, mid));
    }
    Ok(pairs.last().expect("nonempty").0)
}

/// Equal-tailed interval holding mass `rho` for parameter `j`.
pub fn equal_tailed_interval(set: &WeightedSampleSet, j: usize, rho: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("interval mass must lie in (0, 1), got {rho}")));
    }
    let values = set.column(j);
    let lo = weighted_quantile(&values, &set.weights, 0.5 * (1.0 - rho))?;
    let hi = weighted_quantile(&values, &set.weights, 0.5 * (1.0 + rho))?;
    Ok((lo, hi))
}

/// Table row for one run: cost per effective sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: String,
    pub ess: f64,
    pub n_evals: u64,
    pub wall_time_s: f64,
    pub wall_time_per_ess: f64,
    pub evals_per_ess: f64,
    /// Absent for nested sampling.
    pub n_divergences: Option<usize>,
    pub divergences_per_ess: Option<f64>,
}

pub enum SamplerRun<'a> {
    Ns(&'a NsRunResult),
    Nuts(&'a NutsRunResult),
}

/// Kish ESS of the NS weights.
pub fn ns_ess(result: &NsRunResult) -> Result<f64> {
    kish_ess(&result.weights)
}

/// Minimum bulk ESS over all parameters.
pub fn nuts_ess(result: &NutsRunResult) -> Result<f64> {
    let k = result.chains.first().and_then(|c| c.first()).map_or(0, Vec::len);
    if k == 0 {
        return Err(Error::UndefinedEss("no draws".into()));
    }
    let mut min = f64::INFINITY;
    for j in 0..k {
        min = min.min(mcmc_ess(&result.column(j))?);
    }
    Ok(min)
}

pub fn assemble_metrics(method: &str, run: SamplerRun<'_>, wall_time_s: f64, ess: f64) -> Result<RunMetrics> {
    if !(ess > 0.0) {
        return Err(Error::UndefinedEss(format!("ESS must be positive, got {ess}")));
    }
    let (n_evals, n_divergences) = match run {
        SamplerRun::Ns(r) => (r.n_likelihood_evals, None),
        SamplerRun::Nuts(r) => (r.n_gradient_evals, Some(r.total_divergences())),
    };
    Ok(RunMetrics {
        method: method.to_string(),
        ess,
        n_evals,
        wall_time_s,
        wall_time_per_ess: wall_time_s / ess,
        evals_per_ess: n_evals as f64 / ess,
        n_divergences,
        divergences_per_ess: n_divergences.map(|d| d as f64 / ess),
    })
}
