use super::{BnafFlow, FlowConfig};
use crate::autodiff::{value_and_grad, Var};
use crate::error::{Error, Result};
use crate::model::LogDensity;
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const MAX_NAN_EPOCHS: usize = 50;
const ELBO_TAIL: usize = 100;

/// Optimizer and schedule for ELBO training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Initial gain of each stack's final layer.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            batch: 30,
            learning_rate: 1e-2,
            final_learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            init_scale: super::DEFAULT_INIT_SCALE,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Cosine decay from `learning_rate` to `final_learning_rate`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let t = if self.epochs > 1 {
            epoch as f64 / (self.epochs - 1) as f64
        } else {
            1.0
        };
        self.final_learning_rate
            + 0.5 * (self.learning_rate - self.final_learning_rate) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Batch ELBO per epoch; NaN where the epoch was skipped.
    pub elbo_per_epoch: Vec<f64>,
    /// Mean of the last 100 finite epochs.
    pub final_mean_elbo: f64,
}

impl TrainingTrace {
    fn new(elbo_per_epoch: Vec<f64>) -> Self {
        let tail: Vec<f64> = elbo_per_epoch
            .iter()
            .rev()
            .filter(|e| e.is_finite())
            .take(ELBO_TAIL)
            .copied()
            .collect();
        let final_mean_elbo = if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        Self {
            elbo_per_epoch,
            final_mean_elbo,
        }
    }

    /// Trailing moving average with window `w`, starting at index `w − 1`.
    pub fn moving_average(&self, w: usize) -> Vec<f64> {
        assert!(w >= 1);
        self.elbo_per_epoch.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// One ELBO term at a standard-normal draw z.
fn elbo_term<D: LogDensity, T: Real>(flow: &BnafFlow, params: &[T], target: &D, z: &[T]) -> T {
    let (x, log_det) = flow.forward_with(params, z);
    let lp = target.log_density(&x);
    let log_q = -T::cst(0.5) * T::dot(z, z) - T::cst(LN_SQRT_2PI * z.len() as f64);
    lp + log_det - log_q
}

fn draw_batch<R: Rng + ?Sized>(rng: &mut R, batch: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..batch)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Monte Carlo ELBO over `batch` latent draws.
///
/// A non-finite mean signals that the batch is unusable for a training step.
pub fn elbo_estimate<D: LogDensity, R: Rng + ?Sized>(
    flow: &BnafFlow,
    target: &D,
    batch: usize,
    rng: &mut R,
) -> Result<ElboEstimate> {
    if batch == 0 {
        return Err(Error::InvalidArgument("ELBO batch must be at least 1".into()));
    }
    if flow.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: flow.dim(),
            got: target.dim(),
        });
    }
    let terms: Vec<f64> = draw_batch(rng, batch, flow.dim())
        .iter()
        .map(|z| elbo_term(flow, flow.flow_params(), target, z))
        .collect();
    let n = batch as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let std_err = if batch > 1 && mean.is_finite() {
        (terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::NAN
    };
    Ok(ElboEstimate { mean, std_err })
}

/// Stochastic gradient ascent on the ELBO with Adam.
///
/// Deterministic for a given seed: per-sample gradients are computed in
/// parallel but summed in batch order.
pub fn train_neutra<D: LogDensity>(
    target: &D,
    flow_config: FlowConfig,
    config: &TrainConfig,
) -> Result<(BnafFlow, TrainingTrace)> {
    if config.epochs == 0 || config.batch == 0 {
        return Err(Error::InvalidArgument("epochs and batch must be at least 1".into()));
    }
    let dim = target.dim();
    let mut flow = BnafFlow::with_init_scale(dim, flow_config, config.init_scale, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let n = flow.n_params();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut steps = 0i32;
    let mut trace = Vec::with_capacity(config.epochs);
    let mut nan_run = 0;

    for epoch in 0..config.epochs {
        let batch = draw_batch(&mut rng, config.batch, dim);
        let records: Vec<_> = batch
            .par_iter()
            .map(|z| {
                let f = &flow;
                value_and_grad(
                    |p: &[Var]| {
                        let zc: Vec<Var> = z.iter().map(|&x| Var::constant(x)).collect();
                        elbo_term(f, p, target, &zc)
                    },
                    f.flow_params(),
                )
            })
            .collect();
        if records.iter().any(|r| r.divergent) {
            trace.push(f64::NAN);
            nan_run += 1;
            if nan_run >= MAX_NAN_EPOCHS {
                return Err(Error::TrainingFailure(format!(
                    "ELBO non-finite for {MAX_NAN_EPOCHS} consecutive epochs (last epoch {epoch})"
                )));
            }
            continue;
        }
        nan_run = 0;
        let scale = 1.0 / config.batch as f64;
        let mut grad = vec![0.0; n];
        let mut elbo = 0.0;
        for r in &records {
            elbo += r.value * scale;
            for (g, &d) in grad.iter_mut().zip(&r.gradient) {
                *g += d * scale;
            }
        }
        trace.push(elbo);

        steps += 1;
        let lr = config.learning_rate_at(epoch);
        let c1 = 1.0 - config.beta1.powi(steps);
        let c2 = 1.0 - config.beta2.powi(steps);
        let params = &mut flow.flow_params;
        for j in 0..n {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * grad[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * grad[j] * grad[j];
            params[j] += lr * (m[j] / c1) / ((v[j] / c2).sqrt() + config.adam_eps);
        }
    }
    flow.refresh();
    Ok((flow, TrainingTrace::new(trace)))
}
