//! Block neural autoregressive flows and the neural-transport densities built
//! from them.
//!
//! A flow is a chain of stacks. Each stack maps z ∈ ℝ^k to
//! `exp(a) ⊙ (z + g(z))`, where `g` is a masked feed-forward network whose
//! weight matrices are block lower-triangular with positive diagonal blocks,
//! so `g_i` depends on `z_1..z_i` only and increases in `z_i`. Consecutive
//! stacks are joined by a reversal of the coordinates.
//!
//! The log-determinant is carried through the network as per-coordinate
//! log-derivatives of each hidden block with respect to its own input
//! coordinate; the dense Jacobian is never formed.

mod compose;
mod io;
mod train;

pub use compose::{neutra_log_density, LatentCube, NeutraDensity};
pub use io::{read_weights, write_weights, FLOW_MAGIC, FLOW_VERSION};
pub use train::{elbo_estimate, train_neutra, ElboEstimate, TrainConfig, TrainingTrace};

use crate::error::{Error, Result};
use crate::model::distributions::softplus;
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture of a flow: one list of hidden block sizes per stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub n_stacks: usize,
    pub hidden_block_dims: Vec<usize>,
}

impl FlowConfig {
    pub fn new(n_stacks: usize, hidden_block_dims: Vec<usize>) -> Self {
        Self {
            n_stacks,
            hidden_block_dims,
        }
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self::new(2, vec![4, 4])
    }
}

pub const DEFAULT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerLayout {
    /// Block widths on the input and output side.
    in_block: usize,
    out_block: usize,
    /// Offsets into the parameter vector.
    weights: usize,
    log_gain: usize,
    bias: usize,
}

impl LayerLayout {
    fn n_rows(&self, dim: usize) -> usize {
        dim * self.out_block
    }

    /// Stored weights of a row: every column up to the end of its diagonal block.
    fn row_len(&self, row: usize) -> usize {
        (row / self.out_block + 1) * self.in_block
    }

    fn row_offset(&self, row: usize) -> usize {
        let (i, a) = (row / self.out_block, row % self.out_block);
        let before = self.out_block * self.in_block * i * (i + 1) / 2;
        self.weights + before + a * (i + 1) * self.in_block
    }
}

/// A row's normalized weights, fixed once the parameters are.
#[derive(Debug, Clone, PartialEq)]
struct EffectiveRow {
    weights: Vec<f64>,
    /// Log of each diagonal-block weight.
    log_diag: Vec<f64>,
    bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct StackLayout {
    layers: Vec<LayerLayout>,
    log_scale: usize,
}

/// A trained or freshly initialized block neural autoregressive flow.
///
/// Immutable once built; share it across sampler threads by reference.
#[derive(Debug, Clone, PartialEq)]
pub struct BnafFlow {
    dim: usize,
    config: FlowConfig,
    stacks: Vec<StackLayout>,
    flow_params: Vec<f64>,
    /// stack → layer → row, derived from `flow_params`.
    effective: Vec<Vec<Vec<EffectiveRow>>>,
}

impl BnafFlow {
    /// Random near-identity flow; final-layer gains start at `DEFAULT_INIT_SCALE`.
    pub fn new(dim: usize, config: FlowConfig, seed: u64) -> Result<Self> {
        Self::with_init_scale(dim, config, DEFAULT_INIT_SCALE, seed)
    }

    pub fn with_init_scale(dim: usize, config: FlowConfig, init_scale: f64, seed: u64) -> Result<Self> {
        if !(init_scale > 0.0 && init_scale.is_finite()) {
            return Err(Error::InvalidArgument("init scale must be positive".into()));
        }
        let mut flow = Self::zeros(dim, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = flow.config.hidden_block_dims.len() + 1;
        for s in 0..flow.stacks.len() {
            for l in 0..n_layers {
                let layer = flow.stacks[s].layers[l];
                let bound = 1.0 / ((dim * layer.in_block) as f64).sqrt();
                for row in 0..layer.n_rows(dim) {
                    let off = layer.row_offset(row);
                    for c in 0..layer.row_len(row) {
                        flow.flow_params[off + c] = rng.random_range(-bound..bound);
                    }
                }
                let gain = if l + 1 == n_layers { init_scale.ln() } else { 0.0 };
                for row in 0..layer.n_rows(dim) {
                    flow.flow_params[layer.log_gain + row] = gain;
                }
            }
        }
        flow.refresh();
        Ok(flow)
    }

    /// Layout with every parameter zero.
    fn zeros(dim: usize, config: FlowConfig) -> Result<Self> {
        if dim == 0 || config.n_stacks == 0 {
            return Err(Error::InvalidArgument("flow needs dim ≥ 1 and at least one stack".into()));
        }
        if config.hidden_block_dims.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("hidden block dims must be positive".into()));
        }
        let mut widths = vec![1];
        widths.extend(&config.hidden_block_dims);
        widths.push(1);
        let mut offset = 0;
        let mut stacks = Vec::with_capacity(config.n_stacks);
        for _ in 0..config.n_stacks {
            let mut layers = Vec::new();
            for w in widths.windows(2) {
                let (ib, ob) = (w[0], w[1]);
                let n_weights = ob * ib * dim * (dim + 1) / 2;
                let rows = dim * ob;
                layers.push(LayerLayout {
                    in_block: ib,
                    out_block: ob,
                    weights: offset,
                    log_gain: offset + n_weights,
                    bias: offset + n_weights + rows,
                });
                offset += n_weights + 2 * rows;
            }
            stacks.push(StackLayout {
                layers,
                log_scale: offset,
            });
            offset += dim;
        }
        let mut flow = Self {
            dim,
            config,
            stacks,
            flow_params: vec![0.0; offset],
            effective: Vec::new(),
        };
        flow.refresh();
        Ok(flow)
    }

    /// Rebuild a flow from its architecture and a flat parameter vector.
    pub fn from_params(dim: usize, config: FlowConfig, flow_params: Vec<f64>) -> Result<Self> {
        let mut flow = Self::zeros(dim, config)?;
        if flow_params.len() != flow.flow_params.len() {
            return Err(Error::DimensionMismatch {
                expected: flow.flow_params.len(),
                got: flow_params.len(),
            });
        }
        if flow_params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite flow parameter".into()));
        }
        flow.flow_params = flow_params;
        flow.refresh();
        Ok(flow)
    }

    /// Recompute the normalized row weights after the parameters change.
    pub(crate) fn refresh(&mut self) {
        let p = &self.flow_params;
        self.effective = self
            .stacks
            .iter()
            .map(|stack| {
                stack
                    .layers
                    .iter()
                    .map(|layer| {
                        (0..layer.n_rows(self.dim))
                            .map(|row| {
                                let off = layer.row_offset(row);
                                let len = layer.row_len(row);
                                let diag_start = (row / layer.out_block) * layer.in_block;
                                let mut u = p[off..off + len].to_vec();
                                for v in &mut u[diag_start..] {
                                    *v = v.exp();
                                }
                                let log_norm = 0.5 * u.iter().map(|x| x * x).sum::<f64>().ln();
                                let log_gain = p[layer.log_gain + row];
                                let scale = (log_gain - log_norm).exp();
                                EffectiveRow {
                                    weights: u.iter().map(|x| scale * x).collect(),
                                    log_diag: (0..layer.in_block)
                                        .map(|c| log_gain + p[off + diag_start + c] - log_norm)
                                        .collect(),
                                    bias: p[layer.bias + row],
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn n_stacks(&self) -> usize {
        self.stacks.len()
    }

    pub fn n_params(&self) -> usize {
        self.flow_params.len()
    }

    pub fn flow_params(&self) -> &[f64] {
        &self.flow_params
    }

    /// `(f(z), ln|∂f/∂z|)` with the flow's own parameters.
    pub fn forward<T: Real>(&self, z: &[T]) -> (Vec<T>, T) {
        assert_eq!(z.len(), self.dim, "flow input has the wrong dimension");
        let mut x = z.to_vec();
        let mut log_det = T::zero();
        for s in 0..self.stacks.len() {
            if s > 0 {
                x.reverse();
            }
            let (y, ld) = self.stack_forward(s, &x);
            x = y;
            log_det += ld;
        }
        (x, log_det)
    }

    /// `(f(z), ln|∂f/∂z|)` with externally supplied parameters, for training.
    pub fn forward_with<T: Real>(&self, params: &[T], z: &[T]) -> (Vec<T>, T) {
        assert_eq!(z.len(), self.dim, "flow input has the wrong dimension");
        assert_eq!(params.len(), self.flow_params.len(), "wrong number of flow parameters");
        let mut x = z.to_vec();
        let mut log_det = T::zero();
        for s in 0..self.stacks.len() {
            if s > 0 {
                x.reverse();
            }
            let (y, ld) = self.stack_forward_with(s, params, &x);
            x = y;
            log_det += ld;
        }
        (x, log_det)
    }

    /// One stack with the flow's own parameters, without the preceding permutation.
    pub fn stack_forward<T: Real>(&self, stack: usize, z: &[T]) -> (Vec<T>, T) {
        let k = self.dim;
        let layout = &self.stacks[stack];
        let n_layers = layout.layers.len();
        let mut h = z.to_vec();
        let mut log_grad = vec![T::zero(); k];
        let mut log_diag = Vec::new();
        let mut w = Vec::new();
        for (l, (layer, rows)) in layout.layers.iter().zip(&self.effective[stack]).enumerate() {
            let ib = layer.in_block;
            let mut out = Vec::with_capacity(rows.len());
            let mut out_log_grad = Vec::with_capacity(rows.len());
            for (row, eff) in rows.iter().enumerate() {
                let diag_start = (row / layer.out_block) * ib;
                w.clear();
                w.extend(eff.weights.iter().map(|&x| T::cst(x)));
                let pre = T::dot(&w, &h[..w.len()]) + T::cst(eff.bias);
                log_diag.clear();
                for c in 0..ib {
                    log_diag.push(log_grad[diag_start + c] + T::cst(eff.log_diag[c]));
                }
                let mut lg = log_sum_exp(&log_diag);
                if l + 1 < n_layers {
                    lg += log_tanh_derivative(pre);
                    out.push(pre.tanh());
                } else {
                    out.push(pre);
                }
                out_log_grad.push(lg);
            }
            h = out;
            log_grad = out_log_grad;
        }
        let mut y = Vec::with_capacity(k);
        let mut log_det = T::zero();
        for i in 0..k {
            let a = self.flow_params[layout.log_scale + i];
            y.push(T::cst(a.exp()) * (z[i] + h[i]));
            log_det += T::cst(a) + softplus(log_grad[i]);
        }
        (y, log_det)
    }

    fn stack_forward_with<T: Real>(&self, stack: usize, params: &[T], z: &[T]) -> (Vec<T>, T) {
        let k = self.dim;
        let layout = &self.stacks[stack];
        let n_layers = layout.layers.len();
        let mut h = z.to_vec();
        // log ∂h_{i,a}/∂z_i for every unit a of block i.
        let mut log_grad = vec![T::zero(); k];
        for (l, layer) in layout.layers.iter().enumerate() {
            let (ib, ob) = (layer.in_block, layer.out_block);
            let mut out = Vec::with_capacity(k * ob);
            let mut out_log_grad = Vec::with_capacity(k * ob);
            let mut u = Vec::with_capacity(k * ib);
            let mut log_diag = Vec::with_capacity(ib);
            for row in 0..k * ob {
                let i = row / ob;
                let off = layer.row_offset(row);
                let len = layer.row_len(row);
                let diag_start = i * ib;
                u.clear();
                u.extend_from_slice(&params[off..off + len]);
                for v in &mut u[diag_start..] {
                    *v = v.exp();
                }
                let log_norm = T::dot(&u, &u).ln() * T::cst(0.5);
                let log_gain = params[layer.log_gain + row];
                let pre = (log_gain - log_norm).exp() * T::dot(&u, &h[..len]) + params[layer.bias + row];
                log_diag.clear();
                for c in 0..ib {
                    let v = params[off + diag_start + c];
                    log_diag.push(log_gain + v - log_norm + log_grad[diag_start + c]);
                }
                let mut lg = log_sum_exp(&log_diag);
                if l + 1 < n_layers {
                    lg += log_tanh_derivative(pre);
                    out.push(pre.tanh());
                } else {
                    out.push(pre);
                }
                out_log_grad.push(lg);
            }
            h = out;
            log_grad = out_log_grad;
        }
        let mut y = Vec::with_capacity(k);
        let mut log_det = T::zero();
        for i in 0..k {
            let a = params[layout.log_scale + i];
            y.push(a.exp() * (z[i] + h[i]));
            log_det += a + softplus(log_grad[i]);
        }
        (y, log_det)
    }

    /// Draw `z ~ N(0, I)` and push it through the flow.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        self.forward(&z).0
    }
}

fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().map(|x| x.value()).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return T::cst(m);
    }
    let mc = T::cst(m);
    let mut acc = T::zero();
    for &x in xs {
        acc += (x - mc).exp();
    }
    mc + acc.ln()
}

/// ln(1 − tanh²x), stable for large |x|.
fn log_tanh_derivative<T: Real>(x: T) -> T {
    let ax = x.abs();
    T::cst(4f64.ln()) - T::cst(2.0) * (ax + softplus(T::cst(-2.0) * ax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::jacobian;

    fn random_flow(dim: usize, seed: u64) -> BnafFlow {
        let mut flow = BnafFlow::with_init_scale(dim, FlowConfig::new(2, vec![3, 2]), 0.7, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for p in &mut flow.flow_params {
            *p += rng.random_range(-0.5..0.5);
        }
        flow.refresh();
        flow
    }

    #[test]
    fn cached_forward_matches_parameter_path() {
        let flow = random_flow(3, 4);
        let z = [0.3, -1.2, 2.5];
        let (a, la) = flow.forward(&z);
        let (b, lb) = flow.forward_with(flow.flow_params(), &z);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn layout_counts() {
        let f = BnafFlow::new(3, FlowConfig::new(1, vec![2]), 0).unwrap();
        // 3→6: 2·1·6 weights, 6 gains, 6 biases; 6→3: 1·2·6, 3, 3; scales 3.
        assert_eq!(f.n_params(), 12 + 12 + 12 + 6 + 3);
    }

    #[test]
    fn log_tanh_derivative_matches_direct_form() {
        for &x in &[-30.0f64, -2.0, -0.1, 0.0, 0.4, 3.0, 25.0] {
            let direct = (1.0 - x.tanh().powi(2)).ln();
            if direct.is_finite() {
                assert!((log_tanh_derivative(x) - direct).abs() < 1e-9, "{x}");
            }
        }
        assert!((log_tanh_derivative(400.0f64) - (4f64.ln() - 800.0)).abs() < 1e-9);
    }

    #[test]
    fn jacobian_is_lower_triangular_within_a_stack() {
        let flow = random_flow(4, 3);
        let z = [0.3, -0.8, 1.1, 0.2];
        let j = jacobian(|v| flow.stack_forward(0, v).0, &z);
        for i in 0..4 {
            assert!(j[i][i] > 0.0);
            for c in i + 1..4 {
                assert_eq!(j[i][c], 0.0);
            }
        }
    }

    #[test]
    fn wrong_parameter_count_is_rejected() {
        let cfg = FlowConfig::default();
        assert!(matches!(
            BnafFlow::from_params(2, cfg, vec![0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
