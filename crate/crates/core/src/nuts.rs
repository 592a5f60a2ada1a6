//! No-U-Turn Sampler with multinomial trajectory sampling, dual-averaging
//! step size and windowed diagonal metric adaptation.

use crate::autodiff::{value_and_grad, GradientRecord};
use crate::error::{Error, Result};
use crate::model::LogDensity;
use crate::scalar::log_add_exp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const MAX_INIT_ATTEMPTS: usize = 100;
const STALL_LIMIT: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NutsConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub target_accept: f64,
    /// Fixed step size; disables dual averaging.
    pub step_size: Option<f64>,
    pub max_depth: usize,
    pub max_delta_h: f64,
    pub seed: u64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 3000,
            n_samples: 5000,
            target_accept: 0.8,
            step_size: None,
            max_depth: 10,
            max_delta_h: 1000.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub gradient: Vec<f64>,
    pub step_size: f64,
    pub inv_mass_diag: Vec<f64>,
}

impl ChainState {
    /// State at `position` with a unit metric.
    pub fn new<D: LogDensity>(density: &D, position: Vec<f64>, step_size: f64) -> Self {
        let g = grad_of(density, &position);
        let k = position.len();
        Self {
            position,
            log_density: g.value,
            gradient: g.gradient,
            step_size,
            inv_mass_diag: vec![1.0; k],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeapfrogOutput {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_density: f64,
    pub gradient: Vec<f64>,
    /// H(q', p') − H(q, p); +∞ for a non-finite density.
    pub delta_h: f64,
    pub divergent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NutsStep {
    pub divergent: bool,
    pub tree_depth: usize,
    pub accept_stat: f64,
    pub n_leapfrog: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NutsRunResult {
    /// chains × draws × parameters, in model space.
    pub chains: Vec<Vec<Vec<f64>>>,
    pub divergence_count: Vec<usize>,
    pub n_gradient_evals: u64,
    pub accept_stat: Vec<f64>,
    pub step_size: Vec<f64>,
    pub inv_mass_diag: Vec<Vec<f64>>,
}

impl NutsRunResult {
    pub fn total_divergences(&self) -> usize {
        self.divergence_count.iter().sum()
    }

    /// Values of parameter `j` across all chains, chain by chain.
    pub fn column(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.iter().map(|row| row[j]).collect())
            .collect()
    }
}

fn grad_of<D: LogDensity>(density: &D, q: &[f64]) -> GradientRecord {
    value_and_grad(|x| density.log_density(x), q)
}

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

struct Integrator<'a, D> {
    density: &'a D,
    inv_mass: &'a [f64],
    n_grad: u64,
}

impl<D: LogDensity> Integrator<'_, D> {
    fn hamiltonian(&self, z: &Point) -> f64 {
        if !z.logp.is_finite() {
            return f64::INFINITY;
        }
        let kinetic: f64 = z.p.iter().zip(self.inv_mass).map(|(p, m)| p * p * m).sum();
        let h = -z.logp + 0.5 * kinetic;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn evolve(&mut self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(self.inv_mass) {
            *q += eps * m * p;
        }
        self.n_grad += 1;
        let g = grad_of(self.density, &z.q);
        if g.is_usable() {
            z.logp = g.value;
            z.grad = g.gradient;
        } else {
            z.logp = f64::NEG_INFINITY;
            z.grad.iter_mut().for_each(|x| *x = 0.0);
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(self.inv_mass).map(|(p, m)| p * m).collect()
    }
}

/// One half-kick, full-drift, half-kick update under the diagonal metric.
pub fn leapfrog<D: LogDensity>(
    density: &D,
    state: &ChainState,
    momentum: &[f64],
    eps: f64,
) -> LeapfrogOutput {
    assert!(eps > 0.0, "leapfrog step must be positive");
    let mut integ = Integrator {
        density,
        inv_mass: &state.inv_mass_diag,
        n_grad: 0,
    };
    let mut z = Point {
        q: state.position.clone(),
        p: momentum.to_vec(),
        logp: state.log_density,
        grad: state.gradient.clone(),
    };
    let h0 = integ.hamiltonian(&z);
    integ.evolve(&mut z, eps);
    let delta_h = integ.hamiltonian(&z) - h0;
    LeapfrogOutput {
        divergent: !z.logp.is_finite(),
        position: z.q,
        momentum: z.p,
        log_density: z.logp,
        gradient: z.grad,
        delta_h,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Generalized no-U-turn criterion on the summed momentum.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct Tree<'a, 'b, D, R> {
    integ: Integrator<'a, D>,
    rng: &'b mut R,
    eps: f64,
    h0: f64,
    max_delta_h: f64,
    n_leapfrog: u64,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Subtree boundary momenta, in build order (`beg` adjoins the existing tree).
struct Edges {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
}

impl<D: LogDensity, R: Rng> Tree<'_, '_, D, R> {
    fn build(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        rho: &mut Vec<f64>,
        log_sum_weight: &mut f64,
        sign: f64,
    ) -> (bool, Edges) {
        if depth == 0 {
            self.integ.evolve(z, sign * self.eps);
            self.n_leapfrog += 1;
            let h = self.integ.hamiltonian(z);
            if h - self.h0 > self.max_delta_h {
                self.divergent = true;
            }
            *log_sum_weight = log_add_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 { 1.0 } else { (self.h0 - h).exp() };
            *z_propose = z.clone();
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            let ps = self.integ.p_sharp(&z.p);
            let edges = Edges {
                p_sharp_beg: ps.clone(),
                p_sharp_end: ps,
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
            };
            return (!self.divergent, edges);
        }

        let k = z.q.len();
        let mut rho_init = vec![0.0; k];
        let mut lsw_init = f64::NEG_INFINITY;
        let (ok, init) = self.build(depth - 1, z, z_propose, &mut rho_init, &mut lsw_init, sign);
        if !ok {
            return (false, init);
        }
        let mut z_propose_final = z.clone();
        let mut rho_final = vec![0.0; k];
        let mut lsw_final = f64::NEG_INFINITY;
        let (ok, fin) =
            self.build(depth - 1, z, &mut z_propose_final, &mut rho_final, &mut lsw_final, sign);
        let edges = Edges {
            p_sharp_beg: init.p_sharp_beg.clone(),
            p_sharp_end: fin.p_sharp_end.clone(),
            p_beg: init.p_beg.clone(),
            p_end: fin.p_end.clone(),
        };
        if !ok {
            return (false, edges);
        }

        let lsw_subtree = log_add_exp(lsw_init, lsw_final);
        *log_sum_weight = log_add_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        let mut persist = no_u_turn(&edges.p_sharp_beg, &edges.p_sharp_end, &rho_subtree);
        let rho_ext = add(&rho_init, &fin.p_beg);
        persist &= no_u_turn(&edges.p_sharp_beg, &fin.p_sharp_beg, &rho_ext);
        let rho_ext = add(&rho_final, &init.p_end);
        persist &= no_u_turn(&init.p_sharp_end, &edges.p_sharp_end, &rho_ext);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        (persist, edges)
    }
}

fn draw_momentum<R: Rng>(inv_mass: &[f64], rng: &mut R) -> Vec<f64> {
    inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect()
}

/// One NUTS transition from `state`; updates position, density and gradient.
pub fn nuts_step<D: LogDensity, R: Rng>(
    density: &D,
    state: &mut ChainState,
    max_depth: usize,
    max_delta_h: f64,
    rng: &mut R,
) -> NutsStep {
    let p0 = draw_momentum(&state.inv_mass_diag, rng);
    let z0 = Point {
        q: state.position.clone(),
        p: p0.clone(),
        logp: state.log_density,
        grad: state.gradient.clone(),
    };
    let integ = Integrator {
        density,
        inv_mass: &state.inv_mass_diag,
        n_grad: 0,
    };
    let h0 = integ.hamiltonian(&z0);
    let ps0 = integ.p_sharp(&p0);
    let mut tree = Tree {
        integ,
        rng,
        eps: state.step_size,
        h0,
        max_delta_h,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };

    let mut z_fwd = z0.clone();
    let mut z_bck = z0.clone();
    let mut z_sample = z0.clone();
    let mut z_propose = z0;
    let mut rho = p0.clone();
    let (mut p_fwd_bck, mut p_bck_fwd) = (p0.clone(), p0);
    let (mut ps_fwd_fwd, mut ps_fwd_bck, mut ps_bck_fwd, mut ps_bck_bck) =
        (ps0.clone(), ps0.clone(), ps0.clone(), ps0);
    let mut log_sum_weight = 0.0;
    let mut depth = 0;
    let k = state.position.len();

    while depth < max_depth {
        let mut rho_fwd = vec![0.0; k];
        let mut rho_bck = vec![0.0; k];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let valid = if tree.rng.random::<bool>() {
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_bck);
            ps_bck_fwd.clone_from(&ps_fwd_bck);
            let (ok, e) = tree.build(depth, &mut z_fwd, &mut z_propose, &mut rho_fwd, &mut lsw_subtree, 1.0);
            (ps_fwd_bck, ps_fwd_fwd, p_fwd_bck) = (e.p_sharp_beg, e.p_sharp_end, e.p_beg);
            ok
        } else {
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_fwd);
            ps_fwd_bck.clone_from(&ps_bck_fwd);
            let (ok, e) = tree.build(depth, &mut z_bck, &mut z_propose, &mut rho_bck, &mut lsw_subtree, -1.0);
            (ps_bck_fwd, ps_bck_bck, p_bck_fwd) = (e.p_sharp_beg, e.p_sharp_end, e.p_beg);
            ok
        };
        if !valid {
            break;
        }
        depth += 1;
        if lsw_subtree > log_sum_weight || tree.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
            z_sample = z_propose.clone();
        }
        log_sum_weight = log_add_exp(log_sum_weight, lsw_subtree);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&ps_bck_bck, &ps_fwd_fwd, &rho);
        let rho_ext = add(&rho_bck, &p_fwd_bck);
        persist &= no_u_turn(&ps_bck_bck, &ps_fwd_bck, &rho_ext);
        let rho_ext = add(&rho_fwd, &p_bck_fwd);
        persist &= no_u_turn(&ps_bck_fwd, &ps_fwd_fwd, &rho_ext);
        if !persist {
            break;
        }
    }

    let n_leapfrog = tree.n_leapfrog;
    let accept_stat = if n_leapfrog > 0 {
        tree.sum_metro_prob / n_leapfrog as f64
    } else {
        0.0
    };
    let divergent = tree.divergent;
    state.position = z_sample.q;
    state.log_density = z_sample.logp;
    state.gradient = z_sample.grad;
    NutsStep {
        divergent,
        tree_depth: depth,
        accept_stat,
        n_leapfrog,
    }
}

/// Stan's heuristic: double or halve ε until one leapfrog step crosses an
/// acceptance of 0.8.
fn find_reasonable_step_size<D: LogDensity, R: Rng>(
    density: &D,
    state: &ChainState,
    rng: &mut R,
) -> Result<f64> {
    let mut eps = state.step_size;
    let mut direction = 0.0;
    let log_08 = 0.8f64.ln();
    loop {
        let p = draw_momentum(&state.inv_mass_diag, rng);
        let out = leapfrog(density, state, &p, eps);
        let delta = -out.delta_h;
        let delta = if delta.is_nan() { f64::NEG_INFINITY } else { delta };
        if direction == 0.0 {
            direction = if delta > log_08 { 1.0 } else { -1.0 };
        } else if (direction > 0.0 && !(delta > log_08)) || (direction < 0.0 && !(delta < log_08)) {
            return Ok(eps);
        }
        eps = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 {
            return Err(Error::SamplerFailure("posterior is improper: step size diverged".into()));
        }
        if eps < 1e-300 {
            return Err(Error::SamplerFailure("no acceptably small step size".into()));
        }
    }
}

#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            s_bar: 0.0,
            x_bar: 0.0,
            counter: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford running variance.
#[derive(Debug, Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(k: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; k],
            m2: vec![0.0; k],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Sample variance shrunk toward 1e-3.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|m| (n / (n + 5.0)) * (m / (n - 1.0)) + 1e-3 * (5.0 / (n + 5.0)))
            .collect()
    }
}

/// Windowed metric schedule: fast initial buffer, doubling slow windows,
/// fast terminal buffer.
#[derive(Debug, Clone)]
struct Windows {
    n_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
}

impl Windows {
    fn new(n_warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if init + term + base > n_warmup {
            init = (0.15 * n_warmup as f64) as usize;
            term = (0.1 * n_warmup as f64) as usize;
            base = n_warmup - (init + term);
        }
        Self {
            n_warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            next_window: init + base - 1,
        }
    }

    fn in_window(&self, i: usize) -> bool {
        i >= self.init_buffer && i < self.n_warmup - self.term_buffer && i != self.n_warmup
    }

    fn end_of_window(&self, i: usize) -> bool {
        i == self.next_window && i != self.n_warmup
    }

    fn advance(&mut self, i: usize) {
        let last = self.n_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = i + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.n_warmup - self.term_buffer {
            self.next_window = last;
        }
    }
}

/// Adapt step size and diagonal metric over `n_warmup` transitions.
///
/// With `fixed_step` set, ε stays as given and only the metric adapts.
pub fn warmup_adapt<D: LogDensity, R: Rng>(
    density: &D,
    state: &mut ChainState,
    n_warmup: usize,
    target_accept: f64,
    fixed_step: Option<f64>,
    config: &NutsConfig,
    rng: &mut R,
) -> Result<u64> {
    if fixed_step.is_none() && (1..100).contains(&n_warmup) {
        return Err(Error::InvalidArgument(format!(
            "step-size adaptation needs at least 100 warmup steps, got {n_warmup}"
        )));
    }
    let adapt_metric = n_warmup >= 20;
    let mut n_leapfrog = 0;
    if let Some(eps) = fixed_step {
        state.step_size = eps;
    } else if n_warmup > 0 {
        state.step_size = find_reasonable_step_size(density, state, rng)?;
    }
    let mut da = DualAveraging::new(state.step_size, target_accept);
    let mut windows = Windows::new(n_warmup);
    let mut welford = Welford::new(state.position.len());
    let mut stalled = 0;
    for i in 0..n_warmup {
        let step = nuts_step(density, state, config.max_depth, config.max_delta_h, rng);
        n_leapfrog += step.n_leapfrog;
        stalled = if step.accept_stat == 0.0 { stalled + 1 } else { 0 };
        if stalled >= STALL_LIMIT {
            return Err(Error::AdaptationFailure {
                chain: 0,
                reason: format!("acceptance was zero for {STALL_LIMIT} consecutive steps"),
            });
        }
        if fixed_step.is_none() {
            state.step_size = da.update(step.accept_stat);
        }
        if !adapt_metric {
            continue;
        }
        if windows.in_window(i) {
            welford.add(&state.position);
        }
        if windows.end_of_window(i) {
            windows.advance(i);
            state.inv_mass_diag = welford.regularized_variance();
            welford = Welford::new(state.position.len());
            if fixed_step.is_none() {
                state.step_size = find_reasonable_step_size(density, state, rng)?;
                da = DualAveraging::new(state.step_size, target_accept);
            }
        }
    }
    if fixed_step.is_none() && n_warmup > 0 {
        state.step_size = da.final_step_size();
    }
    Ok(n_leapfrog)
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    divergences: usize,
    n_grad: u64,
    mean_accept: f64,
    step_size: f64,
    inv_mass: Vec<f64>,
}

fn run_chain<D: LogDensity>(density: &D, config: &NutsConfig, chain: usize) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let mut state = None;
    for _ in 0..MAX_INIT_ATTEMPTS {
        let x = density.initial_point(&mut rng);
        let s = ChainState::new(density, x, config.step_size.unwrap_or(1.0));
        if s.log_density.is_finite() && s.gradient.iter().all(|g| g.is_finite()) {
            state = Some(s);
            break;
        }
    }
    let mut state = state.ok_or_else(|| Error::AdaptationFailure {
        chain,
        reason: "no finite initial point".into(),
    })?;
    let mut n_grad = warmup_adapt(
        density,
        &mut state,
        config.n_warmup,
        config.target_accept,
        config.step_size,
        config,
        &mut rng,
    )
    .map_err(|e| match e {
        Error::AdaptationFailure { reason, .. } => Error::AdaptationFailure { chain, reason },
        other => other,
    })?;

    let mut draws = Vec::with_capacity(config.n_samples);
    let mut divergences = 0;
    let mut accept_sum = 0.0;
    for _ in 0..config.n_samples {
        let step = nuts_step(density, &mut state, config.max_depth, config.max_delta_h, &mut rng);
        n_grad += step.n_leapfrog;
        divergences += step.divergent as usize;
        accept_sum += step.accept_stat;
        draws.push(density.to_model(&state.position));
    }
    let mean_accept = if config.n_samples > 0 {
        accept_sum / config.n_samples as f64
    } else {
        0.0
    };
    Ok(ChainOutput {
        draws,
        divergences,
        n_grad,
        mean_accept,
        step_size: state.step_size,
        inv_mass: state.inv_mass_diag,
    })
}

/// Run `n_chains` independent chains in parallel; results are ordered by chain.
pub fn run_nuts<D: LogDensity>(density: &D, config: &NutsConfig) -> Result<NutsRunResult> {
    if config.n_chains == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    if !(config.target_accept > 0.0 && config.target_accept < 1.0) {
        return Err(Error::InvalidArgument("target_accept must lie in (0, 1)".into()));
    }
    if config.step_size.is_some_and(|e| !(e > 0.0)) {
        return Err(Error::InvalidArgument("fixed step size must be positive".into()));
    }
    let outputs: Vec<Result<ChainOutput>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(density, config, c))
        .collect();
    let mut result = NutsRunResult::default();
    for out in outputs {
        let out = out?;
        result.chains.push(out.draws);
        result.divergence_count.push(out.divergences);
        result.n_gradient_evals += out.n_grad;
        result.accept_stat.push(out.mean_accept);
        result.step_size.push(out.step_size);
        result.inv_mass_diag.push(out.inv_mass);
    }
    Ok(result)
}
