//! MCMC: leapfrog integrator, multinomial NUTS with dual-averaging step-size
//! adaptation, and random-walk Metropolis-Hastings.
//!
//! All samplers use an identity mass matrix. Positions are whatever
//! coordinates the target exposes; the surrogate posterior exposes
//! box-standardised ones.

use std::cell::Cell;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy error beyond which a trajectory is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

pub trait LogDensity {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the log density.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).log_density_and_grad(x, grad)
    }
}

/// Independent Gaussian with zero mean and the given standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub sd: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian { sd: vec![1.0; dim] }
    }
}

impl LogDensity for DiagonalGaussian {
    fn dim(&self) -> usize {
        self.sd.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * x.iter().zip(&self.sd).map(|(v, s)| (v / s) * (v / s)).sum::<f64>()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for ((g, v), s) in grad.iter_mut().zip(x).zip(&self.sd) {
            *g = -v / (s * s);
        }
        self.log_density(x)
    }
}

/// Wraps a target and counts evaluations.
#[derive(Debug)]
pub struct Counted<T> {
    pub inner: T,
    density_evals: Cell<u64>,
    gradient_evals: Cell<u64>,
}

impl<T: LogDensity> Counted<T> {
    pub fn new(inner: T) -> Self {
        Counted {
            inner,
            density_evals: Cell::new(0),
            gradient_evals: Cell::new(0),
        }
    }

    pub fn density_evals(&self) -> u64 {
        self.density_evals.get()
    }

    pub fn gradient_evals(&self) -> u64 {
        self.gradient_evals.get()
    }
}

impl<T: LogDensity> LogDensity for Counted<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.density_evals.set(self.density_evals.get() + 1);
        self.inner.log_density(x)
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.gradient_evals.set(self.gradient_evals.get() + 1);
        self.inner.log_density_and_grad(x, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub log_target: f64,
    pub grad: Vec<f64>,
}

impl PhaseState {
    pub fn new(target: &impl LogDensity, position: Vec<f64>, momentum: Vec<f64>) -> Self {
        let mut grad = vec![0.0; position.len()];
        let log_target = target.log_density_and_grad(&position, &mut grad);
        PhaseState {
            position,
            momentum,
            log_target,
            grad,
        }
    }

    pub fn kinetic(&self) -> f64 {
        0.5 * self.momentum.iter().map(|p| p * p).sum::<f64>()
    }

    /// Hamiltonian `-log_target + |p|^2 / 2`.
    pub fn hamiltonian(&self) -> f64 {
        -self.log_target + self.kinetic()
    }

    pub fn is_finite(&self) -> bool {
        self.log_target.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

/// One half-kick, drift, half-kick step. The flag is true when the new
/// value or gradient is non-finite.
pub fn leapfrog(target: &impl LogDensity, state: &PhaseState, step: f64) -> (PhaseState, bool) {
    let momentum: Vec<f64> = state
        .momentum
        .iter()
        .zip(&state.grad)
        .map(|(p, g)| p + 0.5 * step * g)
        .collect();
    let position: Vec<f64> = state.position.iter().zip(&momentum).map(|(q, p)| q + step * p).collect();
    let mut next = PhaseState::new(target, position, momentum);
    for (p, g) in next.momentum.iter_mut().zip(&next.grad) {
        *p += 0.5 * step * g;
    }
    let divergent = !next.is_finite();
    (next, divergent)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualAvgState {
    pub log_step: f64,
    pub log_step_avg: f64,
    pub h_avg: f64,
    pub mu: f64,
    pub iteration: u64,
    pub target_accept: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
}

impl DualAvgState {
    pub fn new(initial_step: f64, target_accept: f64) -> Self {
        DualAvgState {
            log_step: initial_step.ln(),
            log_step_avg: 0.0,
            h_avg: 0.0,
            mu: (10.0 * initial_step).ln(),
            iteration: 0,
            target_accept,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }

    pub fn update(&mut self, accept_stat: f64) {
        self.iteration += 1;
        let t = self.iteration as f64;
        let w = 1.0 / (t + self.t0);
        self.h_avg = (1.0 - w) * self.h_avg + w * (self.target_accept - accept_stat);
        self.log_step = self.mu - t.sqrt() / self.gamma * self.h_avg;
        let eta = t.powf(-self.kappa);
        self.log_step_avg = eta * self.log_step + (1.0 - eta) * self.log_step_avg;
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    /// Step size to freeze once adaptation ends.
    pub fn adapted_step(&self) -> f64 {
        self.log_step_avg.exp()
    }
}

pub fn dual_avg_update(mut state: DualAvgState, accept_stat: f64) -> DualAvgState {
    state.update(accept_stat);
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NutsStats {
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub accept_stat: f64,
    pub divergent: bool,
    pub energy: f64,
}

struct Tree {
    left: PhaseState,
    right: PhaseState,
    proposal: PhaseState,
    log_weight: f64,
    sum_accept: f64,
    n_leaf: usize,
    stop: bool,
    divergent: bool,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Classic criterion: the span between the ends must not shrink along either
/// end's momentum.
fn is_u_turn(left: &PhaseState, right: &PhaseState) -> bool {
    let mut dl = 0.0;
    let mut dr = 0.0;
    for i in 0..left.position.len() {
        let span = right.position[i] - left.position[i];
        dl += span * left.momentum[i];
        dr += span * right.momentum[i];
    }
    dl < 0.0 || dr < 0.0
}

fn build_tree<R: Rng>(
    target: &impl LogDensity,
    edge: &PhaseState,
    forward: bool,
    depth: usize,
    step: f64,
    h0: f64,
    rng: &mut R,
) -> Tree {
    if depth == 0 {
        let (next, bad) = leapfrog(target, edge, if forward { step } else { -step });
        let h = next.hamiltonian();
        let divergent = bad || !h.is_finite() || h - h0 > DIVERGENCE_THRESHOLD;
        let log_weight = if h.is_finite() { h0 - h } else { f64::NEG_INFINITY };
        let accept = if h.is_finite() { (h0 - h).exp().min(1.0) } else { 0.0 };
        return Tree {
            left: next.clone(),
            right: next.clone(),
            proposal: next,
            log_weight,
            sum_accept: accept,
            n_leaf: 1,
            stop: divergent,
            divergent,
        };
    }
    let mut first = build_tree(target, edge, forward, depth - 1, step, h0, rng);
    if first.stop {
        return first;
    }
    let outer = if forward { &first.right } else { &first.left };
    let second = build_tree(target, &outer.clone(), forward, depth - 1, step, h0, rng);
    if forward {
        first.right = second.right.clone();
    } else {
        first.left = second.left.clone();
    }
    let combined = log_add_exp(first.log_weight, second.log_weight);
    if second.log_weight > f64::NEG_INFINITY && rng.random::<f64>() < (second.log_weight - combined).exp() {
        first.proposal = second.proposal;
    }
    first.log_weight = combined;
    first.sum_accept += second.sum_accept;
    first.n_leaf += second.n_leaf;
    first.divergent |= second.divergent;
    first.stop = second.stop || is_u_turn(&first.left, &first.right);
    first
}

/// One multinomial NUTS transition from `current` (value and gradient must
/// be fresh).
pub fn nuts_step<R: Rng>(
    target: &impl LogDensity,
    current: &PhaseState,
    step: f64,
    rng: &mut R,
    max_tree_depth: usize,
) -> Result<(PhaseState, NutsStats)> {
    if !current.log_target.is_finite() {
        return Err(Error::Numerical("NUTS started from a non-finite log target".into()));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Invalid(format!("step size must be positive, got {step}")));
    }
    let momentum: Vec<f64> = (0..current.position.len()).map(|_| rng.sample(StandardNormal)).collect();
    let start = PhaseState {
        momentum,
        ..current.clone()
    };
    let h0 = start.hamiltonian();
    let mut left = start.clone();
    let mut right = start.clone();
    let mut proposal = start;
    let mut log_weight = 0.0;
    let mut sum_accept = 0.0;
    let mut n_leaf = 0;
    let mut divergent = false;
    let mut depth = 0;
    while depth < max_tree_depth {
        let forward = rng.random::<bool>();
        let edge = if forward { &right } else { &left };
        let sub = build_tree(target, &edge.clone(), forward, depth, step, h0, rng);
        depth += 1;
        sum_accept += sub.sum_accept;
        n_leaf += sub.n_leaf;
        if sub.divergent {
            divergent = true;
            break;
        }
        if sub.stop {
            break;
        }
        if rng.random::<f64>() < (sub.log_weight - log_weight).exp() {
            proposal = sub.proposal;
        }
        log_weight = log_add_exp(log_weight, sub.log_weight);
        if forward {
            right = sub.right;
        } else {
            left = sub.left;
        }
        if is_u_turn(&left, &right) {
            break;
        }
    }
    let stats = NutsStats {
        tree_depth: depth,
        n_leapfrog: n_leaf,
        accept_stat: if n_leaf > 0 { sum_accept / n_leaf as f64 } else { 0.0 },
        divergent,
        energy: proposal.hamiltonian(),
    };
    Ok((proposal, stats))
}

/// Step-size heuristic: double or halve until the one-step acceptance
/// crosses one half.
pub fn find_initial_step<R: Rng>(target: &impl LogDensity, current: &PhaseState, rng: &mut R) -> f64 {
    let momentum: Vec<f64> = (0..current.position.len()).map(|_| rng.sample(StandardNormal)).collect();
    let start = PhaseState {
        momentum,
        ..current.clone()
    };
    let h0 = start.hamiltonian();
    let log_accept = |step: f64| {
        let (next, bad) = leapfrog(target, &start, step);
        let h = next.hamiltonian();
        if bad || !h.is_finite() {
            f64::NEG_INFINITY
        } else {
            h0 - h
        }
    };
    let mut step = 1.0;
    let up = log_accept(step) > 0.5f64.ln();
    for _ in 0..100 {
        let next = if up { step * 2.0 } else { step * 0.5 };
        let crossed = if up {
            log_accept(next) <= 0.5f64.ln()
        } else {
            log_accept(next) > 0.5f64.ln()
        };
        step = next;
        if crossed {
            break;
        }
    }
    step
}

/// One random-walk Metropolis-Hastings step with isotropic Gaussian proposal.
pub fn rwmh_step<R: Rng>(
    target: &impl LogDensity,
    current: &[f64],
    current_log_target: f64,
    scale: f64,
    rng: &mut R,
) -> (Vec<f64>, f64, bool) {
    let proposal: Vec<f64> = current
        .iter()
        .map(|x| x + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let lp = target.log_density(&proposal);
    let log_ratio = lp - current_log_target;
    if lp.is_finite() && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio) {
        (proposal, lp, true)
    } else {
        (current.to_vec(), current_log_target, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Nuts,
    Rwmh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Stored samples after thinning.
    pub n_samples: usize,
    /// Raw steps discarded before storage.
    pub burn_in: usize,
    /// Keep every `thin`-th raw step. Unset means 10 for NUTS and 1 for RWMH.
    pub thin: Option<usize>,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub rwmh_scale: f64,
    /// Adapt the RWMH scale during burn-in toward `rwmh_target_accept`.
    pub rwmh_autotune: bool,
    pub rwmh_target_accept: f64,
    pub max_tree_depth: usize,
    pub target_accept: f64,
    /// Overrides the initial step-size heuristic.
    pub initial_step: Option<f64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_samples: 1000,
            burn_in: 5000,
            thin: None,
            seed: 0,
            sampler: SamplerKind::Nuts,
            rwmh_scale: 1e-2,
            rwmh_autotune: false,
            rwmh_target_accept: 0.25,
            max_tree_depth: 10,
            target_accept: 0.8,
            initial_step: None,
        }
    }
}

impl ChainConfig {
    pub fn thin(&self) -> usize {
        self.thin.unwrap_or(match self.sampler {
            SamplerKind::Nuts => 10,
            SamplerKind::Rwmh => 1,
        })
    }

    /// Total raw steps: burn-in plus `n_samples * thin`.
    pub fn raw_steps(&self) -> usize {
        self.burn_in + self.n_samples * self.thin()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Invalid(format!("chain.{field} {why}")));
        if self.n_samples == 0 {
            return bad("n_samples", "must be at least 1");
        }
        if self.thin == Some(0) {
            return bad("thin", "must be at least 1");
        }
        if !(self.rwmh_scale > 0.0 && self.rwmh_scale.is_finite()) {
            return bad("rwmh_scale", "must be positive and finite");
        }
        if !(self.rwmh_target_accept > 0.0 && self.rwmh_target_accept < 1.0) {
            return bad("rwmh_target_accept", "must lie in (0, 1)");
        }
        if !(1..=30).contains(&self.max_tree_depth) {
            return bad("max_tree_depth", "must lie in 1..=30");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept", "must lie in (0, 1)");
        }
        if let Some(s) = self.initial_step {
            if !(s > 0.0 && s.is_finite()) {
                return bad("initial_step", "must be positive and finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub chain_id: u64,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub raw_steps: usize,
    /// Mean acceptance statistic over post-burn-in steps.
    pub accept_rate: f64,
    pub burn_in_accept_rate: f64,
    pub divergences: usize,
    pub burn_in_divergences: usize,
    pub gradient_evals: u64,
    pub density_evals: u64,
    /// Gradient evaluations spent before the first transition (start point
    /// and step-size heuristic).
    pub setup_gradient_evals: u64,
    /// Leapfrog steps over all transitions, burn-in included.
    pub leapfrog_steps: u64,
    /// Frozen NUTS step size, or final RWMH scale.
    pub step_size: f64,
    pub mean_tree_depth: f64,
    pub max_depth_hits: usize,
    /// Step size (NUTS) or scale (RWMH) after each burn-in step.
    pub adaptation_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub log_targets: Vec<f64>,
    pub raw_step_index: Vec<usize>,
    pub stats: ChainStats,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Values of coordinate `i` in storage order.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[i]).collect()
    }

    pub fn map_samples(mut self, f: impl Fn(&[f64]) -> Vec<f64>) -> Chain {
        for s in &mut self.samples {
            *s = f(s);
        }
        self
    }
}

pub fn run_chain(config: &ChainConfig, target: &impl LogDensity, init: &[f64]) -> Result<Chain> {
    run_chain_with_id(config, target, init, 0)
}

/// Runs `n_chains` independent chains in parallel. Chain `c` draws from
/// stream `c` of the configured seed.
pub fn run_chains<T: LogDensity + Sync>(
    config: &ChainConfig,
    target: &T,
    init: &[f64],
    n_chains: usize,
) -> Result<Vec<Chain>> {
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| run_chain_with_id(config, target, init, c))
        .collect()
}

pub fn run_chain_with_id(config: &ChainConfig, target: &impl LogDensity, init: &[f64], chain_id: u64) -> Result<Chain> {
    config.validate()?;
    if init.len() != target.dim() {
        return Err(Error::dims("initial position", target.dim(), init.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain_id);
    let counted = Counted::new(target);
    let mut run = match config.sampler {
        SamplerKind::Nuts => run_nuts(config, &counted, init, &mut rng)?,
        SamplerKind::Rwmh => run_rwmh(config, &counted, init, &mut rng)?,
    };
    run.stats.chain_id = chain_id;
    run.stats.gradient_evals = counted.gradient_evals();
    run.stats.density_evals = counted.density_evals();
    Ok(run)
}

fn empty_stats(config: &ChainConfig) -> ChainStats {
    ChainStats {
        sampler: config.sampler,
        seed: config.seed,
        chain_id: 0,
        n_samples: config.n_samples,
        burn_in: config.burn_in,
        thin: config.thin(),
        raw_steps: config.raw_steps(),
        accept_rate: 0.0,
        burn_in_accept_rate: 0.0,
        divergences: 0,
        burn_in_divergences: 0,
        gradient_evals: 0,
        density_evals: 0,
        setup_gradient_evals: 0,
        leapfrog_steps: 0,
        step_size: 0.0,
        mean_tree_depth: 0.0,
        max_depth_hits: 0,
        adaptation_trace: Vec::with_capacity(config.burn_in),
    }
}

fn run_nuts<T: LogDensity>(config: &ChainConfig, target: &Counted<T>, init: &[f64], rng: &mut ChaCha8Rng) -> Result<Chain> {
    let mut state = PhaseState::new(target, init.to_vec(), vec![0.0; init.len()]);
    if !state.is_finite() {
        return Err(Error::Numerical("initial position has a non-finite log target or gradient".into()));
    }
    let initial_step = match config.initial_step {
        Some(s) => s,
        None => find_initial_step(target, &state, rng),
    };
    let mut adapt = DualAvgState::new(initial_step, config.target_accept);
    let mut stats = empty_stats(config);
    stats.setup_gradient_evals = target.gradient_evals();
    let mut burn_accept = 0.0;
    for _ in 0..config.burn_in {
        let (next, s) = nuts_step(target, &state, adapt.step(), rng, config.max_tree_depth)?;
        state = next;
        adapt.update(s.accept_stat);
        burn_accept += s.accept_stat;
        stats.leapfrog_steps += s.n_leapfrog as u64;
        stats.burn_in_divergences += s.divergent as usize;
        stats.adaptation_trace.push(adapt.step());
    }
    if config.burn_in > 0 && stats.burn_in_divergences == config.burn_in {
        return Err(Error::Numerical(format!(
            "all {} adaptation steps diverged; last step size {:.3e}, initial {:.3e}",
            config.burn_in,
            adapt.step(),
            initial_step
        )));
    }
    let step = if config.burn_in > 0 { adapt.adapted_step() } else { initial_step };
    stats.step_size = step;
    stats.burn_in_accept_rate = if config.burn_in > 0 { burn_accept / config.burn_in as f64 } else { 0.0 };

    let thin = config.thin();
    let mut chain = Chain {
        samples: Vec::with_capacity(config.n_samples),
        log_targets: Vec::with_capacity(config.n_samples),
        raw_step_index: Vec::with_capacity(config.n_samples),
        stats,
    };
    let post = config.n_samples * thin;
    let (mut accept, mut depth) = (0.0, 0usize);
    for k in 0..post {
        let (next, s) = nuts_step(target, &state, step, rng, config.max_tree_depth)?;
        state = next;
        accept += s.accept_stat;
        depth += s.tree_depth;
        chain.stats.leapfrog_steps += s.n_leapfrog as u64;
        chain.stats.divergences += s.divergent as usize;
        chain.stats.max_depth_hits += (s.tree_depth >= config.max_tree_depth) as usize;
        if (k + 1) % thin == 0 {
            chain.samples.push(state.position.clone());
            chain.log_targets.push(state.log_target);
            chain.raw_step_index.push(config.burn_in + k);
        }
    }
    chain.stats.accept_rate = accept / post as f64;
    chain.stats.mean_tree_depth = depth as f64 / post as f64;
    Ok(chain)
}

fn run_rwmh(config: &ChainConfig, target: &impl LogDensity, init: &[f64], rng: &mut ChaCha8Rng) -> Result<Chain> {
    let mut x = init.to_vec();
    let mut lp = target.log_density(&x);
    if !lp.is_finite() {
        return Err(Error::Numerical("initial position has a non-finite log target".into()));
    }
    let mut scale = config.rwmh_scale;
    let mut stats = empty_stats(config);
    let mut burn_accept = 0usize;
    for t in 0..config.burn_in {
        let (nx, nlp, ok) = rwmh_step(target, &x, lp, scale, rng);
        x = nx;
        lp = nlp;
        burn_accept += ok as usize;
        if config.rwmh_autotune {
            // Robbins-Monro on log scale
            let gain = (t as f64 + 1.0).powf(-0.6);
            scale *= (gain * (ok as u8 as f64 - config.rwmh_target_accept)).exp();
        }
        stats.adaptation_trace.push(scale);
    }
    stats.step_size = scale;
    stats.burn_in_accept_rate = if config.burn_in > 0 {
        burn_accept as f64 / config.burn_in as f64
    } else {
        0.0
    };

    let thin = config.thin();
    let mut chain = Chain {
        samples: Vec::with_capacity(config.n_samples),
        log_targets: Vec::with_capacity(config.n_samples),
        raw_step_index: Vec::with_capacity(config.n_samples),
        stats,
    };
    let post = config.n_samples * thin;
    let mut accepted = 0usize;
    for k in 0..post {
        let (nx, nlp, ok) = rwmh_step(target, &x, lp, scale, rng);
        x = nx;
        lp = nlp;
        accepted += ok as usize;
        if (k + 1) % thin == 0 {
            chain.samples.push(x.clone());
            chain.log_targets.push(lp);
            chain.raw_step_index.push(config.burn_in + k);
        }
    }
    chain.stats.accept_rate = accepted as f64 / post as f64;
    Ok(chain)
}

pub fn chain_meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the chain as CSV (`names..., log_target, raw_step_index`) and its
/// statistics to the sidecar JSON.
pub fn write_chain(path: &Path, chain: &Chain, names: &[&str]) -> Result<()> {
    if names.len() != chain.dim() && !chain.is_empty() {
        return Err(Error::dims("chain column names", chain.dim(), names.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    header.push("log_target".into());
    header.push("raw_step_index".into());
    w.write_record(&header)?;
    for ((s, lp), idx) in chain.samples.iter().zip(&chain.log_targets).zip(&chain.raw_step_index) {
        let mut rec: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        rec.push(lp.to_string());
        rec.push(idx.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = serde_json::to_string_pretty(&chain.stats)?;
    std::fs::write(chain_meta_path(path), meta + "\n")?;
    Ok(())
}

/// Reads a chain file and its sidecar; returns the parameter column names.
pub fn read_chain(path: &Path) -> Result<(Vec<String>, Chain)> {
    let file = path.display().to_string();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let n = header.len();
    if n < 3 || &header[n - 2] != "log_target" || &header[n - 1] != "raw_step_index" {
        return Err(Error::format(&file, "header must end with log_target,raw_step_index"));
    }
    let names: Vec<String> = header.iter().take(n - 2).map(str::to_string).collect();
    let mut samples = Vec::new();
    let mut log_targets = Vec::new();
    let mut raw = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::format(&file, format!("row {row} column {j} is not a number")))
        };
        samples.push((0..n - 2).map(parse).collect::<Result<Vec<_>>>()?);
        log_targets.push(parse(n - 2)?);
        raw.push(
            rec[n - 1]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::format(&file, format!("row {row} raw_step_index is not an integer")))?,
        );
    }
    let meta_text = std::fs::read_to_string(chain_meta_path(path))?;
    let stats: ChainStats = serde_json::from_str(&meta_text)?;
    Ok((
        names,
        Chain {
            samples,
            log_targets,
            raw_step_index: raw,
            stats,
        },
    ))
}
