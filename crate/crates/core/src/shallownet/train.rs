use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{Engine, Padding};
use super::{NetMode, NetworkParams};
use crate::error::{Error, Result};
use crate::exec;
use crate::patches::PatchSet;

/// Adam settings for step (R1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of Adam updates (one minibatch gradient each).
    pub n_backprops: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight of the kernel penalty `R(theta)`.
    pub penalty_weight: f64,
    /// Minibatch size; `None` means `min(64, number of samples)`.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_backprops: 400,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            penalty_weight: 1e-4,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_backprops == 0 {
            return Err(Error::Config("n_backprops must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !(self.penalty_weight >= 0.0) {
            return Err(Error::Config("epsilon must be > 0 and penalty weight >= 0".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Full-set loss at the initial parameters.
    pub entry_loss: f64,
    /// Full-set loss at the returned parameters.
    pub exit_loss: f64,
    /// True when the optimized parameters were worse than the initial ones
    /// and the initial parameters were returned instead.
    pub kept_initial: bool,
}

/// One network input: patch index and, in real mode, which part.
type Sample = (usize, usize);

fn samples(mode: NetMode, n_patches: usize) -> Vec<Sample> {
    let parts = match mode {
        NetMode::Complex => 1,
        NetMode::Real => 2,
    };
    (0..n_patches).flat_map(|j| (0..parts).map(move |p| (j, p))).collect()
}

fn sample_input(mode: NetMode, patches: &PatchSet, (j, part): Sample) -> Vec<f64> {
    let p = patches.patch(j);
    match mode {
        NetMode::Complex => p.iter().map(|z| z.re).chain(p.iter().map(|z| z.im)).collect(),
        NetMode::Real if part == 0 => p.iter().map(|z| z.re).collect(),
        NetMode::Real => p.iter().map(|z| z.im).collect(),
    }
}

fn check(params: &NetworkParams, patches: &PatchSet) -> Result<()> {
    if patches.is_empty() {
        return Err(Error::Precondition("training needs at least one patch".into()));
    }
    if !params.is_finite() {
        return Err(Error::Precondition("non-finite network parameters".into()));
    }
    Ok(())
}

/// `(lambda/2) * sum ||q - f(q)||^2` over the given samples and its
/// gradient, reduced in sample order.
fn data_term(
    params: &NetworkParams,
    patches: &PatchSet,
    batch: &[Sample],
    lambda: f64,
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let engine = Engine::new(params, patches.geometry().patch_dims(), Padding::Zero);
    let mode = params.mode();
    let per_sample = exec::map_slice(batch, |&s| {
        let input = sample_input(mode, patches, s);
        let mut ws = engine.workspace();
        let mut out = vec![0.0; input.len()];
        engine.forward(&input, &mut ws, &mut out);
        let mut loss = 0.0;
        let mut dout = vec![0.0; input.len()];
        for ((g, o), i) in dout.iter_mut().zip(&out).zip(&input) {
            let r = o - i;
            loss += r * r;
            *g = lambda * r;
        }
        if !with_grad {
            return (0.5 * lambda * loss, Vec::new());
        }
        let mut grad = vec![0.0; params.len()];
        let mut dwt = vec![0.0; engine.kernel_grad_len()];
        engine.backward(&ws, &dout, &mut grad, &mut dwt);
        engine.fold_kernel_grad(&dwt, &mut grad);
        (0.5 * lambda * loss, grad)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; if with_grad { params.len() } else { 0 }];
    for (l, g) in per_sample {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (loss, grad)
}

fn add_penalty(params: &NetworkParams, penalty_weight: f64, grad: &mut [f64]) {
    for (g, w) in grad.iter_mut().zip(params.kernels()) {
        *g += 2.0 * penalty_weight * w;
    }
}

/// Full-set loss `(lambda/2) sum_j ||q_j - f(q_j)||^2 + w * R(theta)`.
pub fn full_loss(params: &NetworkParams, patches: &PatchSet, lambda: f64, penalty_weight: f64) -> Result<f64> {
    check(params, patches)?;
    let all = samples(params.mode(), patches.len());
    let (l, _) = data_term(params, patches, &all, lambda, false);
    Ok(l + penalty_weight * params.kernel_penalty())
}

/// Loss of step (R1) over all patches and its exact gradient with respect
/// to every parameter. ReLU has subgradient 0 at 0.
pub fn loss_and_gradient(
    params: &NetworkParams,
    patches: &PatchSet,
    lambda: f64,
    penalty_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    check(params, patches)?;
    let all = samples(params.mode(), patches.len());
    let (l, mut g) = data_term(params, patches, &all, lambda, true);
    add_penalty(params, penalty_weight, &mut g);
    Ok((l + penalty_weight * params.kernel_penalty(), g))
}

/// Adam on minibatches taken cyclically from one seeded shuffle of the
/// samples. The data gradient of a batch of size `B` is scaled by `n/B` so
/// it estimates the full-set gradient. If the final parameters have a
/// larger full-set loss than `init`, `init` is returned.
pub fn train(init: &NetworkParams, patches: &PatchSet, lambda: f64, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check(init, patches)?;
    let all = samples(init.mode(), patches.len());
    let n = all.len();
    let batch = cfg.batch_size.unwrap_or(64).min(n);
    let mut order = all.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let entry_loss = full_loss(init, patches, lambda, cfg.penalty_weight)?;
    let mut params = init.clone();
    let q = params.len();
    let mut m = vec![0.0; q];
    let mut v = vec![0.0; q];
    let scale = n as f64 / batch as f64;
    let mut cursor = 0;
    let mut minibatch = Vec::with_capacity(batch);
    for step in 1..=cfg.n_backprops {
        minibatch.clear();
        for _ in 0..batch {
            minibatch.push(order[cursor]);
            cursor = (cursor + 1) % n;
        }
        let (_, mut g) = data_term(&params, patches, &minibatch, lambda, true);
        g.iter_mut().for_each(|x| *x *= scale);
        add_penalty(&params, cfg.penalty_weight, &mut g);
        let c1 = 1.0 - cfg.beta1.powi(step as i32);
        let c2 = 1.0 - cfg.beta2.powi(step as i32);
        for i in 0..q {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            params.as_mut_slice()[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
        if !params.is_finite() {
            return Err(Error::Divergence(format!("network parameters became non-finite at step {step}")));
        }
    }
    let exit_loss = full_loss(&params, patches, lambda, cfg.penalty_weight)?;
    if exit_loss > entry_loss {
        return Ok(TrainOutcome { params: init.clone(), entry_loss, exit_loss: entry_loss, kept_initial: true });
    }
    Ok(TrainOutcome { params, entry_loss, exit_loss, kept_initial: false })
}
