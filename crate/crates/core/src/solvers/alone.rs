use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cg::solve_volume;
use super::trace::{IterationRecord, Trace};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::operators::{ForwardOperator, NormalSystem};
use crate::patches::{extract_patches, reassemble_raw, PatchGeometry, PatchSet};
use crate::shallownet::{train, NetMode, NetworkParams, TrainConfig};
use crate::tensor::{dot_conj, ComplexVolume, KSpaceData};

/// Settings of the alternating reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AloneConfig {
    pub lambda: f64,
    /// Maximum number of outer iterations `T`.
    pub iterations: usize,
    /// Stop once the squared relative change drops to this value.
    pub epsilon: f64,
    /// CG steps per x-update.
    pub pcg_iters: usize,
    /// Number of first-layer filters `K`.
    pub filters: usize,
    pub mode: NetMode,
    pub patch: [usize; 3],
    pub stride: [usize; 3],
    /// Initialize each training run from the previous parameters.
    pub warm_start: bool,
    pub n_backprops: usize,
    pub learning_rate: f64,
    pub penalty_weight: f64,
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for AloneConfig {
    fn default() -> Self {
        AloneConfig {
            lambda: 0.1,
            iterations: 25,
            epsilon: 0.0,
            pcg_iters: 4,
            filters: 16,
            mode: NetMode::Complex,
            patch: [16, 16, 4],
            stride: [8, 8, 2],
            warm_start: true,
            n_backprops: 400,
            learning_rate: 1e-3,
            penalty_weight: 1e-4,
            batch_size: None,
            seed: 0,
        }
    }
}

impl AloneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.iterations == 0 || self.pcg_iters == 0 || self.filters == 0 {
            return Err(Error::Config("iterations, pcg_iters and filters must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        self.train_config(0).validate()
    }

    /// Adam settings for outer iteration `k`.
    pub fn train_config(&self, k: usize) -> TrainConfig {
        TrainConfig {
            n_backprops: self.n_backprops,
            learning_rate: self.learning_rate,
            penalty_weight: self.penalty_weight,
            batch_size: self.batch_size,
            seed: self.seed.wrapping_add(1 + k as u64),
            ..TrainConfig::default()
        }
    }

    pub fn geometry(&self, op: &dyn ForwardOperator) -> Result<PatchGeometry> {
        PatchGeometry::new(op.dims(), self.patch, self.stride)
    }
}

#[derive(Clone, Debug, Default)]
pub struct AloneOptions<'a> {
    /// Ground truth for per-iteration metrics.
    pub reference: Option<&'a ComplexVolume>,
    pub crop: Option<f64>,
    /// Starting image instead of `A^H y`.
    pub initial_x: Option<ComplexVolume>,
    /// Starting network instead of a seeded random one.
    pub initial_theta: Option<NetworkParams>,
    /// Skip step (R1) and use `initial_theta` throughout.
    pub freeze_theta: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    MaxIterations,
    Converged,
    /// The current iterate was zero, so the relative change is undefined.
    DegenerateInput,
    Diverged(String),
}

#[derive(Clone, Debug)]
pub struct AloneOutcome {
    pub x: ComplexVolume,
    pub theta: NetworkParams,
    pub trace: Trace,
    pub stop: StopReason,
}

/// `sum_j E_j^T z_j` with `z_j = denorm(f_theta(norm(E_j x)))`, given the
/// already normalized patches of `x`.
pub fn regularized_patch_sum(theta: &NetworkParams, normalized: &PatchSet) -> Result<ComplexVolume> {
    if !normalized.is_normalized() {
        return Err(Error::Precondition("patches must be normalized".into()));
    }
    let mut z = normalized.clone();
    theta.apply_to_patches(&mut z);
    z.denormalize();
    Ok(reassemble_raw(&z))
}

/// `||A x - y||` from the normal operator: `<A^H A x, x> - 2 Re <x, A^H y> + ||y||^2`.
fn fidelity(op: &dyn ForwardOperator, x: &ComplexVolume, xu: &ComplexVolume, y_norm_sqr: f64) -> Result<f64> {
    let n = op.normal(x)?;
    let q = dot_conj(n.as_slice(), x.as_slice()).re - 2.0 * dot_conj(x.as_slice(), xu.as_slice()).re + y_norm_sqr;
    Ok(q.max(0.0).sqrt())
}

/// The alternating scheme: train the network on the normalized patches of
/// the current image, regularize every patch with it, and take `pcg_iters`
/// warm-started CG steps on `H x = A^H y + lambda sum_j E_j^T z_j`.
pub fn alone_reconstruct(
    y: &KSpaceData,
    op: &dyn ForwardOperator,
    cfg: &AloneConfig,
    opts: &AloneOptions<'_>,
) -> Result<AloneOutcome> {
    cfg.validate()?;
    op.check_kspace(y)?;
    let geometry = cfg.geometry(op)?;
    let system = NormalSystem::new(op, &geometry, cfg.lambda)?;
    let xu = op.adjoint(y)?;
    let y_norm_sqr = y.norm().powi(2);
    let mut x = match &opts.initial_x {
        Some(x0) => {
            op.check_volume(x0)?;
            x0.clone()
        }
        None => xu.clone(),
    };
    let mut theta = match &opts.initial_theta {
        Some(t) => t.clone(),
        None if opts.freeze_theta => {
            return Err(Error::Config("frozen training needs initial network parameters".into()));
        }
        None => NetworkParams::random(cfg.mode, cfg.filters, cfg.seed)?,
    };
    let crop = opts.crop.unwrap_or(crate::metrics::DEFAULT_CROP);
    let mut trace = Trace::default();
    let mut e = f64::INFINITY;
    let mut k = 0;
    let stop = loop {
        if k >= cfg.iterations {
            break StopReason::MaxIterations;
        }
        if k > 0 && e <= cfg.epsilon {
            break StopReason::Converged;
        }
        let x_norm_sqr = x.norm_sqr();
        if x_norm_sqr == 0.0 {
            break StopReason::DegenerateInput;
        }
        let t0 = Instant::now();
        let mut patches = extract_patches(&x, &geometry)?;
        patches.normalize();
        let train_loss;
        if !opts.freeze_theta {
            let init = if cfg.warm_start || k == 0 {
                theta.clone()
            } else {
                NetworkParams::random(cfg.mode, cfg.filters, cfg.seed.wrapping_add(1000 + k as u64))?
            };
            match train(&init, &patches, cfg.lambda, &cfg.train_config(k)) {
                Ok(out) => {
                    theta = out.params;
                    train_loss = out.exit_loss;
                }
                Err(Error::Divergence(msg)) => break StopReason::Diverged(msg),
                Err(err) => return Err(err),
            }
        } else {
            train_loss = crate::shallownet::full_loss(&theta, &patches, cfg.lambda, cfg.penalty_weight)?;
        }
        let t_train = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let raw = regularized_patch_sum(&theta, &patches)?;
        let t_reg = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let c = system.rhs(&xu, &raw)?;
        let next = match solve_volume(&system, &c, &x, cfg.pcg_iters, 0.0) {
            Ok((next, _)) => next,
            Err(Error::Divergence(msg)) => break StopReason::Diverged(msg),
            Err(err) => return Err(err),
        };
        let t_pcg = t2.elapsed().as_secs_f64();
        if !next.is_finite() {
            break StopReason::Diverged(format!("non-finite iterate at iteration {}", k + 1));
        }

        e = next.sub(&x)?.norm_sqr() / x_norm_sqr;
        x = next;
        k += 1;
        let metrics = opts.reference.map(|r| MetricsRecord::compute(&x, r, crop)).transpose()?;
        trace.records.push(IterationRecord {
            iteration: k,
            e_k: e,
            fidelity: fidelity(op, &x, &xu, y_norm_sqr)?,
            train_loss,
            psnr: metrics.as_ref().map(|m| m.psnr),
            ssim: metrics.as_ref().map(|m| m.ssim),
            nrmse: metrics.as_ref().map(|m| m.nrmse),
            t_train_s: t_train,
            t_reg_s: t_reg,
            t_pcg_s: t_pcg,
        });
    };
    Ok(AloneOutcome { x, theta, trace, stop })
}
