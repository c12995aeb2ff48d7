use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dictionary::Dictionary;
use super::itkrm::itkrm_train;
use super::omp::omp_sparse_code;
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::MetricsRecord;
use crate::operators::{ForwardOperator, NormalSystem};
use crate::patches::{extract_patches, reassemble_raw, PatchGeometry, PatchSet};
use crate::solvers::{solve_volume, IterationRecord, StopReason, Trace};
use crate::tensor::{ComplexVolume, KSpaceData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DicConfig {
    pub lambda: f64,
    pub iterations: usize,
    pub patch: [usize; 3],
    pub stride: [usize; 3],
    pub sparsity: usize,
    pub atoms: usize,
    /// ITKrM passes in the first outer iteration.
    pub initial_train_iters: usize,
    /// ITKrM passes in later outer iterations, warm-started.
    pub train_iters: usize,
    pub pcg_iters: usize,
    pub seed: u64,
}

impl Default for DicConfig {
    fn default() -> Self {
        DicConfig {
            lambda: 0.1,
            iterations: 16,
            patch: [4, 4, 4],
            stride: [2, 2, 2],
            sparsity: 16,
            atoms: 64,
            initial_train_iters: 10,
            train_iters: 1,
            pcg_iters: 4,
            seed: 0,
        }
    }
}

impl DicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.iterations == 0 || self.pcg_iters == 0 || self.atoms == 0 || self.sparsity == 0 {
            return Err(Error::Config("iterations, pcg_iters, atoms and sparsity must be >= 1".into()));
        }
        if self.sparsity > self.atoms {
            return Err(Error::Config("sparsity exceeds the number of atoms".into()));
        }
        Ok(())
    }

    pub fn geometry(&self, op: &dyn ForwardOperator) -> Result<PatchGeometry> {
        PatchGeometry::new(op.dims(), self.patch, self.stride)
    }
}

#[derive(Clone, Debug, Default)]
pub struct DicOptions<'a> {
    pub reference: Option<&'a ComplexVolume>,
    pub crop: Option<f64>,
    pub initial_x: Option<ComplexVolume>,
    pub initial_dict: Option<Dictionary>,
    /// Skip dictionary training and use `initial_dict` throughout.
    pub freeze_dict: bool,
}

#[derive(Clone, Debug)]
pub struct DicOutcome {
    pub x: ComplexVolume,
    pub dict: Dictionary,
    pub trace: Trace,
    pub stop: StopReason,
}

/// Real and imaginary parts of every patch as separate mean-removed real
/// vectors (patch `j` gives rows `2j` and `2j + 1`), plus the removed means.
pub fn patch_training_vectors(patches: &PatchSet) -> (Vec<f64>, Vec<f64>) {
    let d = patches.patch_len();
    let mut vectors = Vec::with_capacity(2 * patches.len() * d);
    let mut means = Vec::with_capacity(2 * patches.len());
    for j in 0..patches.len() {
        let p = patches.patch(j);
        for part in 0..2 {
            let vals: Vec<f64> = p.iter().map(|z| if part == 0 { z.re } else { z.im }).collect();
            let m = vals.iter().sum::<f64>() / d as f64;
            vectors.extend(vals.iter().map(|v| v - m));
            means.push(m);
        }
    }
    (vectors, means)
}

/// Sparse-codes every training vector and rebuilds the complex patches,
/// returning them with the largest support size seen.
fn sparse_patches(
    dict: &Dictionary,
    geometry: &PatchGeometry,
    vectors: &[f64],
    means: &[f64],
    s: usize,
) -> Result<(PatchSet, usize)> {
    let d = dict.dim();
    let rows: Vec<&[f64]> = vectors.chunks_exact(d).collect();
    let coded = exec::map_slice(&rows, |v| omp_sparse_code(dict, v, s));
    let mut data = vec![Complex64::new(0.0, 0.0); rows.len() / 2 * d];
    let mut max_support = 0;
    for (n, code) in coded.into_iter().enumerate() {
        let code = code?;
        max_support = max_support.max(code.support_len());
        let approx = dict.synthesize(&code.coeffs);
        let dst = &mut data[(n / 2) * d..(n / 2 + 1) * d];
        for (z, a) in dst.iter_mut().zip(approx) {
            if n % 2 == 0 {
                z.re = a + means[n];
            } else {
                z.im = a + means[n];
            }
        }
    }
    Ok((PatchSet::from_vec(*geometry, data)?, max_support))
}

/// Dictionary-learning reconstruction: ITKrM on the current patches, OMP
/// coding of every patch, then warm-started CG on the same normal system as
/// the network-based scheme.
pub fn dic_reconstruct(
    y: &KSpaceData,
    op: &dyn ForwardOperator,
    cfg: &DicConfig,
    opts: &DicOptions<'_>,
) -> Result<DicOutcome> {
    cfg.validate()?;
    op.check_kspace(y)?;
    let geometry = cfg.geometry(op)?;
    let d = geometry.patch_len();
    let system = NormalSystem::new(op, &geometry, cfg.lambda)?;
    let xu = op.adjoint(y)?;
    let mut x = match &opts.initial_x {
        Some(x0) => {
            op.check_volume(x0)?;
            x0.clone()
        }
        None => xu.clone(),
    };
    let mut dict = match &opts.initial_dict {
        Some(dc) if dc.dim() == d && dc.atoms() >= cfg.sparsity => dc.clone(),
        Some(_) => return Err(Error::Config("initial dictionary does not match the patch size or sparsity".into())),
        None if opts.freeze_dict => {
            return Err(Error::Config("frozen dictionary needs an initial dictionary".into()));
        }
        None => Dictionary::random(d, cfg.atoms, cfg.seed)?,
    };
    let crop = opts.crop.unwrap_or(crate::metrics::DEFAULT_CROP);
    let mut trace = Trace::default();
    let mut k = 0;
    let stop = loop {
        if k >= cfg.iterations {
            break StopReason::MaxIterations;
        }
        let x_norm_sqr = x.norm_sqr();
        if x_norm_sqr == 0.0 {
            break StopReason::DegenerateInput;
        }
        let t0 = Instant::now();
        let patches = extract_patches(&x, &geometry)?;
        let (vectors, means) = patch_training_vectors(&patches);
        let mut train_error = f64::NAN;
        if !opts.freeze_dict {
            let passes = if k == 0 { cfg.initial_train_iters } else { cfg.train_iters };
            if passes > 0 {
                let out = itkrm_train(&dict, &vectors, cfg.sparsity, passes)?;
                train_error = out.pass_errors.last().copied().unwrap_or(f64::NAN);
                dict = out.dict;
            }
        }
        let t_train = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let (z, max_support) = sparse_patches(&dict, &geometry, &vectors, &means, cfg.sparsity)?;
        debug_assert!(max_support <= cfg.sparsity);
        let raw = reassemble_raw(&z);
        let t_reg = t1.elapsed().as_secs_f64();
        if train_error.is_nan() {
            let approx: f64 = z.as_slice().iter().zip(patches.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum();
            train_error = approx.sqrt();
        }

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
        let e = next.sub(&x)?.norm_sqr() / x_norm_sqr;
        x = next;
        k += 1;
        let metrics = opts.reference.map(|r| MetricsRecord::compute(&x, r, crop)).transpose()?;
        let r = op.forward(&x)?;
        let fidelity = r.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        trace.records.push(IterationRecord {
            iteration: k,
            e_k: e,
            fidelity,
            train_loss: train_error,
            psnr: metrics.as_ref().map(|m| m.psnr),
            ssim: metrics.as_ref().map(|m| m.ssim),
            nrmse: metrics.as_ref().map(|m| m.nrmse),
            t_train_s: t_train,
            t_reg_s: t_reg,
            t_pcg_s: t_pcg,
        });
    };
    Ok(DicOutcome { x, dict, trace, stop })
}
