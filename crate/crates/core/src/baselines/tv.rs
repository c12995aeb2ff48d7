use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::operators::{FnMap, ForwardOperator};
use crate::solvers::{pcg_solve, IterationRecord, Trace};
use crate::tensor::{ComplexVolume, Dims, KSpaceData};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Forward differences along x, y and t, stored component by component.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    dims: Dims,
    data: Vec<Complex64>,
}

impl GradientField {
    pub fn zeros(dims: Dims) -> Self {
        GradientField { dims, data: vec![ZERO; 3 * dims.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Component `a` (0 = x, 1 = y, 2 = t).
    pub fn component(&self, a: usize) -> &[Complex64] {
        let n = self.dims.len();
        &self.data[a * n..(a + 1) * n]
    }

    pub fn component_mut(&mut self, a: usize) -> &mut [Complex64] {
        let n = self.dims.len();
        &mut self.data[a * n..(a + 1) * n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Per-voxel magnitude `sqrt(sum_a |g_a|^2)`.
    pub fn magnitudes(&self) -> Vec<f64> {
        let n = self.dims.len();
        (0..n)
            .map(|i| (self.data[i].norm_sqr() + self.data[n + i].norm_sqr() + self.data[2 * n + i].norm_sqr()).sqrt())
            .collect()
    }
}

fn axis_step(dims: Dims, a: usize) -> (usize, usize) {
    match a {
        0 => (1, dims.nx),
        1 => (dims.nx, dims.ny),
        _ => (dims.frame_len(), dims.nt),
    }
}

fn coord(dims: Dims, i: usize, a: usize) -> usize {
    match a {
        0 => i % dims.nx,
        1 => (i / dims.nx) % dims.ny,
        _ => i / dims.frame_len(),
    }
}

/// Forward differences with a zero last difference on every axis.
pub fn grad3d(x: &ComplexVolume) -> GradientField {
    let dims = x.dims();
    let v = x.as_slice();
    let mut g = GradientField::zeros(dims);
    for a in 0..3 {
        let (step, n) = axis_step(dims, a);
        let comp = g.component_mut(a);
        for (i, c) in comp.iter_mut().enumerate() {
            if coord(dims, i, a) + 1 < n {
                *c = v[i + step] - v[i];
            }
        }
    }
    g
}

/// Divergence, the negative adjoint of [`grad3d`].
pub fn div3d(g: &GradientField) -> ComplexVolume {
    let dims = g.dims();
    let mut out = ComplexVolume::zeros(dims);
    let o = out.as_mut_slice();
    for a in 0..3 {
        let (step, n) = axis_step(dims, a);
        let comp = g.component(a);
        for (i, r) in o.iter_mut().enumerate() {
            let k = coord(dims, i, a);
            if k + 1 < n {
                *r += comp[i];
            }
            if k > 0 {
                *r -= comp[i - step];
            }
        }
    }
    out
}

/// Isotropic total variation `sum_voxels |grad x|`.
pub fn total_variation(x: &ComplexVolume) -> f64 {
    grad3d(x).magnitudes().iter().sum()
}

/// Shrinks every voxel's gradient vector towards zero by `tau` in length.
pub fn isotropic_shrinkage(g: &GradientField, tau: f64) -> Result<GradientField> {
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("shrinkage threshold must be >= 0, got {tau}")));
    }
    let n = g.dims().len();
    let mags = g.magnitudes();
    let mut out = g.clone();
    let data = out.as_mut_slice();
    for (i, &m) in mags.iter().enumerate() {
        let f = if m > tau { (m - tau) / m } else { 0.0 };
        for a in 0..3 {
            data[a * n + i] *= f;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvConfig {
    pub lambda: f64,
    pub rho: f64,
    /// ADMM outer iterations.
    pub iterations: usize,
    /// x/z sweeps per outer iteration before the dual update.
    pub shrink_iters: usize,
    pub pcg_iters: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig { lambda: 0.01, rho: 1.0, iterations: 16, shrink_iters: 1, pcg_iters: 4 }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.rho > 0.0) {
            return Err(Error::Config("TV needs lambda >= 0 and rho > 0".into()));
        }
        if self.iterations == 0 || self.shrink_iters == 0 || self.pcg_iters == 0 {
            return Err(Error::Config("TV iteration counts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TvOutcome {
    pub x: ComplexVolume,
    pub trace: Trace,
    /// Set when CG broke down; the trace holds the completed iterations.
    pub diverged: Option<String>,
}

/// ADMM on `1/2 ||A x - y||^2 + lambda ||grad x||_1` with the splitting
/// `z = grad x` and scaled dual `u`, starting from `A^H y`.
pub fn tv_admm_reconstruct(
    y: &KSpaceData,
    op: &dyn ForwardOperator,
    cfg: &TvConfig,
    reference: Option<&ComplexVolume>,
    crop: f64,
) -> Result<TvOutcome> {
    cfg.validate()?;
    op.check_kspace(y)?;
    let dims = op.dims();
    let xu = op.adjoint(y)?;
    let rho = cfg.rho;
    let system = FnMap::new(dims.len(), |v: &[Complex64]| {
        let vol = ComplexVolume::from_vec(dims, v.to_vec()).expect("conformable");
        let mut out = op.normal(&vol).expect("conformable").into_vec();
        let gtg = div3d(&grad3d(&vol));
        for (o, d) in out.iter_mut().zip(gtg.as_slice()) {
            *o -= d * rho;
        }
        out
    });
    let mut x = xu.clone();
    let mut z = grad3d(&x);
    let mut u = GradientField::zeros(dims);
    let mut trace = Trace::default();
    for k in 1..=cfg.iterations {
        let mut t_pcg = 0.0;
        let mut t_reg = 0.0;
        let prev = x.clone();
        for _ in 0..cfg.shrink_iters {
            let t0 = Instant::now();
            let mut zu = z.clone();
            for (a, b) in zu.as_mut_slice().iter_mut().zip(u.as_slice()) {
                *a -= b;
            }
            let mut c = xu.clone();
            for (ci, d) in c.as_mut_slice().iter_mut().zip(div3d(&zu).as_slice()) {
                *ci -= d * rho;
            }
            match pcg_solve(&system, c.as_slice(), Some(x.as_slice()), cfg.pcg_iters, 0.0) {
                Ok(out) => x = ComplexVolume::from_vec(dims, out.x)?,
                Err(Error::Divergence(msg)) => return Ok(TvOutcome { x: prev, trace, diverged: Some(msg) }),
                Err(e) => return Err(e),
            }
            t_pcg += t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let mut gu = grad3d(&x);
            for (a, b) in gu.as_mut_slice().iter_mut().zip(u.as_slice()) {
                *a += b;
            }
            z = isotropic_shrinkage(&gu, cfg.lambda / rho)?;
            t_reg += t1.elapsed().as_secs_f64();
        }
        let gx = grad3d(&x);
        for ((ui, g), zi) in u.as_mut_slice().iter_mut().zip(gx.as_slice()).zip(z.as_slice()) {
            *ui += g - zi;
        }
        let fidelity = {
            let r = op.forward(&x)?;
            r.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
        };
        let pn = prev.norm_sqr();
        let metrics = reference.map(|r| MetricsRecord::compute(&x, r, crop)).transpose()?;
        trace.records.push(IterationRecord {
            iteration: k,
            e_k: if pn > 0.0 { x.sub(&prev)?.norm_sqr() / pn } else { f64::INFINITY },
            fidelity,
            train_loss: gx.magnitudes().iter().sum(),
            psnr: metrics.as_ref().map(|m| m.psnr),
            ssim: metrics.as_ref().map(|m| m.ssim),
            nrmse: metrics.as_ref().map(|m| m.nrmse),
            t_train_s: 0.0,
            t_reg_s: t_reg,
            t_pcg_s: t_pcg,
        });
        if !x.is_finite() {
            return Ok(TvOutcome { x: prev, trace, diverged: Some("non-finite iterate".into()) });
        }
    }
    Ok(TvOutcome { x, trace, diverged: None })
}
