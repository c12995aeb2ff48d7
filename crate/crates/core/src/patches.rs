//! Patch extraction `E_j`, its adjoint `E_j^T`, coverage weights
//! `sum_j E_j^T E_j`, and per-patch normalization.
//!
//! Patches are enumerated with the x offset fastest, then y, then t, and a
//! patch is flattened in the same axis order as volumes (x fastest).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{ComplexVolume, Dims};

/// Patch shape and strides over an image grid. Construction enforces exact
/// tiling: `(N_a - p_a)` divisible by `s_a` on every axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    patch: [usize; 3],
    stride: [usize; 3],
    image: Dims,
}

impl PatchGeometry {
    pub fn new(image: Dims, patch: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        let n = image.as_array();
        for a in 0..3 {
            let (p, s, na) = (patch[a], stride[a], n[a]);
            if p < 1 || p > na {
                return Err(Error::Geometry(format!(
                    "axis {a}: patch size {p} outside 1..={na}"
                )));
            }
            if s < 1 || s > p {
                return Err(Error::Geometry(format!("axis {a}: stride {s} outside 1..={p}")));
            }
            if (na - p) % s != 0 {
                return Err(Error::Geometry(format!(
                    "axis {a}: (N - p) = {} not divisible by stride {s}",
                    na - p
                )));
            }
        }
        Ok(PatchGeometry { patch, stride, image })
    }

    pub fn image(&self) -> Dims {
        self.image
    }

    pub fn patch_dims(&self) -> [usize; 3] {
        self.patch
    }

    pub fn strides(&self) -> [usize; 3] {
        self.stride
    }

    /// Voxels per patch, `d`.
    pub fn patch_len(&self) -> usize {
        self.patch.iter().product()
    }

    /// Patch positions along each axis.
    pub fn positions(&self) -> [usize; 3] {
        let n = self.image.as_array();
        [0, 1, 2].map(|a| (n[a] - self.patch[a]) / self.stride[a] + 1)
    }

    /// Number of patches `p`.
    pub fn count(&self) -> usize {
        self.positions().iter().product()
    }

    /// Voxel offset of patch `j`.
    pub fn offset(&self, j: usize) -> [usize; 3] {
        let [qx, qy, _] = self.positions();
        let ix = j % qx;
        let iy = (j / qx) % qy;
        let it = j / (qx * qy);
        [ix * self.stride[0], iy * self.stride[1], it * self.stride[2]]
    }

    /// Same geometry over a different image size.
    pub fn with_image(&self, image: Dims) -> Result<Self> {
        PatchGeometry::new(image, self.patch, self.stride)
    }
}

/// `p = prod_a ((N_a - p_a) / s_a + 1)`.
pub fn count_patches(geometry: &PatchGeometry) -> usize {
    geometry.count()
}

/// Mean/std record of one normalized patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchNorm {
    pub mean: f64,
    pub std: f64,
    /// Constant patch; left untouched by normalization.
    pub constant: bool,
}

impl PatchNorm {
    pub const IDENTITY: PatchNorm = PatchNorm { mean: 0.0, std: 1.0, constant: true };
}

const CONSTANT_STD: f64 = 1e-12;

/// Subtracts the joint mean of all real and imaginary parts and divides by
/// their population standard deviation. Constant patches pass through.
pub fn normalize_patch(patch: &mut [Complex64]) -> PatchNorm {
    let n = (2 * patch.len()) as f64;
    let mean = patch.iter().map(|z| z.re + z.im).sum::<f64>() / n;
    let var = patch
        .iter()
        .map(|z| (z.re - mean).powi(2) + (z.im - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std >= CONSTANT_STD) {
        return PatchNorm::IDENTITY;
    }
    let inv = 1.0 / std;
    for z in patch.iter_mut() {
        *z = Complex64::new((z.re - mean) * inv, (z.im - mean) * inv);
    }
    PatchNorm { mean, std, constant: false }
}

pub fn denormalize_patch(patch: &mut [Complex64], rec: &PatchNorm) {
    if rec.constant {
        return;
    }
    for z in patch.iter_mut() {
        *z = Complex64::new(z.re * rec.std + rec.mean, z.im * rec.std + rec.mean);
    }
}

/// The collection `E(x) = (E_1 x, ..., E_p x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    geometry: PatchGeometry,
    data: Vec<Complex64>,
    norms: Option<Vec<PatchNorm>>,
}

impl PatchSet {
    /// Wraps raw patch data (`p * d` samples, patch-major).
    pub fn from_vec(geometry: PatchGeometry, data: Vec<Complex64>) -> Result<Self> {
        let want = geometry.count() * geometry.patch_len();
        if data.len() != want {
            return Err(Error::Geometry(format!("patch data has {} samples, need {want}", data.len())));
        }
        Ok(PatchSet { geometry, data, norms: None })
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.geometry.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_len(&self) -> usize {
        self.geometry.patch_len()
    }

    pub fn patch(&self, j: usize) -> &[Complex64] {
        let d = self.patch_len();
        &self.data[j * d..(j + 1) * d]
    }

    pub fn patch_mut(&mut self, j: usize) -> &mut [Complex64] {
        let d = self.patch_len();
        &mut self.data[j * d..(j + 1) * d]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn norms(&self) -> Option<&[PatchNorm]> {
        self.norms.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.norms.is_some()
    }

    /// Normalizes every patch in place and keeps the records.
    pub fn normalize(&mut self) {
        if self.norms.is_some() {
            return;
        }
        let d = self.patch_len();
        self.norms = Some(exec::map_chunks_mut(&mut self.data, d, |_, p| normalize_patch(p)));
    }

    /// Reverses `normalize`.
    pub fn denormalize(&mut self) {
        if let Some(norms) = self.norms.take() {
            let d = self.patch_len();
            exec::for_each_chunk_mut(&mut self.data, d, |j, p| denormalize_patch(p, &norms[j]));
        }
    }

    /// Attaches normalization records, e.g. after replacing normalized
    /// patch data with network outputs, so that `denormalize` maps back.
    pub fn set_norms(&mut self, norms: Vec<PatchNorm>) -> Result<()> {
        if norms.len() != self.len() {
            return Err(Error::Geometry("norm record count mismatch".into()));
        }
        self.norms = Some(norms);
        Ok(())
    }

    pub fn take_norms(&mut self) -> Option<Vec<PatchNorm>> {
        self.norms.take()
    }
}

fn check_image(x: &ComplexVolume, geometry: &PatchGeometry) -> Result<()> {
    if x.dims() != geometry.image() {
        return Err(Error::Geometry(format!(
            "volume {} does not match patch geometry image {}",
            x.dims(),
            geometry.image()
        )));
    }
    Ok(())
}

/// `E_j x` for all `j`.
pub fn extract_patches(x: &ComplexVolume, geometry: &PatchGeometry) -> Result<PatchSet> {
    check_image(x, geometry)?;
    let d = geometry.patch_len();
    let mut data = vec![Complex64::new(0.0, 0.0); geometry.count() * d];
    let dims = geometry.image();
    let [px, py, pt] = geometry.patch_dims();
    let src = x.as_slice();
    exec::for_each_chunk_mut(&mut data, d, |j, patch| {
        let [ox, oy, ot] = geometry.offset(j);
        let mut k = 0;
        for t in 0..pt {
            for y in 0..py {
                let row = dims.index(ox, oy + y, ot + t);
                patch[k..k + px].copy_from_slice(&src[row..row + px]);
                k += px;
            }
        }
    });
    Ok(PatchSet { geometry: *geometry, data, norms: None })
}

/// `sum_j E_j^T z_j` with no overlap weighting. Accumulation order per voxel
/// is ascending `j` regardless of threading.
pub fn reassemble_raw(patches: &PatchSet) -> ComplexVolume {
    let g = patches.geometry();
    let dims = g.image();
    let [px, py, pt] = g.patch_dims();
    let [qx, qy, qt] = g.positions();
    let st = g.strides()[2];
    let mut out = ComplexVolume::zeros(dims);
    exec::for_each_chunk_mut(out.as_mut_slice(), dims.frame_len(), |t, frame| {
        // patch rows along t covering frame t, in ascending order
        for it in 0..qt {
            let ot = it * st;
            if t < ot || t >= ot + pt {
                continue;
            }
            let lt = t - ot;
            for iy in 0..qy {
                for ix in 0..qx {
                    let j = ix + qx * (iy + qy * it);
                    let [ox, oy, _] = g.offset(j);
                    let p = patches.patch(j);
                    for y in 0..py {
                        let src = &p[(lt * py + y) * px..(lt * py + y + 1) * px];
                        let dst = &mut frame[(oy + y) * dims.nx + ox..][..px];
                        for (a, b) in dst.iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
            }
        }
    });
    out
}

/// `W^{-1} sum_j E_j^T z_j`, averaging overlaps by coverage count.
pub fn reassemble_patches(patches: &PatchSet) -> Result<ComplexVolume> {
    let w = coverage_weights(patches.geometry());
    if let Some(i) = w.iter().position(|&c| c == 0.0) {
        return Err(Error::Geometry(format!("voxel {i} is not covered by any patch")));
    }
    let mut out = reassemble_raw(patches);
    for (z, c) in out.as_mut_slice().iter_mut().zip(&w) {
        *z /= *c;
    }
    Ok(out)
}

/// Diagonal of `sum_j E_j^T E_j`: how many patches contain each voxel.
pub fn coverage_weights(geometry: &PatchGeometry) -> Vec<f64> {
    let dims = geometry.image();
    let n = dims.as_array();
    let p = geometry.patch_dims();
    let s = geometry.strides();
    let q = geometry.positions();
    // per-axis counts factorize
    let axis: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            (0..n[a])
                .map(|i| {
                    (0..q[a])
                        .filter(|&k| {
                            let o = k * s[a];
                            i >= o && i < o + p[a]
                        })
                        .count() as f64
                })
                .collect()
        })
        .collect();
    let mut w = Vec::with_capacity(dims.len());
    for t in 0..dims.nt {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                w.push(axis[0][x] * axis[1][y] * axis[2][t]);
            }
        }
    }
    w
}
