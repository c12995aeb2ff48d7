//! Complex volume and k-space containers plus the handful of complex
//! vector primitives the solvers need.
//!
//! Volumes are stored with `x` fastest, then `y`, then `t`, so a frame is a
//! contiguous slice of `nx * ny` samples.

mod io;

pub use io::{
    load_kspace, load_volume, read_kspace, read_volume, save_kspace, save_volume,
    write_kspace, write_magnitude_csv, write_volume, KSPACE_MAGIC, VOLUME_MAGIC,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Spatial-temporal grid size of a dynamic image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nt: usize) -> Self {
        Dims { nx, ny, nt }
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn frame_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, t: usize) -> usize {
        x + self.nx * (y + self.ny * t)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nt]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nt)
    }
}

/// A dynamic complex image.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVolume {
    dims: Dims,
    data: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn zeros(dims: Dims) -> Self {
        ComplexVolume { dims, data: vec![Complex64::new(0.0, 0.0); dims.len()] }
    }

    pub fn from_elem(dims: Dims, value: Complex64) -> Self {
        ComplexVolume { dims, data: vec![value; dims.len()] }
    }

    /// Wraps `data`, rejecting wrong lengths and non-finite samples.
    pub fn from_vec(dims: Dims, data: Vec<Complex64>) -> Result<Self> {
        if dims.nx == 0 || dims.ny == 0 || dims.nt == 0 {
            return dim_err(format!("volume dims must be positive, got {dims}"));
        }
        if data.len() != dims.len() {
            return dim_err(format!(
                "volume {dims} needs {} samples, got {}",
                dims.len(),
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Precondition(format!("non-finite sample at index {i}")));
        }
        Ok(ComplexVolume { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for t in 0..dims.nt {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, t));
                }
            }
        }
        ComplexVolume { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> Complex64 {
        self.data[self.dims.index(x, y, t)]
    }

    pub fn set(&mut self, x: usize, y: usize, t: usize, v: Complex64) {
        let i = self.dims.index(x, y, t);
        self.data[i] = v;
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let n = self.dims.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.data).sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return dim_err(format!("expected volume {dims}, got {}", self.dims));
        }
        Ok(())
    }

    /// `self - other`, element-wise.
    pub fn sub(&self, other: &ComplexVolume) -> Result<ComplexVolume> {
        other.check_dims(self.dims)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(ComplexVolume { dims: self.dims, data })
    }

    pub fn scaled(&self, s: Complex64) -> ComplexVolume {
        ComplexVolume { dims: self.dims, data: self.data.iter().map(|z| z * s).collect() }
    }
}

/// Which sampling scheme produced a k-space vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingKind {
    /// Masked Cartesian grid; samples are the mask-selected FFT bins in
    /// raster order.
    Cartesian,
    /// Radial spokes; samples are spoke-major, `samples_per_spoke` each.
    Radial { samples_per_spoke: usize },
}

/// Shape of a k-space vector: ordered frame-major, then coil, then sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleLayout {
    pub dims: Dims,
    pub n_coils: usize,
    /// Number of samples acquired per coil in each frame.
    pub frame_counts: Vec<usize>,
    pub kind: SamplingKind,
}

impl SampleLayout {
    pub fn len(&self) -> usize {
        self.frame_counts.iter().sum::<usize>() * self.n_coils
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of the first sample of frame `t` (all coils).
    pub fn frame_offset(&self, t: usize) -> usize {
        self.frame_counts[..t].iter().sum::<usize>() * self.n_coils
    }

    /// Samples of frame `t` for coil `c` as a range into the flat vector.
    pub fn block(&self, t: usize, c: usize) -> std::ops::Range<usize> {
        let start = self.frame_offset(t) + c * self.frame_counts[t];
        start..start + self.frame_counts[t]
    }
}

/// Measured (or simulated) k-space samples together with their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    pub samples: Vec<Complex64>,
    pub layout: SampleLayout,
}

impl KSpaceData {
    pub fn new(samples: Vec<Complex64>, layout: SampleLayout) -> Result<Self> {
        if samples.len() != layout.len() {
            return dim_err(format!(
                "layout expects {} samples, got {}",
                layout.len(),
                samples.len()
            ));
        }
        Ok(KSpaceData { samples, layout })
    }

    pub fn zeros(layout: SampleLayout) -> Self {
        KSpaceData { samples: vec![Complex64::new(0.0, 0.0); layout.len()], layout }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.samples).sqrt()
    }
}

/// `sum_i a_i * conj(b_i)`.
pub fn inner_product(a: &[Complex64], b: &[Complex64]) -> Result<Complex64> {
    if a.len() != b.len() {
        return dim_err(format!("inner product of lengths {} and {}", a.len(), b.len()));
    }
    Ok(dot_conj(a, b))
}

/// Unchecked `sum_i a_i * conj(b_i)` with four independent accumulators.
pub(crate) fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let mut re = [0.0f64; 4];
    let mut im = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            re[l] += x[l].re * y[l].re + x[l].im * y[l].im;
            im[l] += x[l].im * y[l].re - x[l].re * y[l].im;
        }
    }
    let mut s = Complex64::new(re.iter().sum(), im.iter().sum());
    for (x, y) in ra.iter().zip(rb) {
        s += x * y.conj();
    }
    s
}

pub(crate) fn norm_sqr(a: &[Complex64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let c = a.chunks_exact(4);
    let r = c.remainder();
    for x in c {
        for l in 0..4 {
            acc[l] += x[l].norm_sqr();
        }
    }
    acc.iter().sum::<f64>() + r.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

/// `y += alpha * x`.
pub(crate) fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Real dot product with four accumulators.
pub(crate) fn dot_real(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>()
}
