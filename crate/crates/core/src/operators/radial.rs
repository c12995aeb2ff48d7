use num_complex::Complex64;

use super::coils::CoilMaps;
use super::fft::Fft2;
use super::trajectory::RadialTrajectory;
use super::ForwardOperator;
use crate::error::{dim_err, Result};
use crate::exec;
use crate::tensor::{ComplexVolume, Dims, KSpaceData, SampleLayout, SamplingKind};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Per-frame separable exponential tables: `ex[s*nx + x] = exp(-i kx_s rx)`
/// and likewise for `ey`, with `rx = x - nx/2`.
#[derive(Clone, Debug)]
struct FrameTables {
    n_samples: usize,
    ex: Vec<Complex64>,
    ey: Vec<Complex64>,
    /// Unnormalized FFT of the circulant embedding of the point-spread
    /// kernel on the `2nx x 2ny` grid.
    psf_hat: Vec<Complex64>,
}

/// Exact non-uniform DFT on a golden-angle radial trajectory:
/// `y_s = sum_r x_c(r) exp(-i k_s . r) / sqrt(nx*ny)`, image origin at the
/// grid center. The normal operator uses an exact Toeplitz embedding.
#[derive(Clone, Debug)]
pub struct RadialOp {
    dims: Dims,
    trajectory: RadialTrajectory,
    coils: Option<CoilMaps>,
    layout: SampleLayout,
    frames: Vec<FrameTables>,
    fft_pad: Fft2,
}

fn phase_table(coords: &[[f64; 2]], axis: usize, n: usize) -> Vec<Complex64> {
    let half = (n / 2) as f64;
    let mut out = Vec::with_capacity(coords.len() * n);
    for k in coords {
        for i in 0..n {
            out.push(Complex64::from_polar(1.0, -k[axis] * (i as f64 - half)));
        }
    }
    out
}

impl RadialOp {
    pub fn new(dims: Dims, trajectory: RadialTrajectory, coils: Option<CoilMaps>) -> Result<Self> {
        if trajectory.n_frames() != dims.nt {
            return dim_err(format!(
                "trajectory has {} frames, image has {}",
                trajectory.n_frames(),
                dims.nt
            ));
        }
        if let Some(c) = &coils {
            if c.shape() != (dims.nx, dims.ny) {
                return dim_err("coil map shape differs from image");
            }
        }
        let sps = trajectory.samples_per_spoke();
        let layout = SampleLayout {
            dims,
            n_coils: coils.as_ref().map_or(1, |c| c.n_coils()),
            frame_counts: trajectory.frame_spoke_counts().iter().map(|&n| n * sps).collect(),
            kind: SamplingKind::Radial { samples_per_spoke: sps },
        };
        let fft_pad = Fft2::new(2 * dims.nx, 2 * dims.ny);
        let frames = exec::map_range(dims.nt, |t| {
            let coords = trajectory.frame_coords(t);
            let ex = phase_table(&coords, 0, dims.nx);
            let ey = phase_table(&coords, 1, dims.ny);
            let psf_hat = psf_kernel(dims, &coords, &fft_pad);
            FrameTables { n_samples: coords.len(), ex, ey, psf_hat }
        });
        Ok(RadialOp { dims, trajectory, coils, layout, frames, fft_pad })
    }

    pub fn trajectory(&self) -> &RadialTrajectory {
        &self.trajectory
    }

    pub fn coils(&self) -> Option<&CoilMaps> {
        self.coils.as_ref()
    }

    fn scale(&self) -> f64 {
        1.0 / (self.dims.frame_len() as f64).sqrt()
    }

    fn coil_image(&self, frame: &[Complex64], c: usize) -> Vec<Complex64> {
        match &self.coils {
            Some(coils) => frame.iter().zip(coils.map(c)).map(|(a, s)| a * s).collect(),
            None => frame.to_vec(),
        }
    }

    fn forward_frame(&self, t: usize, u: &[Complex64], out: &mut [Complex64]) {
        let (nx, ny) = (self.dims.nx, self.dims.ny);
        let tab = &self.frames[t];
        let scale = self.scale();
        let mut acc = vec![ZERO; nx];
        for (s, o) in out.iter_mut().enumerate() {
            acc.fill(ZERO);
            let ey = &tab.ey[s * ny..(s + 1) * ny];
            for (y, &w) in ey.iter().enumerate() {
                for (a, v) in acc.iter_mut().zip(&u[y * nx..(y + 1) * nx]) {
                    *a += w * v;
                }
            }
            let ex = &tab.ex[s * nx..(s + 1) * nx];
            let mut sum = ZERO;
            for (a, w) in acc.iter().zip(ex) {
                sum += a * w;
            }
            *o = sum * scale;
        }
    }

    fn adjoint_frame(&self, t: usize, y: &[Complex64], out: &mut [Complex64]) {
        let (nx, ny) = (self.dims.nx, self.dims.ny);
        let tab = &self.frames[t];
        let scale = self.scale();
        let mut b = vec![ZERO; nx];
        for (s, &v) in y.iter().enumerate() {
            let v = v * scale;
            for (bx, w) in b.iter_mut().zip(&tab.ex[s * nx..(s + 1) * nx]) {
                *bx = w.conj() * v;
            }
            let ey = &tab.ey[s * ny..(s + 1) * ny];
            for (yy, w) in ey.iter().enumerate() {
                let w = w.conj();
                for (o, bx) in out[yy * nx..(yy + 1) * nx].iter_mut().zip(&b) {
                    *o += w * bx;
                }
            }
        }
    }

    /// `G_t u` for one frame and one (already coil-weighted) image.
    fn gram_frame(&self, t: usize, u: &[Complex64]) -> Vec<Complex64> {
        let (nx, ny) = (self.dims.nx, self.dims.ny);
        let (px, py) = (2 * nx, 2 * ny);
        let mut buf = vec![ZERO; px * py];
        for y in 0..ny {
            buf[y * px..y * px + nx].copy_from_slice(&u[y * nx..(y + 1) * nx]);
        }
        self.fft_pad.forward(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.frames[t].psf_hat) {
            *b *= k;
        }
        self.fft_pad.inverse(&mut buf);
        let inv = 1.0 / (px * py) as f64;
        let mut out = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            out.extend(buf[y * px..y * px + nx].iter().map(|z| z * inv));
        }
        out
    }

    /// `A^H A x` evaluated as an explicit adjoint of the forward transform.
    pub fn normal_direct(&self, x: &ComplexVolume) -> Result<ComplexVolume> {
        self.adjoint(&self.forward(x)?)
    }

    /// Number of samples per coil in frame `t`.
    pub fn frame_samples(&self, t: usize) -> usize {
        self.frames[t].n_samples
    }
}

/// Point-spread kernel `K(d) = (1/N) sum_s exp(i k_s . d)` for
/// `|dx| < nx, |dy| < ny`, wrapped onto the doubled grid and transformed.
fn psf_kernel(dims: Dims, coords: &[[f64; 2]], fft: &Fft2) -> Vec<Complex64> {
    let (nx, ny) = (dims.nx, dims.ny);
    let (px, py) = (2 * nx, 2 * ny);
    let wrap = |d: i64, p: usize| -> usize { d.rem_euclid(p as i64) as usize };
    let dxs: Vec<i64> = (-(nx as i64) + 1..nx as i64).collect();
    let dys: Vec<i64> = (-(ny as i64) + 1..ny as i64).collect();
    let mut kernel = vec![ZERO; px * py];
    let mut ex = vec![ZERO; dxs.len()];
    let mut ey = vec![ZERO; dys.len()];
    for k in coords {
        for (e, &d) in ex.iter_mut().zip(&dxs) {
            *e = Complex64::from_polar(1.0, k[0] * d as f64);
        }
        for (e, &d) in ey.iter_mut().zip(&dys) {
            *e = Complex64::from_polar(1.0, k[1] * d as f64);
        }
        for (&dy, wy) in dys.iter().zip(&ey) {
            let row = wrap(dy, py) * px;
            for (&dx, wx) in dxs.iter().zip(&ex) {
                kernel[row + wrap(dx, px)] += wx * wy;
            }
        }
    }
    let inv_n = 1.0 / dims.frame_len() as f64;
    kernel.iter_mut().for_each(|z| *z *= inv_n);
    fft.forward(&mut kernel);
    kernel
}

impl ForwardOperator for RadialOp {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn layout(&self) -> &SampleLayout {
        &self.layout
    }

    fn forward(&self, x: &ComplexVolume) -> Result<KSpaceData> {
        self.check_volume(x)?;
        let nc = self.layout.n_coils;
        let blocks = exec::map_range(self.dims.nt * nc, |u| {
            let (t, c) = (u / nc, u % nc);
            let img = self.coil_image(x.frame(t), c);
            let mut out = vec![ZERO; self.frames[t].n_samples];
            self.forward_frame(t, &img, &mut out);
            out
        });
        KSpaceData::new(blocks.concat(), self.layout.clone())
    }

    fn adjoint(&self, y: &KSpaceData) -> Result<ComplexVolume> {
        self.check_kspace(y)?;
        let nc = self.layout.n_coils;
        let n = self.dims.frame_len();
        let mut out = ComplexVolume::zeros(self.dims);
        exec::for_each_chunk_mut(out.as_mut_slice(), n, |t, frame| {
            let mut buf = vec![ZERO; n];
            for c in 0..nc {
                buf.fill(ZERO);
                self.adjoint_frame(t, &y.samples[self.layout.block(t, c)], &mut buf);
                match &self.coils {
                    Some(coils) => {
                        for ((o, b), s) in frame.iter_mut().zip(&buf).zip(coils.map(c)) {
                            *o += b * s.conj();
                        }
                    }
                    None => {
                        for (o, b) in frame.iter_mut().zip(&buf) {
                            *o += b;
                        }
                    }
                }
            }
        });
        Ok(out)
    }

    fn normal(&self, x: &ComplexVolume) -> Result<ComplexVolume> {
        self.check_volume(x)?;
        let nc = self.layout.n_coils;
        let n = self.dims.frame_len();
        let mut out = ComplexVolume::zeros(self.dims);
        exec::for_each_chunk_mut(out.as_mut_slice(), n, |t, frame| {
            for c in 0..nc {
                let g = self.gram_frame(t, &self.coil_image(x.frame(t), c));
                match &self.coils {
                    Some(coils) => {
                        for ((o, b), s) in frame.iter_mut().zip(&g).zip(coils.map(c)) {
                            *o += b * s.conj();
                        }
                    }
                    None => {
                        for (o, b) in frame.iter_mut().zip(&g) {
                            *o += b;
                        }
                    }
                }
            }
        });
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::inner_product;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, dims: Dims) -> ComplexVolume {
        ComplexVolume::from_fn(dims, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn op(dims: Dims, spokes: usize, coils: usize) -> RadialOp {
        let traj = RadialTrajectory::golden_angle(spokes, dims.nx, dims.nt).unwrap();
        let maps = (coils > 0).then(|| CoilMaps::synthetic(dims.nx, dims.ny, coils).unwrap());
        RadialOp::new(dims, traj, maps).unwrap()
    }

    /// Direct evaluation of a single sample straight from the definition.
    fn sample_oracle(x: &ComplexVolume, t: usize, k: [f64; 2]) -> Complex64 {
        let d = x.dims();
        let mut s = ZERO;
        for y in 0..d.ny {
            for xx in 0..d.nx {
                let r = [xx as f64 - (d.nx / 2) as f64, y as f64 - (d.ny / 2) as f64];
                s += x.get(xx, y, t) * Complex64::from_polar(1.0, -(k[0] * r[0] + k[1] * r[1]));
            }
        }
        s / (d.frame_len() as f64).sqrt()
    }

    #[test]
    fn forward_matches_definition() {
        let dims = Dims::new(8, 6, 2);
        let a = op(dims, 3, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_volume(&mut rng, dims);
        let y = a.forward(&x).unwrap();
        for t in 0..2 {
            let coords = a.trajectory().frame_coords(t);
            let block = &y.samples[a.layout().block(t, 0)];
            for (k, v) in coords.iter().zip(block) {
                assert!((sample_oracle(&x, t, *k) - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn centered_delta_gives_constant_samples() {
        let dims = Dims::new(8, 8, 1);
        let a = op(dims, 5, 0);
        let mut x = ComplexVolume::zeros(dims);
        x.set(4, 4, 0, Complex64::new(1.0, 0.0));
        let y = a.forward(&x).unwrap();
        for v in &y.samples {
            assert!((v - Complex64::new(1.0 / 8.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn adjointness() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (dims, coils) in [(Dims::new(8, 8, 3), 0), (Dims::new(10, 6, 2), 3)] {
            let a = op(dims, 4, coils);
            for _ in 0..10 {
                let x = random_volume(&mut rng, dims);
                let y = KSpaceData::new(
                    (0..a.layout().len())
                        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                        .collect(),
                    a.layout().clone(),
                )
                .unwrap();
                let ax = a.forward(&x).unwrap();
                let ahy = a.adjoint(&y).unwrap();
                let l = inner_product(&ax.samples, &y.samples).unwrap();
                let r = inner_product(x.as_slice(), ahy.as_slice()).unwrap();
                assert!((l - r).norm() / (ax.norm() * y.norm()) < 1e-10);
            }
        }
    }

    #[test]
    fn toeplitz_normal_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (dims, coils) in [(Dims::new(8, 8, 2), 0), (Dims::new(12, 8, 3), 4), (Dims::new(7, 9, 2), 2)] {
            let a = op(dims, 5, coils);
            let x = random_volume(&mut rng, dims);
            let fast = a.normal(&x).unwrap();
            let direct = a.normal_direct(&x).unwrap();
            assert!(fast.sub(&direct).unwrap().norm() < 1e-10 * direct.norm());
        }
    }

    #[test]
    fn linearity() {
        let dims = Dims::new(8, 8, 2);
        let a = op(dims, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_volume(&mut rng, dims);
        let z = random_volume(&mut rng, dims);
        let (p, q) = (Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5));
        let combo = ComplexVolume::from_vec(
            dims,
            x.as_slice().iter().zip(z.as_slice()).map(|(u, v)| p * u + q * v).collect(),
        )
        .unwrap();
        let lhs = a.forward(&combo).unwrap();
        let (ax, az) = (a.forward(&x).unwrap(), a.forward(&z).unwrap());
        for ((l, u), v) in lhs.samples.iter().zip(&ax.samples).zip(&az.samples) {
            assert!((l - (p * u + q * v)).norm() < 1e-12);
        }
    }

    #[test]
    fn frame_count_mismatch_rejected() {
        let traj = RadialTrajectory::golden_angle(3, 8, 4).unwrap();
        assert!(RadialOp::new(Dims::new(8, 8, 3), traj, None).is_err());
    }
}
