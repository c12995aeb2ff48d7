//! Image quality measures on centre-cropped magnitude images.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{ComplexVolume, Dims};

/// PSNR written for identical inputs.
pub const PSNR_CAP_DB: f64 = 999.0;

pub const DEFAULT_CROP: f64 = 0.5;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// The central `fraction * N` voxels of each spatial axis; all frames kept.
pub fn crop_center(v: &ComplexVolume, fraction: f64) -> Result<ComplexVolume> {
    let d = v.dims();
    let (cx, cy) = (crop_len(d.nx, fraction)?, crop_len(d.ny, fraction)?);
    let (ox, oy) = ((d.nx - cx) / 2, (d.ny - cy) / 2);
    Ok(ComplexVolume::from_fn(Dims::new(cx, cy, d.nt), |x, y, t| v.get(x + ox, y + oy, t)))
}

fn crop_len(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("crop fraction {fraction} outside (0, 1]")));
    }
    let c = (fraction * n as f64).round() as usize;
    if c == 0 {
        return Err(Error::Dimension(format!("crop of {n} voxels by {fraction} is empty")));
    }
    Ok(c.min(n))
}

fn cropped_magnitudes(x: &ComplexVolume, reference: &ComplexVolume, crop: f64) -> Result<(Vec<f64>, Vec<f64>, Dims)> {
    x.check_dims(reference.dims())?;
    let a = crop_center(x, crop)?;
    let b = crop_center(reference, crop)?;
    Ok((a.magnitude(), b.magnitude(), a.dims()))
}

fn peak(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, &a| m.max(a))
}

/// `|| |x| - |ref| || / || |ref| ||` over the crop.
pub fn nrmse(x: &ComplexVolume, reference: &ComplexVolume, crop: f64) -> Result<f64> {
    let (a, b, _) = cropped_magnitudes(x, reference, crop)?;
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Precondition("nrmse of a zero reference".into()));
    }
    let num: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// `20 log10(max|ref| / rmse)`; `+inf` for identical magnitudes.
pub fn psnr(x: &ComplexVolume, reference: &ComplexVolume, crop: f64) -> Result<f64> {
    let (a, b, _) = cropped_magnitudes(x, reference, crop)?;
    let top = peak(&b);
    if top == 0.0 {
        return Err(Error::Precondition("psnr of a zero reference".into()));
    }
    let mse = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (top / mse.sqrt()).log10())
}

/// Mean frame-wise SSIM with dynamic range `max|ref|`.
pub fn ssim(x: &ComplexVolume, reference: &ComplexVolume, crop: f64) -> Result<f64> {
    let (a, b, dims) = cropped_magnitudes(x, reference, crop)?;
    let range = peak(&b);
    Ok(ssim_frames(&a, &b, dims, range)?.iter().sum::<f64>() / dims.nt as f64)
}

/// SSIM of each frame of two magnitude volumes for a given dynamic range.
pub fn ssim_frames(a: &[f64], b: &[f64], dims: Dims, range: f64) -> Result<Vec<f64>> {
    if a.len() != dims.len() || b.len() != dims.len() {
        return Err(Error::Dimension("ssim inputs do not match dims".into()));
    }
    let (wx, wy) = (SSIM_WINDOW.min(dims.nx), SSIM_WINDOW.min(dims.ny));
    let gx = gaussian(wx);
    let gy = gaussian(wy);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let n = dims.frame_len();
    Ok((0..dims.nt)
        .map(|t| {
            let fa = &a[t * n..(t + 1) * n];
            let fb = &b[t * n..(t + 1) * n];
            let mut total = 0.0;
            let mut count = 0usize;
            for oy in 0..=dims.ny - wy {
                for ox in 0..=dims.nx - wx {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (j, wyj) in gy.iter().enumerate() {
                        let row = (oy + j) * dims.nx + ox;
                        for (i, wxi) in gx.iter().enumerate() {
                            let w = wyj * wxi;
                            let (u, v) = (fa[row + i], fb[row + i]);
                            ma += w * u;
                            mb += w * v;
                            saa += w * u * u;
                            sbb += w * v * v;
                            sab += w * u * v;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                    let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                    total += if den == 0.0 { 1.0 } else { num / den };
                    count += 1;
                }
            }
            total / count as f64
        })
        .collect())
}

fn gaussian(len: usize) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..len)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub psnr: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub crop: f64,
}

impl MetricsRecord {
    pub fn compute(x: &ComplexVolume, reference: &ComplexVolume, crop: f64) -> Result<Self> {
        Ok(MetricsRecord {
            psnr: psnr(x, reference, crop)?,
            ssim: ssim(x, reference, crop)?,
            nrmse: nrmse(x, reference, crop)?,
            crop,
        })
    }

    /// PSNR with `+inf` replaced by the CSV cap.
    pub fn psnr_capped(&self) -> f64 {
        cap_psnr(self.psnr)
    }
}

pub fn cap_psnr(p: f64) -> f64 {
    if p > PSNR_CAP_DB {
        PSNR_CAP_DB
    } else {
        p
    }
}

/// Metrics of every frame separately: `(psnr, ssim, nrmse)` per frame.
pub fn per_frame(x: &ComplexVolume, reference: &ComplexVolume, crop: f64) -> Result<Vec<(f64, f64, f64)>> {
    x.check_dims(reference.dims())?;
    let d = x.dims();
    (0..d.nt)
        .map(|t| {
            let one = Dims::new(d.nx, d.ny, 1);
            let a = ComplexVolume::from_vec(one, x.frame(t).to_vec())?;
            let b = ComplexVolume::from_vec(one, reference.frame(t).to_vec())?;
            Ok((psnr(&a, &b, crop)?, ssim(&a, &b, crop)?, nrmse(&a, &b, crop)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real(dims: Dims, f: impl Fn(usize, usize, usize) -> f64) -> ComplexVolume {
        ComplexVolume::from_fn(dims, |x, y, t| Complex64::new(f(x, y, t), 0.0))
    }

    #[test]
    fn identical_inputs() {
        let v = real(Dims::new(16, 16, 2), |x, y, t| (x + y + t) as f64 / 40.0);
        let m = MetricsRecord::compute(&v, &v, 0.5).unwrap();
        assert_eq!(m.nrmse, 0.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
        assert!(m.psnr.is_infinite());
        assert_eq!(m.psnr_capped(), PSNR_CAP_DB);
    }

    #[test]
    fn hand_psnr() {
        let d = Dims::new(4, 4, 1);
        let r = real(d, |_, _, _| 0.5);
        let x = real(d, |_, _, _| 0.6);
        let p = psnr(&x, &r, 1.0).unwrap();
        assert!((p - 20.0 * 5f64.log10()).abs() < 1e-9);
        assert!((p - 13.979).abs() < 1e-3);
    }

    #[test]
    fn crop_sizes() {
        let v = ComplexVolume::zeros(Dims::new(64, 64, 16));
        assert_eq!(crop_center(&v, 0.5).unwrap().dims(), Dims::new(32, 32, 16));
        assert_eq!(crop_center(&v, 1.0).unwrap(), v);
        let big = ComplexVolume::zeros(Dims::new(320, 320, 30));
        assert_eq!(crop_center(&big, 0.5).unwrap().dims(), Dims::new(160, 160, 30));
        assert!(crop_center(&v, 0.0).is_err());
        assert!(crop_center(&v, 0.001).is_err());
    }

    #[test]
    fn crop_takes_the_centre() {
        let v = real(Dims::new(8, 8, 1), |x, y, _| (x + 10 * y) as f64);
        let c = crop_center(&v, 0.5).unwrap();
        assert_eq!(c.get(0, 0, 0).re, 22.0);
        assert_eq!(c.get(3, 3, 0).re, 55.0);
    }

    #[test]
    fn zero_reference_is_rejected() {
        let z = ComplexVolume::zeros(Dims::new(4, 4, 1));
        assert!(nrmse(&z, &z, 1.0).is_err());
    }

    #[test]
    fn ssim_symmetric_for_fixed_range() {
        let d = Dims::new(20, 18, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a: Vec<f64> = (0..d.len()).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..d.len()).map(|_| rng.random::<f64>()).collect();
            let s1 = ssim_frames(&a, &b, d, 1.0).unwrap();
            let s2 = ssim_frames(&b, &a, d, 1.0).unwrap();
            for (u, v) in s1.iter().zip(&s2) {
                assert!((u - v).abs() < 1e-12);
                assert!((-1.0..=1.0).contains(u));
            }
        }
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let d = Dims::new(32, 32, 2);
        let r = real(d, |x, y, _| ((x * y) % 7) as f64 / 7.0);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<f64> = (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let values: Vec<f64> = [0.01, 0.05, 0.2]
                .iter()
                .map(|s| {
                    let x = ComplexVolume::from_vec(
                        d,
                        r.as_slice().iter().zip(&base).map(|(z, n)| z + s * n).collect(),
                    )
                    .unwrap();
                    psnr(&x, &r, 1.0).unwrap()
                })
                .collect();
            assert!(values[0] > values[1] && values[1] > values[2]);
        }
    }

    #[test]
    fn metrics_use_magnitudes() {
        let d = Dims::new(8, 8, 1);
        let r = real(d, |x, _, _| x as f64 + 1.0);
        let flipped = ComplexVolume::from_fn(d, |x, _, _| Complex64::new(0.0, -(x as f64 + 1.0)));
        assert_eq!(nrmse(&flipped, &r, 1.0).unwrap(), 0.0);
    }
}
