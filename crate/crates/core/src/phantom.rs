//! Synthetic dynamic phantoms and retrospective k-space sampling.
//!
//! Shape coordinates are normalized: the field of view spans `[-1, 1]` on
//! both spatial axes, with voxel `x` at `u = (2x + 1) / nx - 1`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::ForwardOperator;
use crate::tensor::{ComplexVolume, Dims, KSpaceData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-axes along the rotated u and v directions.
    pub axes: [f64; 2],
    /// Rotation in degrees.
    pub angle: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeatingDisk {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
    pub intensity: f64,
}

/// Thin axis-aligned rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bar {
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    /// Static background, painted in order (later shapes replace earlier ones).
    pub ellipses: Vec<Ellipse>,
    pub disk: BeatingDisk,
    pub bars: Vec<Bar>,
    /// Peak of the smooth phase map, in radians.
    pub phase_amplitude: f64,
    /// Uniform jitter applied to every ellipse intensity.
    pub intensity_jitter: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let e = |center: [f64; 2], axes: [f64; 2], angle: f64, intensity: f64| Ellipse { center, axes, angle, intensity };
        PhantomSpec {
            dims: [64, 64, 16],
            ellipses: vec![
                e([0.0, 0.0], [0.88, 0.72], 0.0, 0.35),
                e([-0.42, -0.1], [0.22, 0.38], 15.0, 0.6),
                e([0.45, 0.15], [0.2, 0.3], -20.0, 0.15),
                e([0.05, 0.02], [0.36, 0.34], 0.0, 0.5),
            ],
            disk: BeatingDisk { center: [0.05, 0.02], radius: 0.2, amplitude: 0.07, intensity: 0.95 },
            bars: vec![
                Bar { center: [-0.2, 0.55], size: [0.04, 0.2], intensity: 0.8 },
                Bar { center: [-0.05, 0.55], size: [0.04, 0.2], intensity: 0.8 },
                Bar { center: [0.1, 0.55], size: [0.04, 0.2], intensity: 0.8 },
            ],
            phase_amplitude: 0.5,
            intensity_jitter: 0.02,
            seed: 0,
        }
    }
}

fn inside_fov(center: [f64; 2], half: [f64; 2]) -> bool {
    (0..2).all(|i| center[i] - half[i] >= -1.0 && center[i] + half[i] <= 1.0)
}

impl PhantomSpec {
    pub fn dims(&self) -> Dims {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n < 2) {
            return Err(Error::Config(format!("phantom dims must be >= 2, got {:?}", self.dims)));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        for (i, e) in self.ellipses.iter().enumerate() {
            let r = e.axes[0].max(e.axes[1]);
            if !(e.axes[0] > 0.0 && e.axes[1] > 0.0) || !inside_fov(e.center, [r, r]) || !unit(e.intensity) {
                return Err(Error::Config(format!("ellipse {i} leaves the field of view or has invalid values")));
            }
        }
        let d = &self.disk;
        let rmax = d.radius + d.amplitude.abs();
        if d.radius - d.amplitude.abs() < 0.0 || !inside_fov(d.center, [rmax, rmax]) || !unit(d.intensity) {
            return Err(Error::Config("beating disk leaves the field of view or has a negative radius".into()));
        }
        for (i, b) in self.bars.iter().enumerate() {
            if !(b.size[0] > 0.0 && b.size[1] > 0.0) || !inside_fov(b.center, [b.size[0] / 2.0, b.size[1] / 2.0]) || !unit(b.intensity) {
                return Err(Error::Config(format!("bar {i} leaves the field of view or has invalid values")));
            }
        }
        if !(self.intensity_jitter >= 0.0) || !self.phase_amplitude.is_finite() {
            return Err(Error::Config("jitter must be >= 0 and the phase amplitude finite".into()));
        }
        Ok(())
    }

    /// Disk radius in frame `t`: `r0 + a sin(2 pi t / Nt)`.
    pub fn disk_radius(&self, t: usize) -> f64 {
        self.disk.radius + self.disk.amplitude * (2.0 * PI * t as f64 / self.dims[2] as f64).sin()
    }
}

/// Renders the phantom: static ellipses, the beating disk and the bars are
/// painted as magnitudes, then multiplied by a smooth phase map.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ComplexVolume> {
    spec.validate()?;
    let dims = spec.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let intensities: Vec<f64> = spec
        .ellipses
        .iter()
        .map(|e| {
            let j = if spec.intensity_jitter > 0.0 {
                rng.random_range(-spec.intensity_jitter..=spec.intensity_jitter)
            } else {
                0.0
            };
            (e.intensity + j).clamp(0.0, 1.0)
        })
        .collect();
    let coord = |i: usize, n: usize| (2 * i + 1) as f64 / n as f64 - 1.0;
    let mut background = vec![0.0; dims.frame_len()];
    for y in 0..dims.ny {
        for x in 0..dims.nx {
            let (u, v) = (coord(x, dims.nx), coord(y, dims.ny));
            let mut m = 0.0;
            for (e, &level) in spec.ellipses.iter().zip(&intensities) {
                let (s, c) = e.angle.to_radians().sin_cos();
                let (du, dv) = (u - e.center[0], v - e.center[1]);
                let (a, b) = ((c * du + s * dv) / e.axes[0], (-s * du + c * dv) / e.axes[1]);
                if a * a + b * b <= 1.0 {
                    m = level;
                }
            }
            background[y * dims.nx + x] = m;
        }
    }
    let phase = |u: f64, v: f64| spec.phase_amplitude * (0.6 * u + 0.3 * v * v - 0.4 * u * v);
    Ok(ComplexVolume::from_fn(dims, |x, y, t| {
        let (u, v) = (coord(x, dims.nx), coord(y, dims.ny));
        let mut m = background[y * dims.nx + x];
        let r = spec.disk_radius(t);
        let d = &spec.disk;
        if (u - d.center[0]).powi(2) + (v - d.center[1]).powi(2) <= r * r {
            m = d.intensity;
        }
        for b in &spec.bars {
            if (u - b.center[0]).abs() <= b.size[0] / 2.0 && (v - b.center[1]).abs() <= b.size[1] / 2.0 {
                m = b.intensity;
            }
        }
        Complex64::from_polar(m.clamp(0.0, 1.0), phase(u, v))
    }))
}

/// `y = A x + eta` with complex Gaussian noise of per-component std
/// `noise_std`.
pub fn retrospective_sample(x: &ComplexVolume, op: &dyn ForwardOperator, noise_std: f64, seed: u64) -> Result<KSpaceData> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Config(format!("noise std must be finite and >= 0, got {noise_std}")));
    }
    let mut y = op.forward(x)?;
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in y.samples.iter_mut() {
            *s += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(y)
}

/// Per-component noise std giving the requested input SNR
/// `10 log10(||A x||^2 / E||eta||^2)`.
pub fn noise_std_for_snr(clean: &KSpaceData, snr_db: f64) -> f64 {
    let m = clean.len() as f64;
    let power = clean.norm().powi(2) / (2.0 * m);
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}
