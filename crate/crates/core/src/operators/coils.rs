use num_complex::Complex64;

use crate::error::{Error, Result};

/// Coil sensitivity maps `C_1..C_nc`, each `nx * ny` (x fastest), shared by
/// all frames.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMaps {
    nx: usize,
    ny: usize,
    n_coils: usize,
    data: Vec<Complex64>,
}

impl CoilMaps {
    pub fn new(nx: usize, ny: usize, maps: Vec<Vec<Complex64>>) -> Result<Self> {
        if maps.is_empty() || maps.iter().any(|m| m.len() != nx * ny) {
            return Err(Error::Dimension(format!("coil maps must be non-empty {nx}x{ny} arrays")));
        }
        let n_coils = maps.len();
        Ok(CoilMaps { nx, ny, n_coils, data: maps.concat() })
    }

    /// Smooth complex Gaussian sensitivities centred on a ring around the
    /// field of view, with slowly varying phase, normalized to unit
    /// sum-of-squares at every pixel.
    pub fn synthetic(nx: usize, ny: usize, n_coils: usize) -> Result<Self> {
        if n_coils == 0 {
            return Err(Error::Config("need at least one coil".into()));
        }
        let (cx, cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
        let ring = 0.75 * cx.max(cy);
        let sigma = 0.6 * (nx.max(ny) as f64);
        let mut maps = Vec::with_capacity(n_coils);
        for c in 0..n_coils {
            let ang = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64 + 0.3;
            let (px, py) = (cx + ring * ang.cos(), cy + ring * ang.sin());
            let mut m = Vec::with_capacity(nx * ny);
            for y in 0..ny {
                for x in 0..nx {
                    let dx = x as f64 - px;
                    let dy = y as f64 - py;
                    let mag = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                    let phase = ang
                        + 1.5 * ((x as f64 - cx) * ang.cos() + (y as f64 - cy) * ang.sin())
                            / nx.max(ny) as f64;
                    m.push(Complex64::from_polar(mag, phase));
                }
            }
            maps.push(m);
        }
        let mut coils = CoilMaps::new(nx, ny, maps)?;
        coils.normalize_sos();
        Ok(coils)
    }

    fn normalize_sos(&mut self) {
        let n = self.nx * self.ny;
        for i in 0..n {
            let s = (0..self.n_coils).map(|c| self.data[c * n + i].norm_sqr()).sum::<f64>().sqrt();
            if s > 0.0 {
                for c in 0..self.n_coils {
                    self.data[c * n + i] /= s;
                }
            }
        }
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn map(&self, c: usize) -> &[Complex64] {
        let n = self.nx * self.ny;
        &self.data[c * n..(c + 1) * n]
    }

    /// Largest deviation of `sum_c |C_c|^2` from one.
    pub fn sos_defect(&self) -> f64 {
        let n = self.nx * self.ny;
        (0..n)
            .map(|i| {
                let s: f64 = (0..self.n_coils).map(|c| self.data[c * n + i].norm_sqr()).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}
