use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unnormalized 2D FFT over an `nx`-fastest buffer of `nx * ny` samples.
#[derive(Clone)]
pub(crate) struct Fft2 {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.nx, self.ny)
    }
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_x: planner.plan_fft_inverse(nx),
            inv_y: planner.plan_fft_inverse(ny),
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.fwd_x, &self.fwd_y);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inv_x, &self.inv_y);
    }

    /// Forward transform scaled by `1/sqrt(nx*ny)`.
    pub fn forward_unitary(&self, buf: &mut [Complex64]) {
        self.forward(buf);
        self.scale(buf);
    }

    pub fn inverse_unitary(&self, buf: &mut [Complex64]) {
        self.inverse(buf);
        self.scale(buf);
    }

    fn scale(&self, buf: &mut [Complex64]) {
        let s = 1.0 / ((self.nx * self.ny) as f64).sqrt();
        buf.iter_mut().for_each(|z| *z *= s);
    }

    fn run(&self, buf: &mut [Complex64], fx: &Arc<dyn Fft<f64>>, fy: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.nx, self.ny);
        debug_assert_eq!(buf.len(), nx * ny);
        fx.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                t[x * ny + y] = buf[y * nx + x];
            }
        }
        fy.process(&mut t);
        for x in 0..nx {
            for y in 0..ny {
                buf[y * nx + x] = t[x * ny + y];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unitary_round_trip_and_delta() {
        let f = Fft2::new(6, 4);
        let mut buf = vec![Complex64::new(0.0, 0.0); 24];
        buf[0] = Complex64::new(1.0, 0.0);
        f.forward_unitary(&mut buf);
        for z in &buf {
            assert!((z.norm() - 1.0 / 24f64.sqrt()).abs() < 1e-15);
        }
        f.inverse_unitary(&mut buf);
        assert!((buf[0] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(buf[1..].iter().all(|z| z.norm() < 1e-14));
    }
}
