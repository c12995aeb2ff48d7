use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::coils::CoilMaps;
use super::fft::Fft2;
use super::ForwardOperator;
use crate::error::{dim_err, Error, Result};
use crate::exec;
use crate::tensor::{ComplexVolume, Dims, KSpaceData, SampleLayout, SamplingKind};

/// Frame-wise unitary 2D FFT followed by a per-frame binary mask `S_I`,
/// optionally preceded by coil weighting.
#[derive(Clone, Debug)]
pub struct CartesianOp {
    dims: Dims,
    /// Selected frequency-bin indices per frame, ascending.
    selected: Vec<Vec<usize>>,
    coils: Option<CoilMaps>,
    layout: SampleLayout,
    fft: Fft2,
}

impl CartesianOp {
    /// `masks[t][i]` selects bin `i` (x fastest) of frame `t`.
    pub fn new(dims: Dims, masks: Vec<Vec<bool>>, coils: Option<CoilMaps>) -> Result<Self> {
        if masks.len() != dims.nt || masks.iter().any(|m| m.len() != dims.frame_len()) {
            return dim_err(format!("need {} masks of {} bins", dims.nt, dims.frame_len()));
        }
        if let Some(c) = &coils {
            if c.shape() != (dims.nx, dims.ny) {
                return dim_err("coil map shape differs from image");
            }
        }
        let selected: Vec<Vec<usize>> = masks
            .iter()
            .map(|m| m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect())
            .collect();
        let layout = SampleLayout {
            dims,
            n_coils: coils.as_ref().map_or(1, |c| c.n_coils()),
            frame_counts: selected.iter().map(Vec::len).collect(),
            kind: SamplingKind::Cartesian,
        };
        Ok(CartesianOp { dims, selected, coils, layout, fft: Fft2::new(dims.nx, dims.ny) })
    }

    pub fn full(dims: Dims, coils: Option<CoilMaps>) -> Result<Self> {
        Self::new(dims, vec![vec![true; dims.frame_len()]; dims.nt], coils)
    }

    /// Each bin kept independently with probability `fraction`; the DC bin
    /// is always kept.
    pub fn random_mask(dims: Dims, fraction: f64, seed: u64, coils: Option<CoilMaps>) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("mask fraction {fraction} outside (0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks = (0..dims.nt)
            .map(|_| {
                let mut m: Vec<bool> = (0..dims.frame_len()).map(|_| rng.random::<f64>() < fraction).collect();
                m[0] = true;
                m
            })
            .collect();
        Self::new(dims, masks, coils)
    }

    pub fn mask(&self, t: usize) -> Vec<bool> {
        let mut m = vec![false; self.dims.frame_len()];
        for &i in &self.selected[t] {
            m[i] = true;
        }
        m
    }

    /// Selected bin indices of frame `t`, ascending; sample order of the
    /// frame's k-space block.
    pub fn selected(&self, t: usize) -> &[usize] {
        &self.selected[t]
    }

    pub fn is_full(&self) -> bool {
        self.selected.iter().all(|s| s.len() == self.dims.frame_len())
    }

    pub fn coils(&self) -> Option<&CoilMaps> {
        self.coils.as_ref()
    }

    fn n_coils(&self) -> usize {
        self.layout.n_coils
    }

    /// Unitary 2D FFT of every frame.
    pub fn fft_frames(&self, x: &ComplexVolume) -> ComplexVolume {
        let mut out = x.clone();
        let n = self.dims.frame_len();
        exec::for_each_chunk_mut(out.as_mut_slice(), n, |_, f| self.fft.forward_unitary(f));
        out
    }

    /// Unitary inverse 2D FFT of every frame.
    pub fn ifft_frames(&self, k: &ComplexVolume) -> ComplexVolume {
        let mut out = k.clone();
        let n = self.dims.frame_len();
        exec::for_each_chunk_mut(out.as_mut_slice(), n, |_, f| self.fft.inverse_unitary(f));
        out
    }
}

impl ForwardOperator for CartesianOp {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn layout(&self) -> &SampleLayout {
        &self.layout
    }

    fn forward(&self, x: &ComplexVolume) -> Result<KSpaceData> {
        self.check_volume(x)?;
        let nc = self.n_coils();
        let blocks = exec::map_range(self.dims.nt * nc, |u| {
            let (t, c) = (u / nc, u % nc);
            let mut buf = x.frame(t).to_vec();
            if let Some(coils) = &self.coils {
                for (b, s) in buf.iter_mut().zip(coils.map(c)) {
                    *b *= s;
                }
            }
            self.fft.forward_unitary(&mut buf);
            self.selected[t].iter().map(|&i| buf[i]).collect::<Vec<_>>()
        });
        KSpaceData::new(blocks.concat(), self.layout.clone())
    }

    fn adjoint(&self, y: &KSpaceData) -> Result<ComplexVolume> {
        self.check_kspace(y)?;
        let nc = self.n_coils();
        let n = self.dims.frame_len();
        let mut out = ComplexVolume::zeros(self.dims);
        exec::for_each_chunk_mut(out.as_mut_slice(), n, |t, frame| {
            for c in 0..nc {
                let block = &y.samples[self.layout.block(t, c)];
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                for (&i, &v) in self.selected[t].iter().zip(block) {
                    buf[i] = v;
                }
                self.fft.inverse_unitary(&mut buf);
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

    fn is_isometry(&self) -> bool {
        self.is_full() && self.coils.as_ref().is_none_or(|c| c.sos_defect() < 1e-10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::inner_product;

    fn random_volume(rng: &mut ChaCha8Rng, dims: Dims) -> ComplexVolume {
        ComplexVolume::from_fn(dims, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_kspace(rng: &mut ChaCha8Rng, layout: &SampleLayout) -> KSpaceData {
        let s = (0..layout.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        KSpaceData::new(s, layout.clone()).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let dims = Dims::new(8, 6, 2);
        let op = CartesianOp::random_mask(dims, 0.4, 1, None).unwrap();
        let y = op.forward(&ComplexVolume::zeros(dims)).unwrap();
        assert!(y.samples.iter().all(|z| z.norm() == 0.0));
        let x = op.adjoint(&KSpaceData::zeros(op.layout().clone())).unwrap();
        assert!(x.as_slice().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let dims = Dims::new(8, 4, 2);
        let op = CartesianOp::full(dims, None).unwrap();
        let mut x = ComplexVolume::zeros(dims);
        x.set(0, 0, 0, Complex64::new(1.0, 0.0));
        x.set(0, 0, 1, Complex64::new(1.0, 0.0));
        let y = op.forward(&x).unwrap();
        for z in &y.samples {
            assert!((z.norm() - 1.0 / 32f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn full_mask_is_unitary() {
        let dims = Dims::new(8, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for coils in [None, Some(CoilMaps::synthetic(8, 8, 4).unwrap())] {
            let op = CartesianOp::full(dims, coils).unwrap();
            assert!(op.is_isometry());
            let x = random_volume(&mut rng, dims);
            let y = op.forward(&x).unwrap();
            assert!((y.norm() - x.norm()).abs() < 1e-10 * x.norm());
            let back = op.adjoint(&y).unwrap();
            assert!(back.sub(&x).unwrap().norm() < 1e-10 * x.norm());
        }
    }

    #[test]
    fn adjointness_with_and_without_coils() {
        let dims = Dims::new(8, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for coils in [None, Some(CoilMaps::synthetic(8, 6, 3).unwrap())] {
            let op = CartesianOp::random_mask(dims, 0.5, 2, coils).unwrap();
            for _ in 0..20 {
                let x = random_volume(&mut rng, dims);
                let y = random_kspace(&mut rng, op.layout());
                let ax = op.forward(&x).unwrap();
                let ahy = op.adjoint(&y).unwrap();
                let l = inner_product(&ax.samples, &y.samples).unwrap();
                let r = inner_product(x.as_slice(), ahy.as_slice()).unwrap();
                assert!((l - r).norm() / (ax.norm() * y.norm()) < 1e-10);
            }
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let dims = Dims::new(4, 4, 2);
        let a = CartesianOp::random_mask(dims, 0.5, 1, None).unwrap();
        let b = CartesianOp::full(dims, None).unwrap();
        let y = b.forward(&ComplexVolume::zeros(dims)).unwrap();
        assert!(a.adjoint(&y).is_err());
        assert!(a.forward(&ComplexVolume::zeros(Dims::new(4, 4, 3))).is_err());
    }
}
