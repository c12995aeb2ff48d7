//! The shallow CNN `f_theta`: a 3x3x3 convolution with `K` filters and
//! ReLU, followed by a 1x1x1 combination layer, applied patch-wise.

mod conv;
mod train;

pub use conv::Padding;
pub use train::{full_loss, loss_and_gradient, train, TrainConfig, TrainOutcome};

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::patches::PatchSet;

use conv::Engine;

/// Number of taps of a 3x3x3 kernel.
pub const TAPS: usize = 27;
/// Index of the centre tap, `(1, 1, 1)`.
pub const CENTER_TAP: usize = 13;

pub const THETA_MAGIC: &[u8; 8] = b"ALNETHT1";

/// Complex mode feeds real and imaginary parts as two input channels;
/// real mode pushes them through the network as separate one-channel
/// patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetMode {
    Complex,
    Real,
}

impl NetMode {
    pub fn channels(self) -> usize {
        match self {
            NetMode::Complex => 2,
            NetMode::Real => 1,
        }
    }
}

/// Parameter count `q = K*27*C + K + C*K + C`.
pub fn param_count(mode: NetMode, k: usize) -> usize {
    let c = mode.channels();
    k * TAPS * c + k + c * k + c
}

/// Flat parameter vector `theta` laid out as kernels `[k][c][tap]` (tap
/// index `dx + 3*(dy + 3*dt)`), first-layer biases `[k]`, combination
/// weights `[o][k]`, output biases `[o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    mode: NetMode,
    k: usize,
    data: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(mode: NetMode, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("network needs at least one filter".into()));
        }
        Ok(NetworkParams { mode, k, data: vec![0.0; param_count(mode, k)] })
    }

    pub fn from_vec(mode: NetMode, k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || data.len() != param_count(mode, k) {
            return Err(Error::Dimension(format!(
                "expected {} parameters for K = {k}, got {}",
                param_count(mode, k),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("non-finite network parameter".into()));
        }
        Ok(NetworkParams { mode, k, data })
    }

    /// Kernels drawn from `N(0, 2/fan_in)` with `fan_in = 27*C`, combination
    /// weights from `N(0, 2/K)`, biases zero.
    pub fn random(mode: NetMode, k: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(mode, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = mode.channels();
        let kern = Normal::new(0.0, (2.0 / (TAPS * c) as f64).sqrt()).expect("valid std");
        let comb = Normal::new(0.0, (2.0 / k as f64).sqrt()).expect("valid std");
        for w in p.kernels_mut() {
            *w = kern.sample(&mut rng);
        }
        for w in p.combination_mut() {
            *w = comb.sample(&mut rng);
        }
        Ok(p)
    }

    /// Parameters for which `f_theta(p) = p` for every input: each channel
    /// is split into its positive and negative parts by centre-tap deltas
    /// and recombined with weights `+1, -1`.
    pub fn identity(mode: NetMode) -> Self {
        let c = mode.channels();
        let mut p = Self::zeros(mode, 2 * c).expect("k > 0");
        for ch in 0..c {
            for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                let k = 2 * ch + s;
                p.kernel_mut(k, ch)[CENTER_TAP] = sign;
                p.combination_mut()[ch * 2 * c + k] = sign;
            }
        }
        p
    }

    pub fn mode(&self) -> NetMode {
        self.mode
    }

    pub fn filters(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.mode.channels()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn kernel_len(&self) -> usize {
        self.k * TAPS * self.channels()
    }

    pub fn kernels(&self) -> &[f64] {
        &self.data[..self.kernel_len()]
    }

    pub fn kernels_mut(&mut self) -> &mut [f64] {
        let n = self.kernel_len();
        &mut self.data[..n]
    }

    pub fn kernel(&self, k: usize, c: usize) -> &[f64] {
        let start = (k * self.channels() + c) * TAPS;
        &self.data[start..start + TAPS]
    }

    pub fn kernel_mut(&mut self, k: usize, c: usize) -> &mut [f64] {
        let start = (k * self.channels() + c) * TAPS;
        &mut self.data[start..start + TAPS]
    }

    pub fn hidden_bias(&self) -> &[f64] {
        let s = self.kernel_len();
        &self.data[s..s + self.k]
    }

    pub fn hidden_bias_mut(&mut self) -> &mut [f64] {
        let s = self.kernel_len();
        &mut self.data[s..s + self.k]
    }

    /// Combination weights, `[o][k]`.
    pub fn combination(&self) -> &[f64] {
        let s = self.kernel_len() + self.k;
        &self.data[s..s + self.channels() * self.k]
    }

    pub fn combination_mut(&mut self) -> &mut [f64] {
        let s = self.kernel_len() + self.k;
        let n = self.channels() * self.k;
        &mut self.data[s..s + n]
    }

    pub fn output_bias(&self) -> &[f64] {
        let s = self.kernel_len() + self.k + self.channels() * self.k;
        &self.data[s..]
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let s = self.kernel_len() + self.k + self.channels() * self.k;
        &mut self.data[s..]
    }

    /// `R(theta)`: sum of squared first-layer kernel entries.
    pub fn kernel_penalty(&self) -> f64 {
        self.kernels().iter().map(|w| w * w).sum()
    }

    /// Runs the network on a channel-planar real block of shape `shape`.
    pub fn forward_channels(&self, input: &[f64], shape: [usize; 3], padding: Padding) -> Result<Vec<f64>> {
        let d: usize = shape.iter().product();
        if d == 0 || input.len() != d * self.channels() {
            return Err(Error::Dimension(format!(
                "input of {} values does not match {} channel(s) of shape {:?}",
                input.len(),
                self.channels(),
                shape
            )));
        }
        let engine = Engine::new(self, shape, padding);
        let mut ws = engine.workspace();
        let mut out = vec![0.0; input.len()];
        engine.forward(input, &mut ws, &mut out);
        Ok(out)
    }

    /// `f_theta` on a complex patch, in either mode.
    pub fn forward_patch(&self, patch: &[Complex64], shape: [usize; 3], padding: Padding) -> Result<Vec<Complex64>> {
        let d: usize = shape.iter().product();
        if patch.len() != d || d == 0 {
            return Err(Error::Dimension(format!("patch of {} voxels vs shape {:?}", patch.len(), shape)));
        }
        let engine = Engine::new(self, shape, padding);
        let mut ws = engine.workspace();
        Ok(engine.forward_complex(patch, &mut ws))
    }

    /// Replaces every patch `q_j` of the set by `f_theta(q_j)` (zero
    /// padding), in parallel over patches.
    pub fn apply_to_patches(&self, patches: &mut PatchSet) {
        let shape = patches.geometry().patch_dims();
        let d = patches.patch_len();
        let engine = Engine::new(self, shape, Padding::Zero);
        exec::for_each_chunk_mut(patches.as_mut_slice(), d, |_, p| {
            let mut ws = engine.workspace();
            let out = engine.forward_complex(p, &mut ws);
            p.copy_from_slice(&out);
        });
    }

    /// Smallest `|pre-activation|` of the hidden layer over all patches;
    /// finite-difference checks need this well away from zero.
    pub fn preactivation_margin(&self, patches: &PatchSet, padding: Padding) -> f64 {
        let shape = patches.geometry().patch_dims();
        let engine = Engine::new(self, shape, padding);
        let margins = exec::map_range(patches.len(), |j| {
            let mut ws = engine.workspace();
            engine.complex_samples(patches.patch(j))
                .iter()
                .map(|input| {
                    let mut out = vec![0.0; input.len()];
                    engine.forward(input, &mut ws, &mut out);
                    ws.min_abs_preactivation()
                })
                .fold(f64::INFINITY, f64::min)
        });
        margins.into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(THETA_MAGIC)?;
        let mode: u32 = match self.mode {
            NetMode::Complex => 0,
            NetMode::Real => 1,
        };
        w.write_all(&mode.to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != THETA_MAGIC {
            return Err(Error::Format("not a network parameter file".into()));
        }
        let mut b4 = [0u8; 4];
        read_exact(r, &mut b4)?;
        let mode = match u32::from_le_bytes(b4) {
            0 => NetMode::Complex,
            1 => NetMode::Real,
            m => return Err(Error::Format(format!("unknown network mode {m}"))),
        };
        read_exact(r, &mut b4)?;
        let k = u32::from_le_bytes(b4) as usize;
        if k == 0 || k > 1 << 20 {
            return Err(Error::Format(format!("implausible filter count {k}")));
        }
        let mut data = vec![0.0; param_count(mode, k)];
        let mut b8 = [0u8; 8];
        for v in data.iter_mut() {
            read_exact(r, &mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Format("trailing bytes after network parameters".into()));
        }
        NetworkParams::from_vec(mode, k, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut r)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated network parameter file".into()),
        _ => Error::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::{extract_patches, PatchGeometry};
    use crate::tensor::{ComplexVolume, Dims};
    use rand::Rng;

    #[test]
    fn parameter_count_formula() {
        assert_eq!(param_count(NetMode::Complex, 16), 16 * 54 + 16 + 32 + 2);
        assert_eq!(param_count(NetMode::Real, 16), 16 * 27 + 16 + 16 + 1);
        for k in 1..10 {
            for mode in [NetMode::Complex, NetMode::Real] {
                let p = NetworkParams::random(mode, k, 1).unwrap();
                let c = mode.channels();
                assert_eq!(p.len(), k * 27 * c + k + c * k + c);
                assert_eq!(
                    p.kernels().len() + p.hidden_bias().len() + p.combination().len() + p.output_bias().len(),
                    p.len()
                );
            }
        }
        assert!(NetworkParams::zeros(NetMode::Complex, 0).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = NetworkParams::zeros(NetMode::Complex, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input: Vec<f64> = (0..2 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = p.forward_channels(&input, [4, 4, 2], Padding::Zero).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centre_delta_is_relu() {
        let mut p = NetworkParams::zeros(NetMode::Real, 1).unwrap();
        p.kernel_mut(0, 0)[CENTER_TAP] = 1.0;
        p.combination_mut()[0] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input: Vec<f64> = (0..27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = p.forward_channels(&input, [3, 3, 3], Padding::Zero).unwrap();
        for (o, i) in out.iter().zip(&input) {
            assert_eq!(*o, i.max(0.0));
        }
        // complex mode, kernel reads channel 0 and writes output channel 0
        let mut q = NetworkParams::zeros(NetMode::Complex, 1).unwrap();
        q.kernel_mut(0, 0)[CENTER_TAP] = 1.0;
        q.combination_mut()[0] = 1.0;
        let input: Vec<f64> = (0..54).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = q.forward_channels(&input, [3, 3, 3], Padding::Zero).unwrap();
        for v in 0..27 {
            assert_eq!(out[v], input[v].max(0.0));
            assert_eq!(out[27 + v], 0.0);
        }
    }

    #[test]
    fn identity_params_reproduce_any_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [NetMode::Complex, NetMode::Real] {
            let p = NetworkParams::identity(mode);
            let patch: Vec<Complex64> = (0..4 * 3 * 2)
                .map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect();
            let out = p.forward_patch(&patch, [4, 3, 2], Padding::Zero).unwrap();
            assert_eq!(out, patch);
            assert_eq!(p.kernel_penalty(), 2.0 * mode.channels() as f64);
        }
    }

    #[test]
    fn network_is_not_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = [4, 4, 2];
        let found = (0..20u64).any(|seed| {
            let mut p = NetworkParams::random(NetMode::Complex, 4, seed).unwrap();
            for b in p.hidden_bias_mut() {
                *b = -0.5;
            }
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            let a = p.forward_channels(&x, shape, Padding::Zero).unwrap();
            let b = p.forward_channels(&x2, shape, Padding::Zero).unwrap();
            a.iter().zip(&b).any(|(u, v)| (2.0 * u - v).abs() > 1e-6)
        });
        assert!(found);
    }

    #[test]
    fn penalty_values() {
        let mut p = NetworkParams::zeros(NetMode::Complex, 3).unwrap();
        assert_eq!(p.kernel_penalty(), 0.0);
        p.kernel_mut(1, 0).fill(1.0);
        p.kernel_mut(1, 1).fill(1.0);
        p.hidden_bias_mut().fill(5.0);
        p.combination_mut().fill(5.0);
        assert_eq!(p.kernel_penalty(), 54.0);
        let q = NetworkParams::random(NetMode::Complex, 5, 9).unwrap();
        let mut s = q.clone();
        s.kernels_mut().iter_mut().for_each(|w| *w *= 3.0);
        assert!((s.kernel_penalty() - 9.0 * q.kernel_penalty()).abs() < 1e-12 * s.kernel_penalty());
    }

    #[test]
    fn circular_padding_is_translation_equivariant() {
        let shape = [5, 4, 3];
        let d = 60;
        let p = NetworkParams::random(NetMode::Complex, 6, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = |v: &[f64], s: [usize; 3]| -> Vec<f64> {
            let mut out = vec![0.0; v.len()];
            for c in 0..2 {
                for t in 0..3 {
                    for y in 0..4 {
                        for xx in 0..5 {
                            let src = c * d + xx + 5 * (y + 4 * t);
                            let dst = c * d + (xx + s[0]) % 5 + 5 * ((y + s[1]) % 4 + 4 * ((t + s[2]) % 3));
                            out[dst] = v[src];
                        }
                    }
                }
            }
            out
        };
        let base = p.forward_channels(&x, shape, Padding::Circular).unwrap();
        for s in [[1, 0, 0], [0, 1, 0], [0, 0, 1], [2, 3, 1]] {
            let shifted = p.forward_channels(&shift(&x, s), shape, Padding::Circular).unwrap();
            let back = shift(&shifted, [5 - s[0], 4 - s[1], 3 - s[2]]);
            for (a, b) in back.iter().zip(&base) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        // zero padding breaks equivariance at the border
        let z0 = p.forward_channels(&x, shape, Padding::Zero).unwrap();
        let z1 = p.forward_channels(&shift(&x, [1, 0, 0]), shape, Padding::Zero).unwrap();
        let back = shift(&z1, [4, 0, 0]);
        assert!(back.iter().zip(&z0).any(|(a, b)| (a - b).abs() > 1e-8));
    }

    #[test]
    fn real_mode_treats_parts_independently() {
        let p = NetworkParams::random(NetMode::Real, 4, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let patch: Vec<Complex64> =
            (0..18).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let out = p.forward_patch(&patch, [3, 3, 2], Padding::Zero).unwrap();
        let re: Vec<f64> = patch.iter().map(|z| z.re).collect();
        let im: Vec<f64> = patch.iter().map(|z| z.im).collect();
        let fr = p.forward_channels(&re, [3, 3, 2], Padding::Zero).unwrap();
        let fi = p.forward_channels(&im, [3, 3, 2], Padding::Zero).unwrap();
        for (v, o) in out.iter().enumerate() {
            assert_eq!(o.re, fr[v]);
            assert_eq!(o.im, fi[v]);
        }
    }

    #[test]
    fn apply_to_patches_matches_single_patch_forward() {
        let dims = Dims::new(8, 8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = ComplexVolume::from_fn(dims, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let g = PatchGeometry::new(dims, [4, 4, 2], [2, 2, 2]).unwrap();
        let p = NetworkParams::random(NetMode::Complex, 5, 8).unwrap();
        let set = extract_patches(&x, &g).unwrap();
        let mut out = set.clone();
        p.apply_to_patches(&mut out);
        for j in 0..set.len() {
            let single = p.forward_patch(set.patch(j), [4, 4, 2], Padding::Zero).unwrap();
            assert_eq!(out.patch(j), &single[..]);
        }
    }

    #[test]
    fn serialization_round_trip() {
        let p = NetworkParams::random(NetMode::Real, 7, 11).unwrap();
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * p.len());
        assert_eq!(NetworkParams::read(&mut buf.as_slice()).unwrap(), p);
        assert!(matches!(NetworkParams::read(&mut &buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(NetworkParams::read(&mut bad.as_slice()), Err(Error::Format(_))));
    }
}
