use num_complex::Complex64;

use super::{NetMode, NetworkParams, TAPS};

/// Border handling of the 3x3x3 convolution. Circular padding exists for
/// testing translation equivariance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Circular,
}

const OUTSIDE: u32 = u32::MAX;

/// A network bound to one patch shape: neighbour table plus the kernels in
/// `[c*27 + tap][k]` order so the hidden-layer inner loop runs over `k`.
pub(crate) struct Engine<'a> {
    params: &'a NetworkParams,
    d: usize,
    channels: usize,
    k: usize,
    neighbors: Vec<u32>,
    wt: Vec<f64>,
}

/// Per-sample scratch: the im2col matrix and hidden pre-activations, kept
/// for the backward pass.
pub(crate) struct Workspace {
    col: Vec<f64>,
    pre: Vec<f64>,
}

impl Workspace {
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn neighbor_table(shape: [usize; 3], padding: Padding) -> Vec<u32> {
    let [nx, ny, nt] = shape;
    let d = nx * ny * nt;
    let mut table = Vec::with_capacity(d * TAPS);
    let step = |i: usize, o: usize, n: usize| -> Option<usize> {
        let j = i as isize + o as isize - 1;
        match padding {
            Padding::Zero => (0..n as isize).contains(&j).then_some(j as usize),
            Padding::Circular => Some(j.rem_euclid(n as isize) as usize),
        }
    };
    for t in 0..nt {
        for y in 0..ny {
            for x in 0..nx {
                for tap in 0..TAPS {
                    let (ox, oy, ot) = (tap % 3, (tap / 3) % 3, tap / 9);
                    let idx = match (step(x, ox, nx), step(y, oy, ny), step(t, ot, nt)) {
                        (Some(a), Some(b), Some(c)) => (a + nx * (b + ny * c)) as u32,
                        _ => OUTSIDE,
                    };
                    table.push(idx);
                }
            }
        }
    }
    table
}

impl<'a> Engine<'a> {
    pub fn new(params: &'a NetworkParams, shape: [usize; 3], padding: Padding) -> Self {
        let channels = params.channels();
        let k = params.filters();
        let mut wt = vec![0.0; channels * TAPS * k];
        for kk in 0..k {
            for c in 0..channels {
                for (tap, &w) in params.kernel(kk, c).iter().enumerate() {
                    wt[(c * TAPS + tap) * k + kk] = w;
                }
            }
        }
        Engine {
            params,
            d: shape.iter().product(),
            channels,
            k,
            neighbors: neighbor_table(shape, padding),
            wt,
        }
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            col: vec![0.0; self.d * self.channels * TAPS],
            pre: vec![0.0; self.d * self.k],
        }
    }

    /// Splits a complex patch into the network's real input samples.
    pub fn complex_samples(&self, patch: &[Complex64]) -> Vec<Vec<f64>> {
        match self.params.mode() {
            NetMode::Complex => {
                let mut v = Vec::with_capacity(2 * patch.len());
                v.extend(patch.iter().map(|z| z.re));
                v.extend(patch.iter().map(|z| z.im));
                vec![v]
            }
            NetMode::Real => vec![
                patch.iter().map(|z| z.re).collect(),
                patch.iter().map(|z| z.im).collect(),
            ],
        }
    }

    pub fn forward_complex(&self, patch: &[Complex64], ws: &mut Workspace) -> Vec<Complex64> {
        let d = self.d;
        let samples = self.complex_samples(patch);
        let outs: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| {
                let mut o = vec![0.0; s.len()];
                self.forward(s, ws, &mut o);
                o
            })
            .collect();
        match self.params.mode() {
            NetMode::Complex => (0..d).map(|v| Complex64::new(outs[0][v], outs[0][d + v])).collect(),
            NetMode::Real => (0..d).map(|v| Complex64::new(outs[0][v], outs[1][v])).collect(),
        }
    }

    /// `out = comb * relu(conv(input) + b1) + b2`, channel-planar input
    /// and output. Leaves `col` and `pre` in `ws`.
    pub fn forward(&self, input: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        let (d, k, ch) = (self.d, self.k, self.channels);
        let j_len = ch * TAPS;
        let b1 = self.params.hidden_bias();
        let comb = self.params.combination();
        let b2 = self.params.output_bias();
        for v in 0..d {
            let nb = &self.neighbors[v * TAPS..(v + 1) * TAPS];
            let col = &mut ws.col[v * j_len..(v + 1) * j_len];
            for c in 0..ch {
                let src = &input[c * d..(c + 1) * d];
                for (dst, &n) in col[c * TAPS..(c + 1) * TAPS].iter_mut().zip(nb) {
                    *dst = if n == OUTSIDE { 0.0 } else { src[n as usize] };
                }
            }
            let pre = &mut ws.pre[v * k..(v + 1) * k];
            pre.copy_from_slice(b1);
            for (j, &a) in col.iter().enumerate() {
                if a != 0.0 {
                    for (p, w) in pre.iter_mut().zip(&self.wt[j * k..(j + 1) * k]) {
                        *p += a * w;
                    }
                }
            }
            for o in 0..ch {
                let mut s = b2[o];
                for (p, w) in pre.iter().zip(&comb[o * k..(o + 1) * k]) {
                    if *p > 0.0 {
                        s += p * w;
                    }
                }
                out[o * d + v] = s;
            }
        }
    }

    /// Accumulates parameter gradients for output gradient `dout` into
    /// `grad` (same layout as the parameters) using the state left by the
    /// preceding `forward` call. Kernel gradients go to `dwt` in the
    /// transposed layout and are folded in by [`Engine::fold_kernel_grad`].
    pub fn backward(&self, ws: &Workspace, dout: &[f64], grad: &mut [f64], dwt: &mut [f64]) {
        let (d, k, ch) = (self.d, self.k, self.channels);
        let j_len = ch * TAPS;
        let comb = self.params.combination();
        let kern_len = k * j_len;
        let (_, rest) = grad.split_at_mut(kern_len);
        let (gb1, rest) = rest.split_at_mut(k);
        let (gcomb, gb2) = rest.split_at_mut(ch * k);
        let mut dh = vec![0.0; k];
        for v in 0..d {
            let pre = &ws.pre[v * k..(v + 1) * k];
            dh.fill(0.0);
            for o in 0..ch {
                let g = dout[o * d + v];
                if g == 0.0 {
                    continue;
                }
                gb2[o] += g;
                let gc = &mut gcomb[o * k..(o + 1) * k];
                let w = &comb[o * k..(o + 1) * k];
                for kk in 0..k {
                    if pre[kk] > 0.0 {
                        gc[kk] += g * pre[kk];
                        dh[kk] += g * w[kk];
                    }
                }
            }
            for (b, h) in gb1.iter_mut().zip(&dh) {
                *b += h;
            }
            let col = &ws.col[v * j_len..(v + 1) * j_len];
            for (j, &a) in col.iter().enumerate() {
                if a != 0.0 {
                    for (g, h) in dwt[j * k..(j + 1) * k].iter_mut().zip(&dh) {
                        *g += a * h;
                    }
                }
            }
        }
    }

    pub fn kernel_grad_len(&self) -> usize {
        self.k * self.channels * TAPS
    }

    /// Adds transposed kernel gradients into the parameter layout.
    pub fn fold_kernel_grad(&self, dwt: &[f64], grad: &mut [f64]) {
        let (k, ch) = (self.k, self.channels);
        for kk in 0..k {
            for c in 0..ch {
                for tap in 0..TAPS {
                    grad[(kk * ch + c) * TAPS + tap] += dwt[(c * TAPS + tap) * k + kk];
                }
            }
        }
    }
}
