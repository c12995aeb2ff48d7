use super::dictionary::{norm, Dictionary};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::dot_real;

const RIDGE: f64 = 1e-10;
const CHUNK: usize = 512;

#[derive(Clone, Debug)]
pub struct ItkrmOutcome {
    pub dict: Dictionary,
    /// Mean thresholding-projection residual norm seen during each pass.
    pub pass_errors: Vec<f64>,
    /// Number of atoms replaced by training vectors.
    pub reseeded: usize,
}

struct ChunkSums {
    atoms: Vec<f64>,
    counts: Vec<usize>,
    errors: Vec<f64>,
}

/// Indices of the `s` largest `|c_k|`, ties to the lower index.
fn top_indices(corr: &[f64], s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..corr.len()).collect();
    idx.sort_by(|&a, &b| corr[b].abs().total_cmp(&corr[a].abs()).then(a.cmp(&b)));
    idx.truncate(s);
    idx
}

/// Solves `G a = b` for a small symmetric matrix by Cholesky, falling back
/// to `(G + RIDGE I) a = b` when `G` is numerically singular.
fn ridge_solve(g: &mut [f64], b: &mut [f64], n: usize) {
    let orig = g.to_vec();
    if !cholesky(g, n, 0.0) {
        g.copy_from_slice(&orig);
        cholesky(g, n, RIDGE);
    }
    for i in 0..n {
        let s: f64 = (0..i).map(|k| g[i * n + k] * b[k]).sum();
        b[i] = (b[i] - s) / g[i * n + i];
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| g[k * n + i] * b[k]).sum();
        b[i] = (b[i] - s) / g[i * n + i];
    }
}

/// In-place lower Cholesky factor of `g + ridge I`. Returns false if a
/// squared pivot falls to `RIDGE` or below; with a positive ridge such
/// pivots are clamped instead.
fn cholesky(g: &mut [f64], n: usize, ridge: f64) -> bool {
    for i in 0..n {
        g[i * n + i] += ridge;
    }
    for j in 0..n {
        let mut dj = g[j * n + j];
        for k in 0..j {
            dj -= g[j * n + k] * g[j * n + k];
        }
        if dj <= RIDGE {
            if ridge == 0.0 {
                return false;
            }
            dj = RIDGE;
        }
        let dj = dj.sqrt();
        g[j * n + j] = dj;
        for i in j + 1..n {
            let mut v = g[i * n + j];
            for k in 0..j {
                v -= g[i * n + k] * g[j * n + k];
            }
            g[i * n + j] = v / dj;
        }
    }
    true
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn pass(dict: &Dictionary, vectors: &[f64], s: usize) -> ChunkSums {
    let (d, k) = (dict.dim(), dict.atoms());
    let n = vectors.len() / d;
    let chunks = n.div_ceil(CHUNK);
    let partial = exec::map_range(chunks, |c| {
        let mut sums = ChunkSums { atoms: vec![0.0; k * d], counts: vec![0; k], errors: Vec::new() };
        let mut corr = vec![0.0; k];
        let mut res = vec![0.0; d];
        for y in vectors[c * CHUNK * d..((c + 1) * CHUNK).min(n) * d].chunks_exact(d) {
            dict.correlate(y, &mut corr);
            let support = top_indices(&corr, s);
            let m = support.len();
            let mut gram = vec![0.0; m * m];
            for (a, &i) in support.iter().enumerate() {
                for (b, &j) in support.iter().enumerate().take(a + 1) {
                    let v = dot_real(dict.atom(i), dict.atom(j));
                    gram[a * m + b] = v;
                    gram[b * m + a] = v;
                }
            }
            let mut coef: Vec<f64> = support.iter().map(|&i| corr[i]).collect();
            ridge_solve(&mut gram, &mut coef, m);
            res.copy_from_slice(y);
            for (&i, &a) in support.iter().zip(&coef) {
                for (r, v) in res.iter_mut().zip(dict.atom(i)) {
                    *r -= a * v;
                }
            }
            sums.errors.push(norm(&res));
            for &i in &support {
                let sg = sign(corr[i]);
                sums.counts[i] += 1;
                if sg == 0.0 {
                    continue;
                }
                let acc = &mut sums.atoms[i * d..(i + 1) * d];
                for ((a, r), v) in acc.iter_mut().zip(&res).zip(dict.atom(i)) {
                    *a += sg * (r + corr[i] * v);
                }
            }
        }
        sums
    });
    let mut total = ChunkSums { atoms: vec![0.0; k * d], counts: vec![0; k], errors: Vec::with_capacity(n) };
    for p in partial {
        for (a, b) in total.atoms.iter_mut().zip(&p.atoms) {
            *a += b;
        }
        for (a, b) in total.counts.iter_mut().zip(&p.counts) {
            *a += b;
        }
        total.errors.extend(p.errors);
    }
    total
}

/// Iterative thresholding and K residual means: each vector is assigned to
/// its `s` most correlated atoms, and every atom is replaced by the signed
/// sum of the residuals (plus its own component) of the vectors assigned to
/// it, then normalized. Atoms that receive nothing are replaced by the
/// worst-approximated training vectors.
pub fn itkrm_train(init: &Dictionary, vectors: &[f64], s: usize, n_iters: usize) -> Result<ItkrmOutcome> {
    let (d, k) = (init.dim(), init.atoms());
    if !vectors.len().is_multiple_of(d) {
        return Err(Error::Dimension("training vectors do not match the dictionary dimension".into()));
    }
    let n = vectors.len() / d;
    if n < k {
        return Err(Error::Precondition(format!("{n} training vectors for {k} atoms")));
    }
    if s == 0 || s > k {
        return Err(Error::Config(format!("sparsity {s} outside 1..={k}")));
    }
    let mut dict = init.clone();
    let mut pass_errors = Vec::with_capacity(n_iters);
    let mut reseeded = 0;
    for _ in 0..n_iters {
        let sums = pass(&dict, vectors, s);
        pass_errors.push(sums.errors.iter().sum::<f64>() / n as f64);
        let mut worst: Vec<usize> = (0..n).collect();
        worst.sort_by(|&a, &b| sums.errors[b].total_cmp(&sums.errors[a]).then(a.cmp(&b)));
        let mut candidates = worst.into_iter().filter(|&j| norm(&vectors[j * d..(j + 1) * d]) > 0.0);
        let mut data = sums.atoms;
        for i in 0..k {
            let col = &mut data[i * d..(i + 1) * d];
            let nrm = norm(col);
            if sums.counts[i] > 0 && nrm > 1e-12 {
                col.iter_mut().for_each(|v| *v /= nrm);
                continue;
            }
            match candidates.next() {
                Some(j) => {
                    let y = &vectors[j * d..(j + 1) * d];
                    let ny = norm(y);
                    for (c, v) in col.iter_mut().zip(y) {
                        *c = v / ny;
                    }
                    reseeded += 1;
                }
                None => col.copy_from_slice(dict.atom(i)),
            }
        }
        dict = Dictionary::new(d, k, data)?;
    }
    Ok(ItkrmOutcome { dict, pass_errors, reseeded })
}
