use super::dictionary::{norm, Dictionary};
use crate::error::{Error, Result};
use crate::tensor::dot_real;

/// Residual norm below which pursuit stops.
const RESIDUAL_STOP: f64 = 1e-10;
/// Smallest admissible squared Cholesky pivot for a new atom.
const PIVOT_MIN: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    /// `(atom, coefficient)` in selection order.
    pub coeffs: Vec<(usize, f64)>,
    pub residual_norm: f64,
    /// Residual norm before the first and after every accepted step.
    pub history: Vec<f64>,
    /// Atoms rejected because they were (numerically) in the span of the
    /// active set.
    pub dropped: Vec<usize>,
}

impl SparseCode {
    pub fn support_len(&self) -> usize {
        self.coeffs.len()
    }

    /// Dense coefficient vector of length `atoms`.
    pub fn dense(&self, atoms: usize) -> Vec<f64> {
        let mut g = vec![0.0; atoms];
        for &(k, c) in &self.coeffs {
            g[k] = c;
        }
        g
    }
}

/// Orthogonal matching pursuit with at most `s` atoms. The least-squares
/// refit on the active set uses an incrementally updated Cholesky factor of
/// its Gram matrix.
pub fn omp_sparse_code(dict: &Dictionary, y: &[f64], s: usize) -> Result<SparseCode> {
    let (d, k_atoms) = (dict.dim(), dict.atoms());
    if y.len() != d {
        return Err(Error::Dimension(format!("vector of length {} for dictionary dimension {d}", y.len())));
    }
    if s > k_atoms {
        return Err(Error::Config(format!("sparsity {s} exceeds {k_atoms} atoms")));
    }
    let mut dty = vec![0.0; k_atoms];
    dict.correlate(y, &mut dty);
    let mut corr = dty.clone();
    let mut excluded = vec![false; k_atoms];
    let mut active: Vec<usize> = Vec::with_capacity(s);
    // lower triangular factor, row i holds i + 1 entries
    let mut chol: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut gamma: Vec<f64> = Vec::new();
    let mut r = y.to_vec();
    let mut rn = norm(&r);
    let mut history = vec![rn];
    let mut dropped = Vec::new();

    while active.len() < s && rn >= RESIDUAL_STOP {
        let best = (0..k_atoms)
            .filter(|&k| !excluded[k])
            .max_by(|&a, &b| corr[a].abs().total_cmp(&corr[b].abs()).then(b.cmp(&a)));
        let Some(k) = best else { break };
        if corr[k] == 0.0 {
            break;
        }
        excluded[k] = true;
        let atom = dict.atom(k);
        let mut w: Vec<f64> = active.iter().map(|&i| dot_real(dict.atom(i), atom)).collect();
        for i in 0..w.len() {
            let s: f64 = (0..i).map(|j| chol[i][j] * w[j]).sum();
            w[i] = (w[i] - s) / chol[i][i];
        }
        let pivot = dot_real(atom, atom) - w.iter().map(|v| v * v).sum::<f64>();
        if !(pivot > PIVOT_MIN) {
            dropped.push(k);
            continue;
        }
        w.push(pivot.sqrt());
        chol.push(w);
        active.push(k);

        // L L^T gamma = D_I^T y
        let n = active.len();
        let mut z: Vec<f64> = active.iter().map(|&i| dty[i]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| chol[i][j] * z[j]).sum();
            z[i] = (z[i] - s) / chol[i][i];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| chol[j][i] * z[j]).sum();
            z[i] = (z[i] - s) / chol[i][i];
        }
        gamma = z;
        r.copy_from_slice(y);
        for (&i, &g) in active.iter().zip(&gamma) {
            for (ri, a) in r.iter_mut().zip(dict.atom(i)) {
                *ri -= g * a;
            }
        }
        rn = norm(&r);
        history.push(rn);
        dict.correlate(&r, &mut corr);
    }
    Ok(SparseCode {
        coeffs: active.into_iter().zip(gamma).collect(),
        residual_norm: rn,
        history,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Orthonormal basis from Gram-Schmidt on seeded Gaussian vectors.
    fn orthonormal(d: usize, seed: u64) -> Dictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        while cols.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            for c in &cols {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
            let n = norm(&v);
            cols.push(v.into_iter().map(|a| a / n).collect());
        }
        Dictionary::from_columns(d, d, cols.concat()).unwrap()
    }

    #[test]
    fn identity_dictionary_picks_the_basis_vector() {
        let d = Dictionary::identity(6);
        let mut y = vec![0.0; 6];
        y[3] = 1.0;
        let c = omp_sparse_code(&d, &y, 3).unwrap();
        assert_eq!(c.coeffs, vec![(3, 1.0)]);
        assert_eq!(c.residual_norm, 0.0);
    }

    #[test]
    fn exact_recovery_on_orthonormal_atoms() {
        let d = orthonormal(8, 1);
        let y: Vec<f64> = d.atom(0).iter().zip(d.atom(1)).map(|(a, b)| 2.0 * a + b).collect();
        let c = omp_sparse_code(&d, &y, 2).unwrap();
        let g = c.dense(8);
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] - 1.0).abs() < 1e-12);
        assert!(g[2..].iter().all(|&v| v == 0.0));
        assert!(c.residual_norm < 1e-12);
    }

    #[test]
    fn duplicate_atom_is_dropped() {
        let mut data = Dictionary::identity(3).as_slice().to_vec();
        data.extend_from_slice(&[1.0, 0.0, 0.0]);
        let d = Dictionary::new(3, 4, data).unwrap();
        let y = [1.0, 0.5, 0.0];
        let c = omp_sparse_code(&d, &y, 3).unwrap();
        // atom 0 and its copy tie; the lower index wins, the copy cannot
        // enter once 0 is active
        assert!(c.residual_norm < 1e-12);
        assert!(c.coeffs.iter().all(|&(k, _)| k != 3) || c.coeffs.iter().all(|&(k, _)| k != 0));
        assert!(omp_sparse_code(&d, &y, 5).is_err());
    }

    #[test]
    fn nearly_collinear_atom_is_dropped_and_flagged() {
        let e: f64 = 1e-7;
        let n = (1.0 + e * e).sqrt();
        let d = Dictionary::new(3, 2, vec![1.0, 0.0, 0.0, 1.0 / n, e / n, 0.0]).unwrap();
        let c = omp_sparse_code(&d, &[1.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(c.dropped, vec![0]);
        assert_eq!(c.support_len(), 1);
        assert_eq!(c.coeffs[0].0, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn residual_never_increases(seed in 0u64..1_000, s in 1usize..12) {
            let d = Dictionary::random(16, 24, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let y: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = omp_sparse_code(&d, &y, s).unwrap();
            prop_assert!(c.support_len() <= s);
            for w in c.history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
            let approx = d.synthesize(&c.coeffs);
            let r: Vec<f64> = y.iter().zip(&approx).map(|(a, b)| a - b).collect();
            prop_assert!((norm(&r) - c.residual_norm).abs() < 1e-9);
        }
    }
}
