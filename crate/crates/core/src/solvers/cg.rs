use num_complex::Complex64;

use crate::error::{dim_err, Error, Result};
use crate::operators::{LinearMap, NormalSystem};
use crate::tensor::{axpy, dot_conj, norm_sqr, ComplexVolume};

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<Complex64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Residual norms `||c - H x_i||`, starting with the initial guess.
    pub history: Vec<f64>,
}

/// Conjugate gradients (identity preconditioner) on `H x = c`, at most
/// `n_iter` steps, stopping early once `||r|| <= tol * ||c||`.
pub fn pcg_solve(
    h: &dyn LinearMap,
    c: &[Complex64],
    x0: Option<&[Complex64]>,
    n_iter: usize,
    tol: f64,
) -> Result<CgOutcome> {
    let n = h.dim();
    if c.len() != n || x0.is_some_and(|x| x.len() != n) {
        return dim_err(format!("system of size {n} with rhs {} ", c.len()));
    }
    let mut x = x0.map_or_else(|| vec![Complex64::new(0.0, 0.0); n], <[Complex64]>::to_vec);
    let mut r = c.to_vec();
    if x0.is_some() {
        let hx = h.apply(&x)?;
        for (ri, hi) in r.iter_mut().zip(&hx) {
            *ri -= hi;
        }
    }
    let target = tol * norm_sqr(c).sqrt();
    let mut rs = norm_sqr(&r);
    let mut history = vec![rs.sqrt()];
    if !rs.is_finite() {
        return Err(Error::Divergence("non-finite initial residual".into()));
    }
    let mut p = r.clone();
    let mut iterations = 0;
    while iterations < n_iter && rs.sqrt() > target && rs > 0.0 {
        let hp = h.apply(&p)?;
        let curv = dot_conj(&hp, &p).re;
        if !(curv > 0.0) || !curv.is_finite() {
            return Err(Error::Divergence(format!(
                "non-positive curvature {curv:e} at CG step {iterations}; operator is not positive definite"
            )));
        }
        let alpha = rs / curv;
        axpy(Complex64::new(alpha, 0.0), &p, &mut x);
        axpy(Complex64::new(-alpha, 0.0), &hp, &mut r);
        let rs_new = norm_sqr(&r);
        if !rs_new.is_finite() {
            return Err(Error::Divergence(format!("non-finite residual at CG step {iterations}")));
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + *pi * beta;
        }
        rs = rs_new;
        iterations += 1;
        history.push(rs.sqrt());
    }
    Ok(CgOutcome { x, residual_norm: rs.sqrt(), iterations, history })
}

/// [`pcg_solve`] on volumes for the reconstruction system `H`.
pub fn solve_volume(
    system: &NormalSystem<'_>,
    c: &ComplexVolume,
    x0: &ComplexVolume,
    n_iter: usize,
    tol: f64,
) -> Result<(ComplexVolume, CgOutcome)> {
    let dims = system.operator().dims();
    c.check_dims(dims)?;
    x0.check_dims(dims)?;
    let out = pcg_solve(system, c.as_slice(), Some(x0.as_slice()), n_iter, tol)?;
    let x = ComplexVolume::from_vec(dims, out.x.clone())?;
    Ok((x, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::FnMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn identity_converges_in_one_step() {
        let h = FnMap::new(5, |x: &[Complex64]| x.to_vec());
        let rhs: Vec<Complex64> = (0..5).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let out = pcg_solve(&h, &rhs, None, 10, 1e-14).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, rhs);
    }

    #[test]
    fn four_eigenvalues_four_steps() {
        let d = [1.0, 2.0, 4.0, 8.0];
        let h = FnMap::new(4, move |x: &[Complex64]| x.iter().zip(d).map(|(v, s)| v * s).collect());
        let out = pcg_solve(&h, &[c(1.0); 4], None, 4, 0.0).unwrap();
        for (xi, s) in out.x.iter().zip(d) {
            assert!((xi - c(1.0 / s)).norm() < 1e-12);
        }
    }

    #[test]
    fn indefinite_map_is_reported() {
        let h = FnMap::new(2, |x: &[Complex64]| vec![x[0], -x[1]]);
        let r = pcg_solve(&h, &[c(0.0), c(1.0)], None, 5, 0.0);
        assert!(matches!(r, Err(Error::Divergence(_))));
        let nan = FnMap::new(2, |_: &[Complex64]| vec![c(f64::NAN); 2]);
        assert!(matches!(pcg_solve(&nan, &[c(1.0); 2], None, 5, 0.0), Err(Error::Divergence(_))));
    }

    #[test]
    fn warm_start_at_solution_does_nothing() {
        let h = FnMap::new(3, |x: &[Complex64]| x.iter().map(|v| v * 2.0).collect());
        let x0 = [c(1.0), c(2.0), c(3.0)];
        let rhs: Vec<Complex64> = x0.iter().map(|v| v * 2.0).collect();
        let out = pcg_solve(&h, &rhs, Some(&x0), 4, 0.0).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, x0.to_vec());
    }

    /// Hermitian positive definite `B^H B + mu I` on a random complex `B`.
    pub(crate) fn spd_map(seed: u64, n: usize, mu: f64) -> impl LinearMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<Complex64> = (0..n * n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        FnMap::new(n, move |x: &[Complex64]| {
            let bx: Vec<Complex64> = (0..n).map(|i| (0..n).map(|j| b[i * n + j] * x[j]).sum()).collect();
            (0..n).map(|j| (0..n).map(|i| b[i * n + j].conj() * bx[i]).sum::<Complex64>() + x[j] * mu).collect()
        })
    }

    #[test]
    fn energy_error_decreases_on_dense_spd_maps() {
        for seed in 0..20 {
            let h = spd_map(seed, 12, 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let rhs: Vec<Complex64> =
                (0..12).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let exact = pcg_solve(&h, &rhs, None, 60, 1e-15).unwrap().x;
            let energy: Vec<f64> = (0..=12)
                .map(|i| {
                    let x = pcg_solve(&h, &rhs, None, i, 0.0).unwrap().x;
                    let e: Vec<Complex64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
                    dot_conj(&h.apply(&e).unwrap(), &e).re
                })
                .collect();
            for w in energy.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-20, "seed {seed}: {energy:?}");
            }
        }
    }

    #[test]
    fn residual_is_not_monotone_in_general() {
        // CG minimizes the energy norm, not the residual
        let h = spd_map(0, 12, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let rhs: Vec<Complex64> =
            (0..12).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let out = pcg_solve(&h, &rhs, None, 12, 1e-14).unwrap();
        assert!(out.history.windows(2).any(|w| w[1] > w[0]));
    }
}
