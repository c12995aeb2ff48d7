use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operators::{CartesianOp, ForwardOperator};
use crate::patches::{coverage_weights, PatchGeometry};
use crate::tensor::{ComplexVolume, KSpaceData};

/// Solves `H x = A^H y + lambda * raw_patch_sum` in closed form for a
/// single-coil masked Cartesian operator and patches of uniform coverage
/// `beta`: with `z = F(raw_patch_sum / beta)`, sampled frequencies get
/// `(y + lambda*beta*z) / (1 + lambda*beta)` and unsampled ones keep `z`.
pub fn closed_form_isometry(
    op: &CartesianOp,
    y: &KSpaceData,
    raw_patch_sum: &ComplexVolume,
    geometry: &PatchGeometry,
    lambda: f64,
) -> Result<ComplexVolume> {
    op.check_kspace(y)?;
    op.check_volume(raw_patch_sum)?;
    if op.coils().is_some() {
        return Err(Error::Precondition("closed form needs a single-coil operator".into()));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Precondition(format!("closed form needs lambda > 0, got {lambda}")));
    }
    if geometry.image() != op.dims() {
        return Err(Error::Dimension("patch geometry does not match operator".into()));
    }
    let w = coverage_weights(geometry);
    let beta = w[0];
    if w.iter().any(|&v| v != beta) {
        return Err(Error::Precondition("closed form needs uniform patch coverage".into()));
    }
    let lb = lambda * beta;
    let mut z = op.fft_frames(&raw_patch_sum.scaled(Complex64::new(1.0 / beta, 0.0)));
    let layout = op.layout();
    for t in 0..op.dims().nt {
        let block = &y.samples[layout.block(t, 0)];
        let frame = z.frame_mut(t);
        for (&i, &v) in op.selected(t).iter().zip(block) {
            frame[i] = (v + frame[i] * lb) / (1.0 + lb);
        }
    }
    Ok(op.ifft_frames(&z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::NormalSystem;
    use crate::patches::{extract_patches, reassemble_raw};
    use crate::solvers::solve_volume;
    use crate::tensor::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, dims: Dims) -> ComplexVolume {
        ComplexVolume::from_fn(dims, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn instance(seed: u64) -> (CartesianOp, KSpaceData, ComplexVolume, PatchGeometry) {
        let dims = Dims::new(16, 16, 4);
        let op = CartesianOp::random_mask(dims, 0.5, seed, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = op.forward(&random_volume(&mut rng, dims)).unwrap();
        let g = PatchGeometry::new(dims, [4, 4, 2], [4, 4, 2]).unwrap();
        let raw = reassemble_raw(&extract_patches(&random_volume(&mut rng, dims), &g).unwrap());
        (op, y, raw, g)
    }

    #[test]
    fn matches_cg() {
        for seed in 0..3 {
            let (op, y, raw, g) = instance(seed);
            for lambda in [0.1, 1.0, 5.0] {
                let closed = closed_form_isometry(&op, &y, &raw, &g, lambda).unwrap();
                let sys = NormalSystem::new(&op, &g, lambda).unwrap();
                let c = sys.rhs(&op.adjoint(&y).unwrap(), &raw).unwrap();
                let x0 = ComplexVolume::zeros(op.dims());
                let (x, _) = solve_volume(&sys, &c, &x0, 50, 1e-12).unwrap();
                assert!(closed.sub(&x).unwrap().norm() < 1e-6 * x.norm());
            }
        }
    }

    #[test]
    fn large_lambda_returns_patch_image() {
        let (op, y, raw, g) = instance(7);
        let x = closed_form_isometry(&op, &y, &raw, &g, 1e12).unwrap();
        assert!(x.sub(&raw).unwrap().norm() < 1e-9 * raw.norm());
    }

    #[test]
    fn consensus_value_is_kept() {
        // y equals the transformed patch image on sampled bins, lambda*beta = 1
        let (op, _, raw, g) = instance(3);
        let y = op.forward(&raw).unwrap();
        let x = closed_form_isometry(&op, &y, &raw, &g, 1.0).unwrap();
        assert!(x.sub(&raw).unwrap().norm() < 1e-12 * raw.norm());
    }

    #[test]
    fn rejects_nonuniform_coverage_and_coils() {
        let (op, y, raw, _) = instance(1);
        let g = PatchGeometry::new(op.dims(), [4, 4, 2], [2, 2, 2]).unwrap();
        assert!(matches!(closed_form_isometry(&op, &y, &raw, &g, 1.0), Err(Error::Precondition(_))));
        let coils = crate::operators::CoilMaps::synthetic(16, 16, 2).unwrap();
        let op2 = CartesianOp::full(op.dims(), Some(coils)).unwrap();
        let y2 = op2.forward(&raw).unwrap();
        let g2 = PatchGeometry::new(op.dims(), [4, 4, 2], [4, 4, 2]).unwrap();
        assert!(closed_form_isometry(&op2, &y2, &raw, &g2, 1.0).is_err());
    }
}
