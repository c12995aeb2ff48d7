//! Executable checks of the fixed-point characterization and of the
//! stability of the alternating scheme.

use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::operators::ForwardOperator;
use crate::patches::{extract_patches, PatchGeometry};
use crate::shallownet::{NetMode, NetworkParams};
use crate::solvers::{alone_reconstruct, AloneConfig, AloneOptions};
use crate::tensor::{ComplexVolume, KSpaceData};

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointReport {
    /// `||A x - y||`.
    pub data_residual: f64,
    /// `||E x - f_theta(E x)||` over raw patches.
    pub adaptation_residual: f64,
    /// `penalty_weight * R(theta)`.
    pub penalty: f64,
    pub objective: f64,
}

/// Weights of the joint functional
/// `1/2 ||A x - y||^2 + lambda/2 ||E x - f_theta(E x)||^2 + w R(theta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub lambda: f64,
    pub penalty_weight: f64,
}

fn data_residual(op: &dyn ForwardOperator, x: &ComplexVolume, y: &KSpaceData) -> Result<f64> {
    let r = op.forward(x)?;
    if r.samples.len() != y.samples.len() {
        return Err(Error::Dimension("data does not match the operator".into()));
    }
    Ok(r.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
}

fn adaptation_residual(x: &ComplexVolume, theta: &NetworkParams, geometry: &PatchGeometry) -> Result<f64> {
    let raw = extract_patches(x, geometry)?;
    let mut out = raw.clone();
    theta.apply_to_patches(&mut out);
    Ok(raw.as_slice().iter().zip(out.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
}

fn assemble(data: f64, adapt: f64, theta: &NetworkParams, w: ObjectiveWeights) -> FixedPointReport {
    let penalty = w.penalty_weight * theta.kernel_penalty();
    FixedPointReport {
        data_residual: data,
        adaptation_residual: adapt,
        penalty,
        objective: 0.5 * data * data + 0.5 * w.lambda * adapt * adapt + penalty,
    }
}

/// Both residuals of the adapted-solution conditions and the joint
/// objective at `(x, theta)`.
pub fn theta_adapted_residuals(
    x: &ComplexVolume,
    theta: &NetworkParams,
    y: &KSpaceData,
    op: &dyn ForwardOperator,
    geometry: &PatchGeometry,
    weights: ObjectiveWeights,
) -> Result<FixedPointReport> {
    op.check_volume(x)?;
    Ok(assemble(data_residual(op, x, y)?, adaptation_residual(x, theta, geometry)?, theta, weights))
}

/// A pair satisfying both adapted-solution conditions by construction:
/// `x* = x`, the identity-reproducing network, and noiseless data `y = A x`.
pub fn adapted_pair(x: &ComplexVolume, op: &dyn ForwardOperator, mode: NetMode) -> Result<(NetworkParams, KSpaceData)> {
    Ok((NetworkParams::identity(mode), op.forward(x)?))
}

/// Relative movement `||x_1 - x*|| / ||x*||` after one outer iteration
/// started at `x*` with the network frozen at `theta*`.
pub fn fixed_point_movement(
    x: &ComplexVolume,
    theta: &NetworkParams,
    y: &KSpaceData,
    op: &dyn ForwardOperator,
    cfg: &AloneConfig,
) -> Result<f64> {
    let cfg = AloneConfig { iterations: 1, epsilon: 0.0, ..cfg.clone() };
    let opts = AloneOptions {
        initial_x: Some(x.clone()),
        initial_theta: Some(theta.clone()),
        freeze_theta: true,
        ..AloneOptions::default()
    };
    let out = alone_reconstruct(y, op, &cfg, &opts)?;
    Ok(out.x.sub(x)?.norm() / x.norm())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartialMinimizerReport {
    pub base: f64,
    /// Smallest objective over the image probes `(x* + dx, theta*)`.
    pub min_image_probe: f64,
    /// Smallest objective over the parameter probes `(x*, theta* + dtheta)`.
    pub min_param_probe: f64,
    /// `base - min(probes)`; positive when some probe improved.
    pub margin: f64,
    pub passed: bool,
}

/// Allowed objective decrease before a probe counts as an improvement.
pub const PROBE_TOLERANCE: f64 = 1e-10;

fn gaussian_direction(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a * radius / norm).collect()
}

/// Evaluates the objective at `n_probes` seeded perturbations of radius
/// `radius` in `x` and, separately, in `theta`.
#[allow(clippy::too_many_arguments)]
pub fn partial_minimizer_check(
    x: &ComplexVolume,
    theta: &NetworkParams,
    y: &KSpaceData,
    op: &dyn ForwardOperator,
    geometry: &PatchGeometry,
    weights: ObjectiveWeights,
    n_probes: usize,
    radius: f64,
    seed: u64,
) -> Result<PartialMinimizerReport> {
    if n_probes == 0 || !(radius >= 0.0) {
        return Err(Error::Config("need at least one probe and a radius >= 0".into()));
    }
    let base = theta_adapted_residuals(x, theta, y, op, geometry, weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_image = f64::INFINITY;
    let mut min_param = f64::INFINITY;
    for _ in 0..n_probes {
        let dx = gaussian_direction(&mut rng, 2 * x.dims().len(), radius);
        let mut xp = x.clone();
        for (z, d) in xp.as_mut_slice().iter_mut().zip(dx.chunks_exact(2)) {
            *z += Complex64::new(d[0], d[1]);
        }
        min_image = min_image.min(theta_adapted_residuals(&xp, theta, y, op, geometry, weights)?.objective);

        let dt = gaussian_direction(&mut rng, theta.len(), radius);
        let mut tp = theta.clone();
        for (p, d) in tp.as_mut_slice().iter_mut().zip(&dt) {
            *p += d;
        }
        let probe = assemble(base.data_residual, adaptation_residual(x, &tp, geometry)?, &tp, weights);
        min_param = min_param.min(probe.objective);
    }
    let margin = base.objective - min_image.min(min_param);
    Ok(PartialMinimizerReport {
        base: base.objective,
        min_image_probe: min_image,
        min_param_probe: min_param,
        margin,
        passed: margin <= PROBE_TOLERANCE,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    /// Relative noise levels, non-increasing.
    pub levels: Vec<f64>,
    /// Per-component noise std used at each level.
    pub noise_std: Vec<f64>,
    /// `||x_k(y + eta_l) - x_k(y)||` per level.
    pub distances: Vec<f64>,
    pub passed: bool,
}

impl StabilityReport {
    /// Non-increasing within 10% slack, and the last distance below half the
    /// first (or the first is already zero).
    pub fn trend_holds(distances: &[f64]) -> bool {
        let monotone = distances.windows(2).all(|w| w[1] <= 1.1 * w[0]);
        let (first, last) = (distances[0], distances[distances.len() - 1]);
        monotone && (first == 0.0 || last < first / 2.0)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "level,noise_std,distance")?;
        for ((l, s), d) in self.levels.iter().zip(&self.noise_std).zip(&self.distances) {
            writeln!(w, "{l:e},{s:e},{d:e}")?;
        }
        Ok(())
    }
}

/// Runs the configured reconstruction on `y` and on `y + eta_l` with
/// per-component noise std `level * ||y|| / sqrt(m)`, all with the same
/// seeds, and reports the distances between the final iterates.
pub fn stability_experiment(
    y: &KSpaceData,
    levels: &[f64],
    op: &dyn ForwardOperator,
    cfg: &AloneConfig,
    noise_seed: u64,
) -> Result<StabilityReport> {
    if levels.is_empty() || levels.iter().any(|&l| !(l >= 0.0)) || levels.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config("noise levels must be non-negative and non-increasing".into()));
    }
    let base = alone_reconstruct(y, op, cfg, &AloneOptions::default())?;
    let scale = y.norm() / (y.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let unit: Vec<Complex64> =
        (0..y.len()).map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))).collect();
    let mut noise_std = Vec::with_capacity(levels.len());
    let mut distances = Vec::with_capacity(levels.len());
    for &level in levels {
        let std = level * scale;
        let mut yl = y.clone();
        for (s, u) in yl.samples.iter_mut().zip(&unit) {
            *s += u * std;
        }
        let out = alone_reconstruct(&yl, op, cfg, &AloneOptions::default())?;
        noise_std.push(std);
        distances.push(out.x.sub(&base.x)?.norm());
    }
    let passed = StabilityReport::trend_holds(&distances);
    Ok(StabilityReport { levels: levels.to_vec(), noise_std, distances, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{CartesianOp, CoilMaps, RadialOp, RadialTrajectory};
    use crate::tensor::Dims;

    fn volume(dims: Dims) -> ComplexVolume {
        ComplexVolume::from_fn(dims, |x, y, t| {
            Complex64::new(((x * 7 + y * 3 + t) % 5) as f64 / 5.0 - 0.3, ((x + 2 * y) % 3) as f64 / 4.0)
        })
    }

    fn setup() -> (RadialOp, PatchGeometry, ComplexVolume) {
        let dims = Dims::new(16, 16, 4);
        let op = RadialOp::new(dims, RadialTrajectory::golden_angle(6, 16, 4).unwrap(), Some(CoilMaps::synthetic(16, 16, 2).unwrap()))
            .unwrap();
        let g = PatchGeometry::new(dims, [8, 8, 2], [4, 4, 2]).unwrap();
        (op, g, volume(dims))
    }

    const W: ObjectiveWeights = ObjectiveWeights { lambda: 0.1, penalty_weight: 1e-4 };

    #[test]
    fn adapted_pair_has_vanishing_residuals() {
        let (op, g, x) = setup();
        for mode in [NetMode::Complex, NetMode::Real] {
            let (theta, y) = adapted_pair(&x, &op, mode).unwrap();
            let r = theta_adapted_residuals(&x, &theta, &y, &op, &g, W).unwrap();
            assert!(r.data_residual < 1e-8 && r.adaptation_residual < 1e-8);
            assert!((r.objective - r.penalty).abs() < 1e-10);
            assert_eq!(r, theta_adapted_residuals(&x, &theta, &y, &op, &g, W).unwrap());
        }
    }

    #[test]
    fn zero_image_gives_data_norm() {
        let (op, g, x) = setup();
        let (theta, y) = adapted_pair(&x, &op, NetMode::Complex).unwrap();
        let zero = ComplexVolume::zeros(x.dims());
        let r = theta_adapted_residuals(&zero, &theta, &y, &op, &g, W).unwrap();
        assert!((r.data_residual - y.norm()).abs() < 1e-12 * y.norm());
    }

    #[test]
    fn adapted_pair_is_fixed_point_and_partial_minimizer() {
        let (op, g, x) = setup();
        let (theta, y) = adapted_pair(&x, &op, NetMode::Complex).unwrap();
        let cfg = AloneConfig { patch: [8, 8, 2], stride: [4, 4, 2], ..AloneConfig::default() };
        assert!(fixed_point_movement(&x, &theta, &y, &op, &cfg).unwrap() < 1e-8);
        let rep = partial_minimizer_check(&x, &theta, &y, &op, &g, W, 20, 1e-2, 1).unwrap();
        assert!(rep.passed, "{rep:?}");
        let still = partial_minimizer_check(&x, &theta, &y, &op, &g, W, 3, 0.0, 1).unwrap();
        assert!(still.passed && still.margin == 0.0);
    }

    #[test]
    fn offset_pair_is_not_a_partial_minimizer() {
        let (op, g, x) = setup();
        let (theta, y) = adapted_pair(&x, &op, NetMode::Complex).unwrap();
        let shifted = ComplexVolume::from_fn(x.dims(), |i, j, t| x.get(i, j, t) + Complex64::new(1.0, 0.0));
        let rep = partial_minimizer_check(&shifted, &theta, &y, &op, &g, W, 10, 1e-2, 2).unwrap();
        assert!(!rep.passed && rep.margin > 0.0);
    }

    #[test]
    fn stability_distances() {
        let dims = Dims::new(16, 16, 4);
        let op = CartesianOp::random_mask(dims, 0.5, 1, None).unwrap();
        let y = op.forward(&volume(dims)).unwrap();
        let cfg = AloneConfig {
            iterations: 2,
            patch: [8, 8, 2],
            stride: [4, 4, 2],
            filters: 4,
            n_backprops: 10,
            batch_size: Some(4),
            ..AloneConfig::default()
        };
        let zero = stability_experiment(&y, &[0.0, 0.0], &op, &cfg, 3).unwrap();
        assert_eq!(zero.distances, vec![0.0, 0.0]);
        assert!(zero.passed);
        assert!(stability_experiment(&y, &[1e-3, 1e-1], &op, &cfg, 3).is_err());
        let mut buf = Vec::new();
        zero.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn trend_rule() {
        assert!(StabilityReport::trend_holds(&[1.0, 1.05, 0.3, 0.01]));
        assert!(!StabilityReport::trend_holds(&[1.0, 1.2, 0.3]));
        assert!(!StabilityReport::trend_holds(&[1.0, 0.9, 0.8]));
    }
}
