//! Run configuration and the simulate / reconstruct / evaluate / sweep
//! workflows shared by the command-line front end and the test suites.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{dic_reconstruct, tv_admm_reconstruct, DicConfig, DicOptions, TvConfig};
use crate::error::{Error, Result};
use crate::metrics::{cap_psnr, per_frame, MetricsRecord, DEFAULT_CROP};
use crate::operators::trajectory::spokes_for_acceleration;
use crate::operators::{CartesianOp, CoilMaps, ForwardOperator, RadialOp, RadialTrajectory};
use crate::phantom::{make_phantom, noise_std_for_snr, retrospective_sample, PhantomSpec};
use crate::solvers::{alone_reconstruct, AloneConfig, AloneOptions, IterationRecord, StopReason, Trace};
use crate::tensor::{save_kspace, save_volume};
use crate::tensor::{ComplexVolume, KSpaceData};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.vol";
pub const KSPACE_FILE: &str = "kspace.ksp";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const RECON_FILE: &str = "recon.vol";
pub const TRACE_FILE: &str = "trace.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adjoint,
    Tv,
    Dic,
    Alone,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Adjoint, Method::Tv, Method::Dic, Method::Alone];

    pub fn name(self) -> &'static str {
        match self {
            Method::Adjoint => "adjoint",
            Method::Tv => "tv",
            Method::Dic => "dic",
            Method::Alone => "alone",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected adjoint, tv, dic or alone)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Radial,
    Cartesian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub kind: TrajectoryKind,
    /// Undersampling relative to the Nyquist spoke count (radial) or the
    /// full grid (Cartesian).
    pub acceleration: f64,
    /// Overrides `acceleration` for radial sampling.
    pub spokes_per_frame: Option<usize>,
    /// Defaults to `nx`.
    pub samples_per_spoke: Option<usize>,
    /// Number of synthetic coil maps; 0 for single-coil data without maps.
    pub coils: usize,
    /// Per-component noise std; exclusive with `snr_db`.
    pub noise_std: Option<f64>,
    /// Input SNR of the simulated data in dB.
    pub snr_db: Option<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            kind: TrajectoryKind::Radial,
            acceleration: 9.0,
            spokes_per_frame: None,
            samples_per_spoke: None,
            coils: 4,
            noise_std: None,
            snr_db: Some(30.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { lambdas: vec![0.01, 0.03, 0.1, 0.3, 1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for the noise and the Cartesian mask; `--seed` also overrides
    /// the phantom and method seeds.
    pub seed: u64,
    pub method: Method,
    pub output_dir: PathBuf,
    /// Central fraction per spatial axis used for metrics.
    pub crop: f64,
    pub phantom: PhantomSpec,
    pub sampling: SamplingConfig,
    pub alone: AloneConfig,
    pub tv: TvConfig,
    pub dic: DicConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            method: Method::Alone,
            output_dir: PathBuf::from("out"),
            crop: DEFAULT_CROP,
            phantom: PhantomSpec::default(),
            sampling: SamplingConfig::default(),
            alone: AloneConfig::default(),
            tv: TvConfig::default(),
            dic: DicConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Sets the run seed and every component seed to `seed`.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.phantom.seed = seed;
        self.alone.seed = seed;
        self.dic.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        let s = &self.sampling;
        if !(s.acceleration >= 1.0) {
            return Err(Error::Config("acceleration must be >= 1".into()));
        }
        match (s.noise_std, s.snr_db) {
            (Some(_), Some(_)) => return Err(Error::Config("set either noise_std or snr_db, not both".into())),
            (Some(n), None) if !(n >= 0.0) => return Err(Error::Config("noise_std must be >= 0".into())),
            (None, Some(db)) if !db.is_finite() => return Err(Error::Config("snr_db must be finite".into())),
            _ => {}
        }
        if !(self.crop > 0.0 && self.crop <= 1.0) {
            return Err(Error::Config("crop must lie in (0, 1]".into()));
        }
        if self.sweep.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("sweep lambdas must be > 0".into()));
        }
        self.alone.validate()?;
        self.tv.validate()?;
        self.dic.validate()
    }

    /// Spokes per frame implied by the sampling settings.
    pub fn spokes_per_frame(&self) -> Result<usize> {
        match self.sampling.spokes_per_frame {
            Some(n) => Ok(n),
            None => spokes_for_acceleration(self.phantom.dims[0], self.sampling.acceleration),
        }
    }

    pub fn build_operator(&self) -> Result<Box<dyn ForwardOperator>> {
        let dims = self.phantom.dims();
        let s = &self.sampling;
        let coils = match s.coils {
            0 => None,
            n => Some(CoilMaps::synthetic(dims.nx, dims.ny, n)?),
        };
        Ok(match s.kind {
            TrajectoryKind::Radial => {
                let samples = s.samples_per_spoke.unwrap_or(dims.nx);
                let traj = RadialTrajectory::golden_angle(self.spokes_per_frame()?, samples, dims.nt)?;
                Box::new(RadialOp::new(dims, traj, coils)?)
            }
            TrajectoryKind::Cartesian => Box::new(CartesianOp::random_mask(dims, 1.0 / s.acceleration, self.seed, coils)?),
        })
    }

    fn radial_trajectory(&self) -> Result<Option<RadialTrajectory>> {
        if self.sampling.kind != TrajectoryKind::Radial {
            return Ok(None);
        }
        let samples = self.sampling.samples_per_spoke.unwrap_or(self.phantom.dims[0]);
        Ok(Some(RadialTrajectory::golden_angle(self.spokes_per_frame()?, samples, self.phantom.dims[2])?))
    }
}

pub struct Simulation {
    pub ground_truth: ComplexVolume,
    pub kspace: KSpaceData,
    pub noise_std: f64,
}

/// Phantom plus noisy retrospectively sampled data.
pub fn simulate(cfg: &RunConfig, op: &dyn ForwardOperator) -> Result<Simulation> {
    let ground_truth = make_phantom(&cfg.phantom)?;
    let noise_std = match (cfg.sampling.noise_std, cfg.sampling.snr_db) {
        (Some(n), _) => n,
        (None, Some(db)) => noise_std_for_snr(&op.forward(&ground_truth)?, db),
        (None, None) => 0.0,
    };
    let kspace = retrospective_sample(&ground_truth, op, noise_std, cfg.seed)?;
    Ok(Simulation { ground_truth, kspace, noise_std })
}

/// Writes the phantom, data, trajectory and resolved configuration.
pub fn write_simulation(sim: &Simulation, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![dir.join(GROUND_TRUTH_FILE), dir.join(KSPACE_FILE)];
    save_volume(&files[0], &sim.ground_truth)?;
    save_kspace(&files[1], &sim.kspace)?;
    if let Some(traj) = cfg.radial_trajectory()? {
        let path = dir.join(TRAJECTORY_FILE);
        let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
        traj.write_csv(&mut w)?;
        w.flush()?;
        files.push(path);
    }
    let path = dir.join(RESOLVED_CONFIG_FILE);
    cfg.save(&path)?;
    files.push(path);
    Ok(files)
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub method: Method,
    pub x: ComplexVolume,
    pub trace: Trace,
    pub stop: StopReason,
    pub seconds: f64,
}

fn adjoint_record(op: &dyn ForwardOperator, x: &ComplexVolume, y: &KSpaceData, reference: Option<&ComplexVolume>, crop: f64, secs: f64) -> Result<IterationRecord> {
    let r = op.forward(x)?;
    let fidelity = r.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let m = reference.map(|r| MetricsRecord::compute(x, r, crop)).transpose()?;
    Ok(IterationRecord {
        iteration: 1,
        e_k: 0.0,
        fidelity,
        train_loss: 0.0,
        psnr: m.as_ref().map(|m| m.psnr),
        ssim: m.as_ref().map(|m| m.ssim),
        nrmse: m.as_ref().map(|m| m.nrmse),
        t_train_s: 0.0,
        t_reg_s: 0.0,
        t_pcg_s: secs,
    })
}

/// Runs `method` with the settings in `cfg`. A diverged solver still
/// returns its last finite iterate and partial trace, flagged in `stop`.
pub fn reconstruct(
    cfg: &RunConfig,
    method: Method,
    y: &KSpaceData,
    op: &dyn ForwardOperator,
    reference: Option<&ComplexVolume>,
) -> Result<Reconstruction> {
    let start = Instant::now();
    let crop = cfg.crop;
    let (x, trace, stop) = match method {
        Method::Adjoint => {
            op.check_kspace(y)?;
            let x = op.adjoint(y)?;
            let rec = adjoint_record(op, &x, y, reference, crop, start.elapsed().as_secs_f64())?;
            (x, Trace { records: vec![rec] }, StopReason::MaxIterations)
        }
        Method::Tv => {
            let out = tv_admm_reconstruct(y, op, &cfg.tv, reference, crop)?;
            let stop = out.diverged.map_or(StopReason::MaxIterations, StopReason::Diverged);
            (out.x, out.trace, stop)
        }
        Method::Dic => {
            let opts = DicOptions { reference, crop: Some(crop), ..DicOptions::default() };
            let out = dic_reconstruct(y, op, &cfg.dic, &opts)?;
            (out.x, out.trace, out.stop)
        }
        Method::Alone => {
            let opts = AloneOptions { reference, crop: Some(crop), ..AloneOptions::default() };
            let out = alone_reconstruct(y, op, &cfg.alone, &opts)?;
            (out.x, out.trace, out.stop)
        }
    };
    Ok(Reconstruction { method, x, trace, stop, seconds: start.elapsed().as_secs_f64() })
}

/// Header of the per-run phase timing file.
pub const TIMINGS_HEADER: &str = "method,iterations,t_train_s,t_reg_s,t_pcg_s,t_total_s,t_reg_per_iter_s";

/// Writes the reconstruction, its trace, phase timings and the resolved
/// configuration.
pub fn write_reconstruction(rec: &Reconstruction, cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_volume(dir.join(RECON_FILE), &rec.x)?;
    rec.trace.save_csv(&dir.join(TRACE_FILE))?;
    let (a, b, c) = rec.trace.phase_totals();
    let n = rec.trace.len().max(1);
    let mut w = fs::File::create(dir.join(TIMINGS_FILE))?;
    writeln!(w, "{TIMINGS_HEADER}")?;
    writeln!(w, "{},{},{a:.6},{b:.6},{c:.6},{:.6},{:.6e}", rec.method, rec.trace.len(), rec.seconds, b / n as f64)?;
    let mut resolved = cfg.clone();
    resolved.method = rec.method;
    resolved.output_dir = dir.to_path_buf();
    resolved.save(&dir.join(RESOLVED_CONFIG_FILE))
}

pub const METRICS_HEADER: &str = "frame,psnr,ssim,nrmse,crop";

/// Whole-volume metrics followed by one row per frame.
pub fn write_metrics<W: Write>(w: &mut W, x: &ComplexVolume, reference: &ComplexVolume, crop: f64) -> Result<MetricsRecord> {
    let all = MetricsRecord::compute(x, reference, crop)?;
    let frames = per_frame(x, reference, crop)?;
    writeln!(w, "{METRICS_HEADER}")?;
    writeln!(w, "all,{:.10e},{:.10e},{:.10e},{crop}", all.psnr_capped(), all.ssim, all.nrmse)?;
    for (t, (p, s, n)) in frames.into_iter().enumerate() {
        writeln!(w, "{t},{:.10e},{s:.10e},{n:.10e},{crop}", cap_psnr(p))?;
    }
    Ok(all)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub metrics: MetricsRecord,
    pub seconds: f64,
    pub stop: StopReason,
}

pub const SWEEP_HEADER: &str = "method,lambda,psnr,ssim,nrmse,seconds,status";

/// Reconstructs the simulated data once per `lambda` in the sweep grid.
pub fn sweep(cfg: &RunConfig, method: Method, sim: &Simulation, op: &dyn ForwardOperator) -> Result<Vec<SweepRow>> {
    if method == Method::Adjoint {
        return Err(Error::Config("the adjoint reconstruction has no lambda to sweep".into()));
    }
    cfg.sweep
        .lambdas
        .iter()
        .map(|&lambda| {
            let mut c = cfg.clone();
            match method {
                Method::Tv => c.tv.lambda = lambda,
                Method::Dic => c.dic.lambda = lambda,
                Method::Alone => c.alone.lambda = lambda,
                Method::Adjoint => unreachable!(),
            }
            let rec = reconstruct(&c, method, &sim.kspace, op, None)?;
            Ok(SweepRow {
                lambda,
                metrics: MetricsRecord::compute(&rec.x, &sim.ground_truth, cfg.crop)?,
                seconds: rec.seconds,
                stop: rec.stop,
            })
        })
        .collect()
}

pub fn write_sweep<W: Write>(w: &mut W, method: Method, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        let status = match &r.stop {
            StopReason::Diverged(_) => "diverged",
            _ => "ok",
        };
        writeln!(
            w,
            "{method},{},{:.10e},{:.10e},{:.10e},{:.3},{status}",
            r.lambda,
            r.metrics.psnr_capped(),
            r.metrics.ssim,
            r.metrics.nrmse,
            r.seconds
        )?;
    }
    Ok(())
}
