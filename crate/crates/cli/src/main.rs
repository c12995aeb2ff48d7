use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alone_core::export::export_frames;
use alone_core::pipeline::{
    reconstruct, simulate, sweep, write_metrics, write_reconstruction, write_simulation, write_sweep, Method,
    RunConfig, METRICS_FILE, RESOLVED_CONFIG_FILE, SWEEP_FILE,
};
use alone_core::solvers::StopReason;
use alone_core::tensor::{load_kspace, load_volume};
use alone_core::Error;
use anyhow::Context;
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Dynamic MRI reconstruction with an adaptive shallow-CNN patch
/// regularizer, plus TV and dictionary-learning baselines.
#[derive(Parser, Debug)]
#[command(name = "alone", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Reconstruction method: adjoint, tv, dic or alone.
    #[arg(long, global = true)]
    method: Option<Method>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives the sequential, bit-reproducible mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the phantom, trajectory and noisy k-space data.
    Simulate,
    /// Reconstruct a k-space file with the selected method.
    Reconstruct {
        kspace: PathBuf,
        /// Ground truth for per-iteration metrics in the trace.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Compare a reconstruction against a reference volume.
    Evaluate {
        recon: PathBuf,
        reference: PathBuf,
        /// Central fraction per spatial axis; the config value by default.
        #[arg(long)]
        crop: Option<f64>,
    },
    /// Write magnitude frames and an x-t profile as PGM images.
    ExportFrames { volume: PathBuf },
    /// Simulate once and reconstruct for every lambda of the sweep grid.
    Sweep,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Dimension(_) | Error::Geometry(_) | Error::Precondition(_) => EXIT_CONFIG,
                Error::Io(_) | Error::Format(_) => EXIT_IO,
                Error::Divergence(_) => EXIT_NUMERICAL,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    1
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(m) = cli.method {
        cfg.method = m;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    match &cli.command {
        Command::Simulate => {
            let op = cfg.build_operator()?;
            let sim = simulate(&cfg, op.as_ref())?;
            let files = write_simulation(&sim, &cfg, &out)?;
            println!("noise_std {:.6e}, {} k-space samples", sim.noise_std, sim.kspace.len());
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Reconstruct { kspace, reference } => {
            let y = load_kspace(kspace).with_context(|| format!("reading {}", kspace.display()))?;
            let reference = reference
                .as_ref()
                .map(|p| load_volume(p).with_context(|| format!("reading {}", p.display())))
                .transpose()?;
            let op = cfg.build_operator()?;
            let rec = reconstruct(&cfg, cfg.method, &y, op.as_ref(), reference.as_ref())?;
            write_reconstruction(&rec, &cfg, &out)?;
            let (a, b, c) = rec.trace.phase_totals();
            println!(
                "{}: {} iterations in {:.2} s (train {a:.2} s, regularize {b:.2} s, pcg {c:.2} s)",
                rec.method,
                rec.trace.len(),
                rec.seconds
            );
            if let Some(last) = rec.trace.last() {
                if let Some(n) = last.nrmse {
                    println!("final nrmse {n:.6}");
                }
            }
            if let StopReason::Diverged(msg) = rec.stop {
                return Err(Error::Divergence(msg)).context("solver diverged; partial trace written");
            }
        }
        Command::Evaluate { recon, reference, crop } => {
            let x = load_volume(recon).with_context(|| format!("reading {}", recon.display()))?;
            let r = load_volume(reference).with_context(|| format!("reading {}", reference.display()))?;
            fs::create_dir_all(&out)?;
            let mut w = create_file(&out.join(METRICS_FILE))?;
            let m = write_metrics(&mut w, &x, &r, crop.unwrap_or(cfg.crop))?;
            w.flush()?;
            println!("psnr {:.4} dB, ssim {:.6}, nrmse {:.6}", m.psnr_capped(), m.ssim, m.nrmse);
        }
        Command::ExportFrames { volume } => {
            let v = load_volume(volume).with_context(|| format!("reading {}", volume.display()))?;
            let rep = export_frames(&v, &out)?;
            println!("wrote {} images, magnitude range [{:e}, {:e}]", rep.files.len(), rep.min, rep.max);
        }
        Command::Sweep => {
            let op = cfg.build_operator()?;
            let sim = simulate(&cfg, op.as_ref())?;
            let rows = sweep(&cfg, cfg.method, &sim, op.as_ref())?;
            fs::create_dir_all(&out)?;
            let mut w = create_file(&out.join(SWEEP_FILE))?;
            write_sweep(&mut w, cfg.method, &rows)?;
            w.flush()?;
            cfg.save(&out.join(RESOLVED_CONFIG_FILE))?;
            for r in &rows {
                println!("lambda {:e}: psnr {:.3} dB, nrmse {:.5}", r.lambda, r.metrics.psnr_capped(), r.metrics.nrmse);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        #[cfg(not(feature = "parallel"))]
        let _ = n;
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
