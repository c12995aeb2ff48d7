use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use alone_core::num_complex::Complex64;
use alone_core::operators::trajectory::nyquist_spokes;
use alone_core::pipeline::RunConfig;
use alone_core::tensor::{load_kspace, load_volume, save_volume};
use alone_core::{ComplexVolume, Dims};

fn alone(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alone")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = alone(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    alone(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small, fast configuration written into `dir`.
fn small_config(dir: &Path, nx: usize) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "[phantom]\ndims = [{nx}, {nx}, 4]\n\n[sampling]\nacceleration = 9.0\ncoils = 2\n\n\
         [alone]\niterations = 1\nfilters = 4\nn_backprops = 5\nbatch_size = 4\n\n\
         [tv]\niterations = 2\n\n[dic]\niterations = 1\ninitial_train_iters = 1\natoms = 32\nsparsity = 4\n\n\
         [sweep]\nlambdas = [0.05, 0.5]\n"
    );
    fs::write(&path, text).unwrap();
    path
}

fn simulate(dir: &Path, cfg: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&["simulate", "--config", s(cfg), "--out", s(&out), "--threads", "1"]);
    out
}

#[test]
fn simulate_writes_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 64);
    let out = simulate(dir.path(), &cfg, "sim");
    for f in ["ground_truth.vol", "kspace.ksp", "trajectory.csv", "config.resolved.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let resolved = RunConfig::load(&out.join("config.resolved.toml")).unwrap();
    let spokes = resolved.spokes_per_frame().unwrap();
    let y = load_kspace(out.join("kspace.ksp")).unwrap();
    assert_eq!(y.len(), spokes * 64 * 4 * 2);
    let ratio = spokes as f64 / nyquist_spokes(64) as f64;
    assert!((ratio * 9.0 - 1.0).abs() < 0.05, "retained/full = {ratio}");
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 32);
    let a = simulate(dir.path(), &cfg, "a");
    let b = simulate(dir.path(), &cfg, "b");
    for f in ["ground_truth.vol", "kspace.ksp", "trajectory.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "7"]);
    assert_ne!(fs::read(a.join("kspace.ksp")).unwrap(), fs::read(c.join("kspace.ksp")).unwrap());
}

#[test]
fn adjoint_and_single_iteration_reconstructions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 32);
    let sim = simulate(dir.path(), &cfg, "sim");
    let ksp = sim.join("kspace.ksp");
    let gt = sim.join("ground_truth.vol");

    let adj = dir.path().join("adjoint");
    ok(&["reconstruct", s(&ksp), "--config", s(&cfg), "--method", "adjoint", "--out", s(&adj)]);
    let trace = fs::read_to_string(adj.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    let resolved = RunConfig::load(&adj.join("config.resolved.toml")).unwrap();
    let op = resolved.build_operator().unwrap();
    let expect = op.adjoint(&load_kspace(&ksp).unwrap()).unwrap();
    let got = load_volume(adj.join("recon.vol")).unwrap();
    // stored as f32
    assert!(got.sub(&expect).unwrap().norm() < 1e-6 * expect.norm());

    let al = dir.path().join("alone");
    ok(&["reconstruct", s(&ksp), "--reference", s(&gt), "--config", s(&cfg), "--method", "alone", "--out", s(&al)]);
    let trace = fs::read_to_string(al.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], alone_core::solvers::TRACE_HEADER);
    assert!(!lines[1].split(',').nth(6).unwrap().is_empty());
    assert!(al.join("timings.csv").exists());

    for m in ["tv", "dic"] {
        let o = dir.path().join(m);
        ok(&["reconstruct", s(&ksp), "--config", s(&cfg), "--method", m, "--out", s(&o)]);
        assert!(o.join("recon.vol").exists());
    }
}

#[test]
fn diverging_solver_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 32);
    let sim = simulate(dir.path(), &cfg, "sim");
    let bad = dir.path().join("bad.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("batch_size = 4", "batch_size = 4\nlearning_rate = 1e300");
    fs::write(&bad, text).unwrap();
    let out = dir.path().join("div");
    assert_eq!(code(&["reconstruct", s(&sim.join("kspace.ksp")), "--config", s(&bad), "--method", "alone", "--out", s(&out)]), 4);
    assert!(out.join("trace.csv").exists());
}

fn write_volume(path: &Path, dims: Dims, f: impl Fn(usize, usize, usize) -> f64) {
    save_volume(path, &ComplexVolume::from_fn(dims, |x, y, t| Complex64::new(f(x, y, t), 0.0))).unwrap();
}

fn metrics_row(out: &Path) -> Vec<f64> {
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("all,"));
    row.split(',').skip(1).map(|v| v.parse().unwrap()).collect()
}

#[test]
fn evaluate_identical_and_hand_built_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.vol");
    let b = dir.path().join("b.vol");
    write_volume(&a, Dims::new(4, 4, 1), |_, _, _| 0.5);
    write_volume(&b, Dims::new(4, 4, 1), |_, _, _| 0.6);
    let out = dir.path().join("same");
    ok(&["evaluate", s(&a), s(&a), "--out", s(&out)]);
    let m = metrics_row(&out);
    assert_eq!((m[0], m[1], m[2]), (999.0, 1.0, 0.0));
    let out = dir.path().join("hand");
    ok(&["evaluate", s(&b), s(&a), "--crop", "1.0", "--out", s(&out)]);
    let m = metrics_row(&out);
    assert!((m[0] - 20.0 * 5f64.log10()).abs() < 1e-5, "{}", m[0]);
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn error_paths_use_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.vol");
    let c = dir.path().join("c.vol");
    write_volume(&a, Dims::new(4, 4, 1), |x, _, _| x as f64);
    write_volume(&c, Dims::new(4, 4, 2), |x, _, _| x as f64);
    let out = s(dir.path());
    assert_eq!(code(&["evaluate", s(&a), "missing.vol", "--out", out]), 3);
    assert_eq!(code(&["evaluate", s(&a), s(&c), "--out", out]), 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(code(&["simulate", "--config", s(&bad), "--out", out]), 2);
    fs::write(&bad, "[tv]\nrho = -1.0\n").unwrap();
    assert_eq!(code(&["simulate", "--config", s(&bad), "--out", out]), 2);
    assert_eq!(code(&["simulate", "--config", "no_such.toml", "--out", out]), 3);
    assert_eq!(code(&["export-frames", "no_such.vol", "--out", out]), 3);
}

#[test]
fn export_frames_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("v.vol");
    write_volume(&v, Dims::new(8, 6, 16), |x, y, t| (x + y + t) as f64);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["export-frames", s(&v), "--out", s(&a)]);
    ok(&["export-frames", s(&v), "--out", s(&b)]);
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 17);
    assert!(names.contains(&"profile_xt.pgm".to_string()));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap());
    }

    let flat = dir.path().join("flat.vol");
    write_volume(&flat, Dims::new(4, 4, 2), |_, _, _| 0.7);
    let f = dir.path().join("f");
    ok(&["export-frames", s(&flat), "--out", s(&f)]);
    let frame = fs::read(f.join("frame_000.pgm")).unwrap();
    let pixels = &frame[frame.len() - 16..];
    assert!(pixels.iter().all(|&p| p == pixels[0]));
    assert!(fs::read_to_string(f.join("scale.txt")).unwrap().contains("max_magnitude"));
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 32);
    let out = dir.path().join("sweep");
    ok(&["sweep", "--config", s(&cfg), "--method", "tv", "--out", s(&out)]);
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("tv,0.05,"));
    assert_eq!(code(&["sweep", "--config", s(&cfg), "--method", "adjoint", "--out", s(&out)]), 2);
}

#[test]
fn unknown_method_is_a_usage_error() {
    assert_eq!(code(&["simulate", "--method", "nufft"]), 2);
}
