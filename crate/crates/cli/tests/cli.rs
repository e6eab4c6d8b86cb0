use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dipgd"))
}

fn test_image() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/test16.pgm")
}

/// Writes `config` into a fresh directory and runs `sub` with outputs in `<dir>/out`.
fn run(sub: &str, config: &str) -> (TempDir, Output) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, config).unwrap();
    let out = bin()
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    (dir, out)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_minimal_config() {
    let (dir, o) = run("train", "n = 5\nm = 3\nk = 512\n");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory.csv", "certificate.txt", "bounds.csv", "config.txt"] {
        assert!(dir.path().join("out").join(f).exists(), "{f} missing");
    }
    assert!(stdout(&o).contains("status = converged"));
}

#[test]
fn huge_step_exits_with_divergence() {
    let (_dir, o) = run("train", "n = 5\nm = 3\nk = 512\ngamma = 1e6\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("status = diverged"));
}

#[test]
fn config_errors_exit_one() {
    let (_dir, o) = run("train", "m = 3\nk = 512\n");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("'n'"));
    let (_dir, o) = run("certify", "n = 5\nm = 3\nk = 512\nwidth = 4\n");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("width"));
    let (_dir, o) = run("train", "n = 5\nm = 3\nk = 512\nloss = lojasiewicz\nloss_alpha = 0.4\n");
    assert_eq!(o.status.code(), Some(1));
    let o = bin().arg("train").arg("--config").arg("/nonexistent/run.cfg").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn certify_verdicts_and_determinism() {
    let (_d, narrow) = run("certify", "n = 5\nm = 3\nk = 8\n");
    assert_eq!(narrow.status.code(), Some(3));
    assert!(stdout(&narrow).contains("holds = false"));
    let (_d, a) = run("certify", "n = 5\nm = 3\nk = 16384\nseed = 4\n");
    let (_d, b) = run("certify", "n = 5\nm = 3\nk = 16384\nseed = 4\n");
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn grid_bndr_shape_and_thread_independence() {
    let cfg = "m_list = 1,3\nk_list = 64,4096\ntrials = 2\n";
    let (d1, o) = run("grid-bndr", cfg);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(d1.path().join("out/grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let (d2, _) = run("grid-bndr", &format!("{cfg}threads = 1\n"));
    assert_eq!(fs::read_to_string(d2.path().join("out/grid.csv")).unwrap(), csv);
}

#[test]
fn grid_gamma_writes_thresholds() {
    let cfg = "n_list = 3,6\ngamma_list = 0.05,5\nk = 128\ntrials = 2\nsteps = 30\n";
    let (d, o) = run("grid-gamma", cfg);
    assert_eq!(o.status.code(), Some(0));
    let out = d.path().join("out");
    assert_eq!(fs::read_to_string(out.join("grid.csv")).unwrap().lines().count(), 5);
    assert_eq!(fs::read_to_string(out.join("thresholds.csv")).unwrap().lines().count(), 3);
    assert!(out.join("failures.csv").exists());
    assert!(stdout(&o).contains("spearman = "));
}

#[test]
fn deblur_manifest_lists_snapshots() {
    let cfg = format!("image = {}\nk = 256\nd = 8\nsteps = 20\nnoise_std = 2.5\n", test_image().display());
    let (d, o) = run("deblur", &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(d.path().join("out/manifest.txt")).unwrap();
    let snaps = manifest.lines().filter(|l| l.starts_with("step_") && l.ends_with(".pgm")).count();
    assert!(snaps >= 4, "{snaps} snapshots");
    for name in manifest.lines() {
        assert!(d.path().join("out").join(name).exists());
    }
    let (_d, o) = run("deblur", "image = /nonexistent.pgm\nsteps = 2\n");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bounds_align_with_trajectory() {
    let (d, o) = run("train", "n = 5\nm = 3\nk = 16384\nseed = 2\n");
    assert_eq!(o.status.code(), Some(0));
    let out = d.path().join("out");
    let cfg = format!(
        "trajectory = {}\ncertificate = {}\n",
        out.join("trajectory.csv").display(),
        out.join("certificate.txt").display()
    );
    let (d2, o) = run("bounds", &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let bounds = fs::read_to_string(d2.path().join("out/bounds.csv")).unwrap();
    assert_eq!(traj.lines().count(), bounds.lines().count());
    // the train command wrote the same envelope
    assert_eq!(bounds, fs::read_to_string(out.join("bounds.csv")).unwrap());
}

#[test]
fn echoed_config_reproduces_outputs() {
    let (d, o) = run("train", "n = 4\nm = 2\nk = 256\nnoise_std = 0.01\nsteps = 100\nrecord_sigma_every = 10\n");
    assert_eq!(o.status.code(), Some(0));
    let first = d.path().join("out");
    let again = d.path().join("again");
    let o = bin()
        .arg("train")
        .arg("--config")
        .arg(first.join("config.txt"))
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    for f in ["trajectory.csv", "certificate.txt", "bounds.csv", "summary.txt"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let (_d, a) = run("certify", "n = 5\nm = 3\nk = 256\nseed = 1\n");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c");
    fs::write(&cfg, "n = 5\nm = 3\nk = 256\nseed = 9\n").unwrap();
    let b = bin().args(["certify", "--seed", "1", "--out"]).arg(dir.path().join("o")).arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(a.stdout, b.stdout);
}
