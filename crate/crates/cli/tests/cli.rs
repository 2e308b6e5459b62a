use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn geovo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geovo")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn small_config(dir: &Path, preset: &str, extra: &str) -> PathBuf {
    write_config(
        dir,
        &format!("{preset}.toml"),
        &format!("seed = 7\n{extra}\n[scenario]\npreset = \"{preset}\"\nwidth = 64\nheight = 48\nn_frames = 4\n"),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_is_deterministic_and_passes_spot_check() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "breathing", "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let r = geovo(&["simulate", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        assert!(stdout(&r).contains("spot check frame 1"));
    }
    let ca = dir_contents(&a);
    assert_eq!(ca, dir_contents(&b));
    assert!(ca.iter().any(|(n, _)| n == "rig.cfg"));
    assert!(ca.iter().any(|(n, _)| n == "gt.traj"));
    assert!(ca.iter().any(|(n, _)| n == "000003.flow.gvr"));
}

#[test]
fn simulate_rejects_single_frame() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "scanning", "");
    let r = geovo(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o")), "--scenario.n_frames", "1"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.toml");
    assert_eq!(code(&geovo(&["gradcheck", "--config", s(&missing)])), 1);
    assert_eq!(code(&geovo(&["frobnicate"])), 1);
    assert_eq!(code(&geovo(&[])), 1);
    let bad = write_config(tmp.path(), "bad.toml", "[solver]\nmax_iter = 3\n");
    assert_eq!(code(&geovo(&["gradcheck", "--config", s(&bad)])), 1);
    let cfg = small_config(tmp.path(), "scanning", "");
    assert_eq!(code(&geovo(&["gradcheck", "--config", s(&cfg), "--solver.nonexistent", "1"])), 1);
    assert_eq!(code(&geovo(&["--help"])), 0);
}

#[test]
fn estimate_and_evaluate_rigid_sequence() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "scanning", "").to_path_buf();
    fs::write(&cfg, fs::read_to_string(&cfg).unwrap() + "rigid = true\n[solver]\ngrad_tol = 1e-12\n").unwrap();
    let seq = tmp.path().join("seq");
    assert_eq!(code(&geovo(&["simulate", "--config", s(&cfg), "--out", s(&seq)])), 0);

    let traj = tmp.path().join("est.traj");
    let r = geovo(&["estimate", "--config", s(&cfg), "--seq", s(&seq), "--out-traj", s(&traj)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report = fs::read_to_string(tmp.path().join("est.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
    assert!(report.lines().skip(1).all(|l| l.ends_with(",false")));

    let metrics = tmp.path().join("m.csv");
    let r = geovo(&["evaluate", "--est", s(&traj), "--gt", s(&seq.join("gt.traj")), "--out", s(&metrics)]);
    assert_eq!(code(&r), 0);
    let text = fs::read_to_string(&metrics).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let ate: f64 = row[2].parse().unwrap();
    assert!(ate < 1e-5, "ATE {ate}");
}

#[test]
fn evaluate_rejects_mismatched_lengths() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(tmp.path(), "a.traj", "0 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n");
    let b = write_config(tmp.path(), "b.traj", "0 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n2 0 0 0 0 0 0 1\n");
    let r = geovo(&["evaluate", "--est", s(&a), "--gt", s(&b), "--out", s(&tmp.path().join("m.csv"))]);
    assert_eq!(code(&r), 2);
}

#[test]
fn corrupt_raster_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "breathing", "");
    let seq = tmp.path().join("seq");
    assert_eq!(code(&geovo(&["simulate", "--config", s(&cfg), "--out", s(&seq)])), 0);
    let f = seq.join("000002.depth.gvr");
    let bytes = fs::read(&f).unwrap();
    fs::write(&f, &bytes[..bytes.len() / 2]).unwrap();
    let r = geovo(&["estimate", "--config", s(&cfg), "--seq", s(&seq), "--out-traj", s(&tmp.path().join("t.traj"))]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("000002.depth.gvr"));

    fs::remove_file(&f).unwrap();
    let r = geovo(&["estimate", "--config", s(&cfg), "--seq", s(&seq), "--out-traj", s(&tmp.path().join("t.traj"))]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("000002"));
}

#[test]
fn gradcheck_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "scanning", "");
    let ok = geovo(&["gradcheck", "--config", s(&cfg), "--seed", "0"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let bad = geovo(&["gradcheck", "--config", s(&cfg), "--seed", "0", "--flip-gradient-sign"]);
    assert_eq!(code(&bad), 3);
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn fitweights_writes_rasters_and_loss() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "deforming", "[ddn]\niters = 5\n");
    let seq = tmp.path().join("seq");
    assert_eq!(code(&geovo(&["simulate", "--config", s(&cfg), "--out", s(&seq)])), 0);
    let wdir = tmp.path().join("w");
    let loss = tmp.path().join("loss.csv");
    let r = geovo(&["fitweights", "--config", s(&cfg), "--seq", s(&seq), "--out-weights", s(&wdir), "--loss-csv", s(&loss)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read_to_string(&loss).unwrap().lines().count(), 7);

    let traj = tmp.path().join("est.traj");
    let r = geovo(&[
        "estimate",
        "--config",
        s(&cfg),
        "--seq",
        s(&seq),
        "--weights-2d",
        s(&wdir.join("weights_2d.gvr")),
        "--weights-3d",
        s(&wdir.join("weights_3d.gvr")),
        "--out-traj",
        s(&traj),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read_to_string(&traj).unwrap().lines().count(), 4);
}

#[test]
fn fitweights_requires_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "deforming", "[ddn]\niters = 1\n");
    let seq = tmp.path().join("seq");
    assert_eq!(code(&geovo(&["simulate", "--config", s(&cfg), "--out", s(&seq)])), 0);
    fs::remove_file(seq.join("gt.traj")).unwrap();
    let r = geovo(&[
        "fitweights",
        "--config",
        s(&cfg),
        "--seq",
        s(&seq),
        "--out-weights",
        s(&tmp.path().join("w")),
        "--loss-csv",
        s(&tmp.path().join("l.csv")),
    ]);
    assert_eq!(code(&r), 2);
}
