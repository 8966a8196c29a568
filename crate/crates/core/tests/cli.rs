use std::path::Path;
use std::process::{Command, Output};

use cspn::io::{read_pfm, read_samples_csv};

fn cspn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cspn"))
        .args(args)
        .current_dir(dir)
        .env_remove("CSPN_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = cspn(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn scene(dir: &Path, seed: u64) {
    ok(
        &["make-scene", "--height", "40", "--width", "56", "--samples", "90", "--seed", &seed.to_string(), "--out-dir", "."],
        dir,
    );
}

#[test]
fn complete_preserves_samples() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 2);
    ok(
        &[
            "complete", "--depth", "init.pfm", "--guide", "guide.pgm", "--samples", "samples.csv", "--k", "3",
            "--iters", "24", "--mode", "abs-anchor", "--out", "out.pfm",
        ],
        dir.path(),
    );
    let out = read_pfm(dir.path().join("out.pfm")).unwrap();
    let samples = read_samples_csv(dir.path().join("samples.csv"), (40, 56)).unwrap();
    for s in samples.entries() {
        assert_eq!(out.get(s.row, s.col, 0).to_bits(), s.value.to_bits());
    }
}

#[test]
fn propagate_zero_iterations_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 3);
    ok(&["propagate", "--input", "gt.pfm", "--guide", "guide.pgm", "--iters", "0", "--out", "o.pfm"], dir.path());
    let a = std::fs::read(dir.path().join("gt.pfm")).unwrap();
    let b = std::fs::read(dir.path().join("o.pfm")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn metrics_of_identical_maps() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 4);
    let out = ok(&["metrics", "--pred", "gt.pfm", "--gt", "gt.pfm"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("name,value\n"));
    for line in text.lines().skip(1) {
        let (name, value) = line.split_once(',').unwrap();
        let v: f64 = value.parse().unwrap();
        if name.starts_with("delta") {
            assert_eq!(v, 100.0, "{name}");
        } else {
            assert_eq!(v, 0.0, "{name}");
        }
    }
    let out = ok(&["metrics", "--pred", "gt.pfm", "--gt", "gt.pfm", "--kind", "stereo"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0")), "{text}");
}

#[test]
fn outputs_are_reproducible_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 5);
    let args = |out: &'static str, workers: &'static str| {
        vec![
            "complete", "--depth", "init.pfm", "--guide", "guide.pgm", "--samples", "samples.csv", "--mode",
            "positive-no-center", "--workers", workers, "--out", out,
        ]
    };
    ok(&args("a.pfm", "1"), dir.path());
    ok(&args("b.pfm", "1"), dir.path());
    ok(&args("c.pfm", "3"), dir.path());
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.pfm"), read("b.pfm"));
    assert_eq!(read("a.pfm"), read("c.pfm"));
}

#[test]
fn worker_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cspn"))
        .args(["bench", "--sizes", "16x12", "--operators", "cspn_step", "--repeats", "3", "--out", "b.csv"])
        .env("CSPN_WORKERS", "3")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[5], "3");
}

#[test]
fn bench_csv_has_one_row_per_configuration() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "bench", "--sizes", "16x12,24x20", "--kernels", "3,5", "--worker-counts", "1,2", "--repeats", "3",
            "--out", "b.csv",
        ],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), cspn::bench::CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2 * 2);
}

#[test]
fn regress_and_gradcheck_and_pool_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let vol = cspn::CostVolume::from_fn(4, 3, 5, |d, i, j| if d == (i + j) % 5 { 0.0 } else { 50.0 }).unwrap();
    cspn::io::write_volume_pfm(&vol.to_volume(), dir.path().join("cost.pfm")).unwrap();
    ok(&["regress", "--cost", "cost.pfm", "--max-disparity", "4", "--out", "d.pfm"], dir.path());
    let d = read_pfm(dir.path().join("d.pfm")).unwrap();
    assert!((d.get(1, 2, 0) - 3.0).abs() < 1e-3);

    let out = ok(&["gradcheck", "--mode", "positive-no-center"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("max_rel_err_raw"));

    scene(dir.path(), 6);
    for mode in ["spp", "cspp", "aspp", "acspp"] {
        let mut args = vec!["pool", "--input", "gt.pfm", "--mode", mode, "--targets", "8x8,4x4", "--rates", "1,2", "--out", "p.pfm"];
        if mode == "cspp" {
            args.extend(["--weight-map", "gt.pfm"]);
        }
        if mode == "acspp" {
            ok(&["train-toy", "--height", "40", "--width", "56", "--steps", "1", "--out", "h.csv", "--affinity-out", "a.pfm"], dir.path());
            args.extend(["--affinity", "a.pfm"]);
        }
        ok(&args, dir.path());
        assert_eq!(read_pfm(dir.path().join("p.pfm")).unwrap().shape(), (40, 56, 1));
    }
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path(), 7);
    let cases: [&[&str]; 4] = [
        &["propagate", "--input", "gt.pfm", "--guide", "guide.pgm", "--bogus", "--out", "x.pfm"],
        &["metrics", "--pred", "missing.pfm", "--gt", "gt.pfm"],
        &["bench", "--sizes", "12by9", "--out", "b.csv"],
        &["complete", "--depth", "gt.pfm", "--guide", "guide.pgm", "--samples", "samples.csv", "--mode", "nope", "--out", "x.pfm"],
    ];
    for args in cases {
        let out = cspn(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
    let mut small = cspn::FeatureGrid::zeros(5, 5, 1);
    small.set(0, 0, 0, 1.0);
    cspn::io::write_pfm(&small, dir.path().join("small.pfm")).unwrap();
    let out = cspn(&["metrics", "--pred", "small.pfm", "--gt", "gt.pfm"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_toy_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train-toy", "--height", "32", "--width", "32", "--samples", "60", "--steps", "5", "--out", "h.csv"], dir.path());
    let csv = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,loss");
    assert_eq!(csv.lines().count(), 7);
}
