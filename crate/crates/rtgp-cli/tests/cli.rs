//! End-to-end tests of the `rtgp` binary: pipeline wiring, manifest
//! resolution, determinism, and the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn rtgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtgp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to spawn rtgp")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = rtgp(dir, args);
    assert!(
        out.status.success(),
        "rtgp {args:?} failed with {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    rtgp(dir, args).status.code().expect("process was signalled")
}

/// A small simulated study plus a basis and one fit per engine, built once
/// and shared read-only by the tests below.
struct Fixture {
    _dir: TempDir,
    root: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = TempDir::new().expect("tempdir");
        let root = dir.path().to_path_buf();
        ok(
            &root,
            &[
                "simulate", "--m", "40", "--reps", "2", "--n-train", "25", "--n-test", "12",
                "--l", "10", "--phi", "4.0", "--seed", "7", "--out", "sim",
            ],
        );
        ok(
            &root,
            &[
                "basis", "--vertices", "sim/vertices.rtgp", "--phi", "4.0", "--l", "10",
                "--out", "basis",
            ],
        );
        ok(
            &root,
            &[
                "fit", "--engine", "vi", "--x", "sim/rep-000-x-train.rtgp", "--y",
                "sim/rep-000-y-train.rtgp", "--basis", "basis", "--seed", "3", "--out", "fit-vi",
            ],
        );
        ok(
            &root,
            &[
                "fit", "--engine", "gibbs", "--x", "sim/rep-000-x-train.rtgp", "--y",
                "sim/rep-000-y-train.rtgp", "--basis", "basis", "--iterations", "300",
                "--burn-in", "100", "--seed", "3", "--out", "fit-gibbs",
            ],
        );
        Fixture { root, _dir: dir }
    })
}

fn read(root: &Path, rel: &str) -> Vec<u8> {
    fs::read(root.join(rel)).unwrap_or_else(|e| panic!("reading {rel}: {e}"))
}

fn csv_lines(root: &Path, rel: &str) -> Vec<String> {
    String::from_utf8(read(root, rel)).expect("utf-8 csv").lines().map(str::to_owned).collect()
}

/// The `parameters` object of the manifest's run record.
fn run_parameters(root: &Path, rel: &str) -> serde_json::Value {
    let text = String::from_utf8(read(root, rel)).expect("utf-8 manifest");
    let first: serde_json::Value =
        serde_json::from_str(text.lines().next().expect("empty manifest")).expect("manifest json");
    assert_eq!(first["record"], "run");
    assert_eq!(first["schema"], "rtgp-run/1");
    first["parameters"].clone()
}

#[test]
fn simulate_writes_the_full_replicate_set() {
    let f = fixture();
    for rel in [
        "sim/vertices.rtgp",
        "sim/truth-beta.rtgp",
        "sim/truth-mask.rtgp",
        "sim/truth.json",
        "sim/rep-000-x-train.rtgp",
        "sim/rep-001-y-test.rtgp",
        "sim/manifest.jsonl",
    ] {
        assert!(f.root.join(rel).is_file(), "missing {rel}");
    }
    let truth: serde_json::Value =
        serde_json::from_slice(&read(&f.root, "sim/truth.json")).expect("truth json");
    // 10% of 40 vertices, rounded up.
    assert_eq!(truth["active_count"], 4);
    assert_eq!(truth["beta0_true"], 2.0);
}

#[test]
fn manifest_records_every_artifact_hash() {
    let f = fixture();
    let text = String::from_utf8(read(&f.root, "fit-vi/manifest.jsonl")).expect("utf-8");
    let mut inputs = 0;
    let mut outputs = 0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).expect("manifest line");
        if v["record"] == "artifact" {
            let hash = v["sha256"].as_str().expect("sha256 field");
            assert_eq!(hash.len(), 64, "not a sha-256 hex digest: {hash}");
            assert!(v["bytes"].as_u64().expect("bytes field") > 0);
            match v["role"].as_str().expect("role") {
                "input" => inputs += 1,
                "output" => outputs += 1,
                other => panic!("unexpected role {other}"),
            }
        }
    }
    // x, y, and the three basis files in; fit.json and trace.csv out.
    assert_eq!(inputs, 5);
    assert_eq!(outputs, 2);
}

#[test]
fn identical_invocations_are_bitwise_identical() {
    let f = fixture();
    for out in ["rerun-a", "rerun-b"] {
        ok(
            &f.root,
            &[
                "simulate", "--m", "40", "--reps", "2", "--n-train", "25", "--n-test", "12",
                "--l", "10", "--phi", "4.0", "--seed", "7", "--out", out,
            ],
        );
    }
    for rel in ["truth-beta.rtgp", "rep-000-x-train.rtgp", "rep-001-y-test.rtgp"] {
        assert_eq!(
            read(&f.root, &format!("rerun-a/{rel}")),
            read(&f.root, &format!("rerun-b/{rel}")),
            "{rel} differs between identical runs"
        );
        // And the fixture run with the same seed produced the same bytes.
        assert_eq!(read(&f.root, &format!("rerun-a/{rel}")), read(&f.root, &format!("sim/{rel}")));
    }

    for (engine, out) in [("vi", "refit-vi"), ("gibbs", "refit-gibbs")] {
        ok(
            &f.root,
            &[
                "fit", "--engine", engine, "--x", "sim/rep-000-x-train.rtgp", "--y",
                "sim/rep-000-y-train.rtgp", "--basis", "basis", "--iterations", "300",
                "--burn-in", "100", "--seed", "3", "--out", out,
            ],
        );
        let original = format!("fit-{engine}");
        assert_eq!(
            read(&f.root, &format!("{out}/fit.json")),
            read(&f.root, &format!("{original}/fit.json")),
            "{engine} fit is not reproducible"
        );
        assert_eq!(
            read(&f.root, &format!("{out}/trace.csv")),
            read(&f.root, &format!("{original}/trace.csv")),
            "{engine} trace is not reproducible"
        );
    }
}

#[test]
fn changing_the_seed_changes_the_study() {
    let f = fixture();
    ok(
        &f.root,
        &[
            "simulate", "--m", "40", "--reps", "2", "--n-train", "25", "--n-test", "12",
            "--l", "10", "--phi", "4.0", "--seed", "8", "--out", "sim-seed8",
        ],
    );
    assert_ne!(read(&f.root, "sim-seed8/truth-beta.rtgp"), read(&f.root, "sim/truth-beta.rtgp"));
}

#[test]
fn flags_override_config_entries_which_override_defaults() {
    let f = fixture();
    fs::write(f.root.join("basis.conf"), "# generator kernel\nphi = 2.5\nl = 6\n").expect("conf");

    ok(
        &f.root,
        &["basis", "--config", "basis.conf", "--vertices", "sim/vertices.rtgp", "--out", "conf-a"],
    );
    let p = run_parameters(&f.root, "conf-a/manifest.jsonl");
    assert_eq!(p["phi"], 2.5);
    assert_eq!(p["l"], 6);

    ok(
        &f.root,
        &[
            "basis", "--config", "basis.conf", "--phi", "3.5", "--vertices", "sim/vertices.rtgp",
            "--out", "conf-b",
        ],
    );
    let p = run_parameters(&f.root, "conf-b/manifest.jsonl");
    assert_eq!(p["phi"], 3.5, "a flag must win over the config file");
    assert_eq!(p["l"], 6);

    ok(&f.root, &["basis", "--vertices", "sim/vertices.rtgp", "--out", "conf-c"]);
    let p = run_parameters(&f.root, "conf-c/manifest.jsonl");
    assert_eq!(p["phi"], 1.0, "built-in default must be recorded");
    assert_eq!(p["kappa"], 0.99, "the defaulted selector must be recorded");
}

#[test]
fn predictions_cover_every_test_row() {
    let f = fixture();
    ok(
        &f.root,
        &["predict", "--fit", "fit-vi/fit.json", "--x", "sim/rep-000-x-test.rtgp", "--out", "pred"],
    );
    let lines = csv_lines(&f.root, "pred/predictions.csv");
    assert_eq!(lines[0], "row,prediction");
    assert_eq!(lines.len(), 1 + 12);
    for (i, line) in lines[1..].iter().enumerate() {
        let (row, value) = line.split_once(',').expect("two columns");
        assert_eq!(row.parse::<usize>().expect("row index"), i);
        assert!(value.parse::<f64>().expect("prediction").is_finite());
    }
}

#[test]
fn exported_map_is_consistent_with_the_threshold() {
    let f = fixture();
    ok(&f.root, &["export-map", "--fit", "fit-gibbs/fit.json", "--out", "map"]);
    let lines = csv_lines(&f.root, "map/map.csv");
    assert_eq!(lines[0], "vertex,beta_tilde,inclusion_prob,beta_thresholded,selected");
    assert_eq!(lines.len(), 1 + 40);
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        let prob: f64 = cells[2].parse().expect("inclusion probability");
        let thresholded: f64 = cells[3].parse().expect("thresholded effect");
        let selected: u8 = cells[4].parse().expect("selected flag");
        assert!((0.0..=1.0).contains(&prob));
        assert_eq!(selected == 1, prob >= 0.5);
        if selected == 0 {
            assert_eq!(thresholded, 0.0, "deselected vertices must export a zero effect");
        }
    }
}

#[test]
fn evaluate_aggregates_by_engine_with_a_shared_ridge_baseline() {
    let f = fixture();
    ok(
        &f.root,
        &[
            "evaluate", "--fit", "fit-vi/fit.json", "--fit", "fit-gibbs/fit.json",
            "--x-test", "sim/rep-000-x-test.rtgp", "--y-test", "sim/rep-000-y-test.rtgp",
            "--x-train", "sim/rep-000-x-train.rtgp", "--y-train", "sim/rep-000-y-train.rtgp",
            "--truth-beta", "sim/truth-beta.rtgp", "--truth-mask", "sim/truth-mask.rtgp",
            "--seed", "11", "--out", "eval",
        ],
    );
    let lines = csv_lines(&f.root, "eval/metrics.csv");
    assert!(lines[0].starts_with("method,replicates,beta_bias_mean_x100,beta_bias_se_x100"));
    assert!(lines[0].contains("tpr_mean_x100"));
    assert_eq!(lines.len(), 4);
    // Both fits reuse one dataset, so the baseline is fitted exactly once.
    assert!(lines[1].starts_with("vi,1,"));
    assert!(lines[2].starts_with("gibbs,1,"));
    assert!(lines[3].starts_with("ridge,1,"));
    // Selection metrics are undefined for ridge and must export as NA.
    assert!(lines[3].ends_with("NA,NA,NA,NA,NA,NA,NA,NA"));
}

#[test]
fn evaluate_accepts_one_dataset_per_fit() {
    let f = fixture();
    ok(
        &f.root,
        &[
            "fit", "--engine", "vi", "--x", "sim/rep-001-x-train.rtgp", "--y",
            "sim/rep-001-y-train.rtgp", "--basis", "basis", "--seed", "3", "--out", "fit-vi-rep1",
        ],
    );
    ok(
        &f.root,
        &[
            "evaluate", "--fit", "fit-vi/fit.json", "--fit", "fit-vi-rep1/fit.json",
            "--x-test", "sim/rep-000-x-test.rtgp", "--x-test", "sim/rep-001-x-test.rtgp",
            "--y-test", "sim/rep-000-y-test.rtgp", "--y-test", "sim/rep-001-y-test.rtgp",
            "--x-train", "sim/rep-000-x-train.rtgp", "--x-train", "sim/rep-001-x-train.rtgp",
            "--y-train", "sim/rep-000-y-train.rtgp", "--y-train", "sim/rep-001-y-train.rtgp",
            "--truth-beta", "sim/truth-beta.rtgp", "--truth-mask", "sim/truth-mask.rtgp",
            "--seed", "11", "--out", "eval-reps",
        ],
    );
    let lines = csv_lines(&f.root, "eval-reps/metrics.csv");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("vi,2,"), "two replicates should aggregate: {}", lines[1]);
    assert!(lines[2].starts_with("ridge,2,"), "distinct datasets need separate baselines");
}

#[test]
fn usage_errors_exit_with_one() {
    let f = fixture();
    assert_eq!(code(&f.root, &["fit", "--bogus-flag"]), 1);
    assert_eq!(code(&f.root, &["basis", "--out", "u1"]), 1, "missing --vertices");
    assert_eq!(
        code(
            &f.root,
            &["basis", "--vertices", "sim/vertices.rtgp", "--l", "4", "--kappa", "0.9", "--out", "u2"],
        ),
        1,
        "--l and --kappa are mutually exclusive"
    );
    assert_eq!(
        code(
            &f.root,
            &[
                "evaluate", "--fit", "fit-vi/fit.json", "--fit", "fit-gibbs/fit.json",
                "--x-test", "a.rtgp", "--x-test", "b.rtgp", "--x-test", "c.rtgp",
                "--y-test", "sim/rep-000-y-test.rtgp", "--truth-beta", "sim/truth-beta.rtgp",
                "--truth-mask", "sim/truth-mask.rtgp", "--out", "u3",
            ],
        ),
        1,
        "three test files cannot broadcast over two fits"
    );

    fs::write(f.root.join("unknown.conf"), "phii = 2.5\n").expect("conf");
    assert_eq!(
        code(
            &f.root,
            &["basis", "--config", "unknown.conf", "--vertices", "sim/vertices.rtgp", "--out", "u4"],
        ),
        1,
        "unknown config keys are rejected"
    );
}

#[test]
fn data_format_errors_exit_with_two() {
    let f = fixture();
    assert_eq!(
        code(&f.root, &["predict", "--fit", "no-such.json", "--x", "sim/rep-000-x-test.rtgp", "--out", "d1"]),
        2,
        "missing input file"
    );

    fs::write(f.root.join("bad-magic.rtgp"), b"NOTRTGP1\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0\0").expect("bad magic");
    assert_eq!(
        code(&f.root, &["predict", "--fit", "fit-vi/fit.json", "--x", "bad-magic.rtgp", "--out", "d2"]),
        2,
        "corrupt matrix header"
    );

    let full = read(&f.root, "sim/rep-000-x-test.rtgp");
    fs::write(f.root.join("truncated.rtgp"), &full[..full.len() - 9]).expect("truncated");
    assert_eq!(
        code(&f.root, &["predict", "--fit", "fit-vi/fit.json", "--x", "truncated.rtgp", "--out", "d3"]),
        2,
        "truncated matrix payload"
    );

    let fit = String::from_utf8(read(&f.root, "fit-vi/fit.json")).expect("utf-8 fit");
    fs::write(f.root.join("future.json"), fit.replace("rtgp-fit/1", "rtgp-fit/999")).expect("fit");
    assert_eq!(
        code(&f.root, &["predict", "--fit", "future.json", "--x", "sim/rep-000-x-test.rtgp", "--out", "d4"]),
        2,
        "unsupported container version"
    );
}

#[test]
fn numerical_failures_exit_with_three() {
    let f = fixture();
    // 25 training rows against 40 vertices forces the dual ridge solve, which
    // is singular at a zero penalty.
    assert_eq!(
        code(
            &f.root,
            &[
                "evaluate", "--fit", "fit-vi/fit.json",
                "--x-test", "sim/rep-000-x-test.rtgp", "--y-test", "sim/rep-000-y-test.rtgp",
                "--x-train", "sim/rep-000-x-train.rtgp", "--y-train", "sim/rep-000-y-train.rtgp",
                "--truth-beta", "sim/truth-beta.rtgp", "--truth-mask", "sim/truth-mask.rtgp",
                "--ridge-penalties", "0", "--out", "n1",
            ],
        ),
        3
    );
}

#[test]
fn help_and_version_exit_cleanly() {
    let f = fixture();
    let help = rtgp(&f.root, &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["simulate", "basis", "fit", "predict", "evaluate", "export-map"] {
        assert!(text.contains(sub), "--help does not mention {sub}");
    }
    assert_eq!(rtgp(&f.root, &["--version"]).status.code(), Some(0));
}
