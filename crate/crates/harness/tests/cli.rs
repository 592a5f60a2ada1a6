use std::path::Path;
use std::process::{Command, Output};

use neutra_harness::bench::BenchReport;
use neutra_harness::corner::{corner, histogram_1d, CornerInput};
use neutra_harness::output::{Manifest, SampleTable};
use neutra_harness::pipeline::OracleSummary;
use serde_json::Value;

const SMALL_NS: &[&str] = &["--model", "gaussian_fit", "--method", "ns", "--n-live", "100"];

fn neutra(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neutra"))
        .args(args)
        .env("NEUTRA_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str], root: &Path) -> String {
    let out = neutra(args, root);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn with_dir<'a>(args: &[&'a str], dir: &'a str) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(["--output-dir", dir]);
    v
}

#[test]
fn step_size_with_target_accept_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = neutra(
        &["run", "--model", "gaussian_fit", "--method", "nuts", "--step-size", "0.1", "--target-accept", "0.8"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn conflicting_settings_in_a_config_file_are_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": "gaussian_fit", "method": "nuts", "step_size": 0.1, "target_accept": 0.8}"#).unwrap();
    let out = neutra(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": "gaussian_fit", "n_liv": 10}"#).unwrap();
    let out = neutra(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_artifacts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("a");
    let mut args = vec!["run"];
    args.extend(SMALL_NS);
    run_ok(&with_dir(&args, dir.to_str().unwrap()), tmp.path());
    for f in ["samples.csv", "metrics.json", "evidence.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let m: Manifest = serde_json::from_value(json(&dir.join("manifest.json"))).unwrap();
    assert_eq!(m.status, "ok");
    assert!(m.error.is_none());
    assert!(m.finished_unix_s >= m.started_unix_s);
    assert!(m.files.iter().any(|f| f == "samples.csv"));
    let ev = json(&dir.join("evidence.json"));
    assert!(ev["log_z"].as_f64().unwrap().is_finite());
    assert!(ev["log_z_err"].as_f64().unwrap() > 0.0);
    assert!(json(&dir.join("metrics.json"))["ess"].as_f64().unwrap() > 0.0);
}

#[test]
fn same_seed_gives_identical_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["run"];
    args.extend(SMALL_NS);
    args.extend(["--seed", "9"]);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(&with_dir(&args, a.to_str().unwrap()), tmp.path());
    run_ok(&with_dir(&args, b.to_str().unwrap()), tmp.path());
    let sa = std::fs::read(a.join("samples.csv")).unwrap();
    let sb = std::fs::read(b.join("samples.csv")).unwrap();
    assert_eq!(sa, sb);
}

#[test]
fn nuts_runs_are_reproducible_and_report_divergences() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "run", "--model", "gaussian_fit", "--method", "nuts", "--chains", "2", "--warmup", "100", "--samples", "100",
    ];
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(&with_dir(&args, a.to_str().unwrap()), tmp.path());
    run_ok(&with_dir(&args, b.to_str().unwrap()), tmp.path());
    assert_eq!(std::fs::read(a.join("samples.csv")).unwrap(), std::fs::read(b.join("samples.csv")).unwrap());
    let m = json(&a.join("metrics.json"));
    assert!(m["n_divergences"].is_u64());
    assert!(!a.join("evidence.json").exists());
    assert_eq!(SampleTable::read_csv(&a.join("samples.csv")).unwrap().rows.len(), 200);
}

#[test]
fn manifest_reruns_reproduce_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let mut args = vec!["run"];
    args.extend(SMALL_NS);
    args.extend(["--seed", "3"]);
    run_ok(&with_dir(&args, a.to_str().unwrap()), tmp.path());
    let manifest = a.join("manifest.json");
    run_ok(
        &["run", "--config", manifest.to_str().unwrap(), "--output-dir", b.to_str().unwrap()],
        tmp.path(),
    );
    let (ea, eb) = (json(&a.join("evidence.json")), json(&b.join("evidence.json")));
    assert_eq!(ea["log_z"], eb["log_z"]);
    assert_eq!(ea["log_z_err"], eb["log_z_err"]);
    assert_eq!(json(&a.join("metrics.json"))["ess"], json(&b.join("metrics.json"))["ess"]);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": "gaussian_fit", "method": "ns", "n_live": 60, "seed": 4}"#).unwrap();
    let dir = tmp.path().join("a");
    run_ok(
        &["run", "--config", cfg.to_str().unwrap(), "--n-live", "80", "--output-dir", dir.to_str().unwrap()],
        tmp.path(),
    );
    let m: Manifest = serde_json::from_value(json(&dir.join("manifest.json"))).unwrap();
    assert_eq!(m.config.n_live, 80);
    assert_eq!(m.config.seed, 4);
    assert_eq!(json(&dir.join("evidence.json"))["n_live"], 80);
}

#[test]
fn csv_values_parse_losslessly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("a");
    let mut args = vec!["run"];
    args.extend(SMALL_NS);
    run_ok(&with_dir(&args, dir.to_str().unwrap()), tmp.path());
    let path = dir.join("samples.csv");
    let t = SampleTable::read_csv(&path).unwrap();
    assert_eq!(t.names.len(), 6);
    let w = t.weights.as_ref().expect("nested sampling rows are weighted");
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let again = tmp.path().join("again.csv");
    t.write_csv(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn coarse_ground_truth_is_flagged_non_converged() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("gt");
    run_ok(
        &[
            "ground-truth", "--model", "gaussian_fit", "--points-per-dim", "2", "--contour-points", "21", "--output-dir",
            dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    let s: OracleSummary = serde_json::from_value(json(&dir.join("oracle.json"))).unwrap();
    assert!(!s.converged);
    assert!(s.knee.is_none());
    assert_eq!(s.points_per_dim, 2);
    assert_eq!(s.contour_checks.len(), 2);
    for c in &s.contour_checks {
        assert!(c.enclosed.is_finite());
    }
    assert!(!s.contour_diagnostics.is_empty(), "a 21-point contour grid cannot meet the mass tolerance");
    for f in ["evidence.json", "trace.csv", "contour.csv", "contour_levels.csv", "intervals.csv", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn single_rep_bench_reports_no_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bench");
    let out = run_ok(
        &[
            "bench", "--model", "gaussian_fit", "--methods", "ns", "--reps", "1", "--n-live", "60", "--output-dir",
            dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.starts_with("method"));
    let report: BenchReport = serde_json::from_value(json(&dir.join("bench.json"))).unwrap();
    let row = &report.rows[0];
    assert_eq!(row.reps, 1);
    assert!(row.ess.mean.is_some());
    assert!(row.ess.std.is_none());
    assert!(row.log_z.std.is_none());
    assert!(dir.join("table.csv").is_file());
    assert!(dir.join("runs.csv").is_file());
}

#[test]
fn corner_pairs_appear_only_for_several_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let mut args = vec!["run"];
    args.extend(SMALL_NS);
    run_ok(&with_dir(&args, a.to_str().unwrap()), tmp.path());
    let mut args2 = args.clone();
    args2.extend(["--seed", "2"]);
    run_ok(&with_dir(&args2, b.to_str().unwrap()), tmp.path());

    let one = tmp.path().join("one");
    run_ok(&["corner", a.to_str().unwrap(), "--output-dir", one.to_str().unwrap()], tmp.path());
    assert!(one.join("marginals.csv").is_file());
    assert!(one.join("intervals.csv").is_file());
    assert!(!one.join("pairs.csv").exists());

    let two = tmp.path().join("two");
    run_ok(
        &["corner", a.to_str().unwrap(), b.to_str().unwrap(), "--output-dir", two.to_str().unwrap()],
        tmp.path(),
    );
    assert!(two.join("pairs.csv").is_file());
    assert!(two.join("pair_levels.csv").is_file());
    let marginals = std::fs::read_to_string(two.join("marginals.csv")).unwrap();
    assert!(marginals.contains("ns_0,") && marginals.contains("ns_1,"));
}

#[test]
fn corner_rejects_mismatched_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    std::fs::write(&a, "x,y\n1,2\n3,4\n").unwrap();
    std::fs::write(&b, "x,z\n1,2\n3,4\n").unwrap();
    let out = neutra(&["corner", a.to_str().unwrap(), b.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn weighted_histogram_matches_duplicated_draws() {
    let xs = [0.1, 0.4, 0.45, 0.9, 1.3];
    let counts = [3usize, 1, 2, 5, 1];
    let total: usize = counts.iter().sum();
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let dup: Vec<f64> = xs.iter().zip(&counts).flat_map(|(&x, &c)| std::iter::repeat(x).take(c)).collect();
    let uniform = vec![1.0 / dup.len() as f64; dup.len()];
    let hw = histogram_1d(&xs, &weights, 0.0, 1.5, 5);
    let hd = histogram_1d(&dup, &uniform, 0.0, 1.5, 5);
    for (a, b) in hw.iter().zip(&hd) {
        assert!((a - b).abs() < 1e-12);
    }

    let weighted = CornerInput {
        label: "w".into(),
        table: SampleTable {
            names: vec!["x".into(), "y".into()],
            rows: xs.iter().map(|&x| vec![x, -x]).collect(),
            weights: Some(weights),
        },
    };
    let duplicated = CornerInput {
        label: "w".into(),
        table: SampleTable {
            names: vec!["x".into(), "y".into()],
            rows: dup.iter().map(|&x| vec![x, -x]).collect(),
            weights: None,
        },
    };
    let a = corner(&[weighted.clone(), weighted], 8, 4).unwrap();
    let b = corner(&[duplicated.clone(), duplicated], 8, 4).unwrap();
    assert_csv_close(&a.marginals_csv, &b.marginals_csv);
    assert_csv_close(a.pairs_csv.as_deref().unwrap(), b.pairs_csv.as_deref().unwrap());
}

fn assert_csv_close(a: &str, b: &str) {
    assert_eq!(a.lines().count(), b.lines().count());
    for (la, lb) in a.lines().zip(b.lines()) {
        for (fa, fb) in la.split(',').zip(lb.split(',')) {
            match (fa.parse::<f64>(), fb.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{la} vs {lb}"),
                _ => assert_eq!(fa, fb),
            }
        }
    }
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["run"];
    args.extend(SMALL_NS);
    args.extend(["--seed", "5"]);
    let stdout = run_ok(&args, tmp.path());
    let dir = Path::new(stdout.lines().next().unwrap());
    assert!(dir.starts_with(tmp.path()));
    assert!(dir.join("samples.csv").is_file());
}

#[test]
fn train_flow_writes_weights_and_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("flow");
    run_ok(
        &[
            "train-flow", "--model", "gaussian_fit", "--epochs", "20", "--batch", "4", "--output-dir",
            dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    for f in ["flow.bnaf", "training_trace.csv", "training.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let trace = std::fs::read_to_string(dir.join("training_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);

    let run = tmp.path().join("run");
    run_ok(
        &[
            "run", "--model", "gaussian_fit", "--method", "neutra-ns", "--n-live", "60", "--flow-weights",
            dir.join("flow.bnaf").to_str().unwrap(), "--output-dir", run.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(run.join("evidence.json").is_file());
}
