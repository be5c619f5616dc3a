use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vcg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcg"))
        .args(args)
        .current_dir(cwd)
        .env("VCG_DATA_DIR", data_dir())
        .output()
        .unwrap()
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn help_on_every_verb() {
    let dir = tempfile::tempdir().unwrap();
    for verb in [
        "ingest",
        "simulate",
        "fit",
        "forecast",
        "score",
        "backtest",
        "export-quantiles",
        "export-corr-path",
    ] {
        let out = vcg(&[verb, "--help"], dir.path());
        assert!(ok(&out).contains("Usage: vcg"), "{verb}");
    }
}

#[test]
fn bad_arguments_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(vcg(&["fit", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(vcg(&["frobnicate"], dir.path()).status.code(), Some(1));
    let out = vcg(&["fit", "--data", "missing.csv", "--spec", "rw_st_r", "--out", "f.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = vcg(&["fit", "--data", "synthetic.csv", "--spec", "nope", "--out", "f.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "simulate", "--spec", "rw_st_r", "--dim", "2", "--len", "10", "--seed", "9", "--out", out,
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    };
    for out in ["a.csv", "b.csv"] {
        let a = args(out);
        ok(&vcg(&a.iter().map(String::as_str).collect::<Vec<_>>(), dir.path()));
    }
    let a = read(dir.path().join("a.csv"));
    assert_eq!(a, read(dir.path().join("b.csv")));
    assert_eq!(a.lines().count(), 11);
    assert_eq!(read(dir.path().join("a.truth.json")), read(dir.path().join("b.truth.json")));
}

#[test]
fn simulate_from_truth_file_reproduces_panel() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&vcg(&["simulate", "--spec", "vecm1_st_rt_lev_ncp", "--dim", "3", "--len", "50", "--out", "a.csv"], d));
    ok(&vcg(
        &["simulate", "--spec", "vecm1_st_rt_lev_ncp", "--params", "a.truth.json", "--len", "50", "--out", "b.csv"],
        d,
    ));
    assert_eq!(read(d.join("a.csv")), read(d.join("b.csv")));
}

#[test]
fn fit_forecast_score_and_exports_on_bundled_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = ok(&vcg(
        &["fit", "--data", "synthetic.csv", "--spec", "rw_st_r", "--last", "300", "--out", "fit.json"],
        d,
    ));
    assert!(s.contains("converged true"), "{s}");

    let fc = [
        "forecast", "--data", "synthetic.csv", "--fit", "fit.json", "--last", "300", "--horizon", "5",
        "--trajectories", "256", "--seed", "3",
    ];
    let mut a = fc.to_vec();
    a.extend(["--out", "e1.csv", "--summary", "sum.json"]);
    ok(&vcg(&a, d));
    let mut b = fc.to_vec();
    b.extend(["--out", "e2.csv.gz"]);
    ok(&vcg(&b, d));
    let e1 = read(d.join("e1.csv"));
    assert_eq!(e1.lines().count(), 2 + 256 * 5 * 4);

    // The gzipped copy holds the same ensemble.
    let q = |ens: &str, out: &str| ok(&vcg(&["export-quantiles", "--ensemble", ens, "--probs", "1", "25", "50", "75", "99", "--out", out], d));
    q("e1.csv", "q1.csv");
    q("e2.csv.gz", "q2.csv");
    let q1 = read(d.join("q1.csv"));
    assert_eq!(q1, read(d.join("q2.csv")));
    let header: Vec<&str> = q1.lines().next().unwrap().split(',').collect();
    // step, then mean plus five quantiles for each of four series
    assert_eq!(header.len(), 1 + 4 * 6);
    assert_eq!(header.iter().filter(|h| h.contains("_q")).count(), 20);
    assert_eq!(q1.lines().count(), 6);

    // Score against the rows just after the 300-row window: drop the tail.
    let full = read(data_dir().join("synthetic.csv"));
    let head: Vec<&str> = full.lines().take(1 + 300).collect();
    std::fs::write(d.join("head.csv"), head.join("\n") + "\n").unwrap();
    ok(&vcg(
        &["forecast", "--data", "head.csv", "--fit", "fit.json", "--horizon", "5", "--trajectories", "256", "--out", "e3.csv"],
        d,
    ));
    let s = ok(&vcg(&["score", "--ensemble", "e3.csv", "--data", "synthetic.csv", "--out", "score.json"], d));
    assert!(s.contains("All_1-5"), "{s}");
    let report: serde_json::Value = serde_json::from_str(&read(d.join("score.json"))).unwrap();
    assert_eq!(report["schema_version"], 1);
    let scores = report["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 5 * 3);
    assert!(scores.iter().all(|s| s["energy_score"].as_f64().unwrap() > 0.0));
    // Too little realized data after the origin.
    let out = vcg(&["score", "--ensemble", "e1.csv", "--data", "synthetic.csv"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn outputs_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str| {
        ok(&vcg(
            &["fit", "--data", "synthetic.csv", "--spec", "rw_s_r", "--last", "200", "--out", out],
            d,
        ));
        ok(&vcg(
            &["forecast", "--data", "synthetic.csv", "--fit", out, "--last", "200", "--horizon", "3",
              "--trajectories", "64", "--out", &format!("{out}.csv")],
            d,
        ));
    };
    run("a.json");
    run("b.json");
    assert_eq!(read(d.join("a.json")), read(d.join("b.json")));
    assert_eq!(read(d.join("a.json.csv")), read(d.join("b.json.csv")));
}

#[test]
fn constant_correlation_gives_flat_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&vcg(&["fit", "--data", "synthetic.csv", "--spec", "rw_s_r", "--last", "200", "--out", "fit.json"], d));
    ok(&vcg(
        &["export-corr-path", "--data", "synthetic.csv", "--fit", "fit.json", "--last", "200", "--out", "c.csv"],
        d,
    ));
    let text = read(d.join("c.csv"));
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# corr_path schema_version=1"));
    assert_eq!(lines.next().unwrap().split(',').count(), 1 + 6);
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').skip(1).map(String::from).collect()).collect();
    assert_eq!(rows.len(), 198);
    assert!(rows.iter().all(|r| r == &rows[0]));
}

#[test]
fn ingest_bundled_raw_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let norm = data_dir().join("../config/normalization.example.kv");
    let s = ok(&vcg(
        &["ingest", "--input", "raw/eua.csv", "raw/fuels.csv", "--normalize", norm.to_str().unwrap(), "--out", "p.csv"],
        d,
    ));
    assert!(s.contains("3 series"), "{s}");
    let text = read(d.join("p.csv"));
    assert_eq!(text.lines().next(), Some("date,EUA,Gas,Coal"));
    let inner = vcg(&["ingest", "--input", "raw/eua.csv", "raw/fuels.csv", "--join", "inner", "--out", "q.csv"], d);
    ok(&inner);
    assert!(read(d.join("q.csv")).lines().count() < text.lines().count());
}
