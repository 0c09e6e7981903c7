use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use lambdatune_core::sweep::read_results;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lambdatune"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Grid-oracle argmin for the default synthetic clip.
const ORACLE_ARGMIN_K: f64 = 3.29151095630793;

#[test]
fn bdrate_of_identical_curves_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sweep", "--synthetic", "default", "--out", "ref.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("5 encodes"));
    let o = run(dir.path(), &["bdrate", "ref.json", "ref.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("BD-Rate: 0.00%"));
}

#[test]
fn optimize_default_model_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["optimize", "--synthetic", "default", "--codec", "AV1", "--group", "KF_GF_ARF", "--out", "res"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = read_results(&[dir.path().join("res")]).unwrap();
    assert_eq!(results.len(), 1);
    assert!((results[0].k_hat.get() - ORACLE_ARGMIN_K).abs() <= 0.15);
    assert!(results[0].bd_rate < 0.0);
}

#[test]
fn missing_manifest_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "sweep",
            "--manifest",
            "/definitely/missing/manifest.json",
            "--encoder-template",
            "enc {input} {output} {qp} {k}",
            "--metric-template",
            "vmaf {reference} {distorted} {report}",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("/definitely/missing/manifest.json"), "{err}");
    assert!(err.contains("manifest"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["sweep", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["sweep", "--codec", "VP9"]).status.code(), Some(2));
    // No backend chosen.
    assert_eq!(run(dir.path(), &["sweep"]).status.code(), Some(2));
}

#[test]
fn runtime_failure_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["sweep", "--synthetic", "default", "--codec", "HEVC", "--qps", "22,27,60"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("config failed"), "{}", stderr(&o));
}

#[test]
fn warm_cache_rerun_reproduces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let model = r#"[
        {"id": "a", "model": {"k_star": 1.7}},
        {"id": "b", "model": {"k_star": 0.8, "noise_seed": 3}},
        {"id": "c", "model": {"k_star": 3.1, "c": 1.2}}
    ]"#;
    std::fs::write(dir.path().join("suite.json"), model).unwrap();
    let opt = |out: &str| {
        let o = run(dir.path(), &["optimize", "--synthetic", "suite.json", "--codec", "HEVC", "--cache-dir", "cache", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert!(!opt("cold").contains("; 0 encoder invocations"));
    assert!(opt("warm").contains("; 0 encoder invocations"));
    for format in ["text", "csv"] {
        let a = run(dir.path(), &["report", "cold", "--format", format]);
        let b = run(dir.path(), &["report", "warm", "--format", format]);
        let c = run(dir.path(), &["report", "cold", "--format", format]);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout);
        assert_eq!(a.stdout, c.stdout);
    }
    let csv = stdout(&run(dir.path(), &["report", "cold", "--format", "csv"]));
    assert!(csv.lines().nth(1).unwrap().starts_with("HEVC,Top,IFrames,3,"));
}

#[test]
fn plot_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), &["optimize", "--synthetic", "default", "--out", "res"]).status.success());
    let o = run(dir.path(), &["plot", "res", "--out", "fig/rd.svg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(dir.path().join("fig/rd.svg")).unwrap();
    assert_eq!(svg.matches("class=\"marker\"").count(), 10);
    assert_eq!(svg.matches("class=\"legend-entry\"").count(), 2);
}

#[test]
fn lambda_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["lambda", "--codec", "HEVC", "--qp", "12", "--k", "2"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "lambda0 0.570000\nlambda 1.140000\n");
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/qdc_fixture.csv");
    let o = run(dir.path(), &["lambda", "--codec", "AV1", "--qp", "0", "--qdc-table", fixture.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    // q_dc(0) = 4, A = 3.3: 16 * 3.3.
    assert!(stdout(&o).starts_with("lambda0 52.800000"));
}

#[test]
fn remote_server_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut server = bin()
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let o = run(dir.path(), &["--server", &url, "optimize", "--synthetic", "default", "--out", "res"]);
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_results(&[dir.path().join("res")]).unwrap().len(), 1);
    let o = run(dir.path(), &["--server", "http://127.0.0.1:9", "report", "res"]);
    assert_eq!(o.status.code(), Some(1));
}
