//! End-to-end checks of the binary: exit codes, artifacts, reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_garding")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("garding-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn strip_elapsed(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"elapsed_seconds\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn concavity_campaign_passes_and_reproduces() {
    let dir = tmp_dir("concavity");
    let out = dir.join("out").to_string_lossy().to_string();
    let args = [
        "verify-concavity",
        "--n",
        "3",
        "--f-max",
        "7",
        "--trials",
        "1500",
        "--seed",
        "42",
        "--out",
        &out,
    ];
    let first = run(&args);
    assert!(first.status.success(), "{first:?}");
    let report_path = Path::new(&out).join("concavity-campaign.json");
    let first_text = std::fs::read_to_string(&report_path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&first_text).unwrap();
    assert_eq!(v["kind"], "concavity-campaign");
    assert_eq!(v["payload"]["violations"].as_array().unwrap().len(), 0);
    assert!(v["payload"]["min_eig"].as_f64().unwrap() > 0.0);
    // the full invocation is embedded verbatim
    assert!(v["argv"].as_array().unwrap().iter().any(|a| a == "--f-max"));

    let second = run(&args);
    assert!(second.status.success());
    let second_text = std::fs::read_to_string(&report_path).unwrap();
    assert_eq!(
        strip_elapsed(&first_text),
        strip_elapsed(&second_text),
        "reruns with the same seed must be byte-identical modulo timing"
    );
}

#[test]
fn dimension_two_concavity_is_a_usage_error() {
    let dir = tmp_dir("n2");
    let out = dir.join("out").to_string_lossy().to_string();
    let result = run(&[
        "verify-concavity",
        "--n",
        "2",
        "--trials",
        "10",
        "--out",
        &out,
    ]);
    assert_eq!(result.status.code(), Some(2), "{result:?}");
}

#[test]
fn unknown_flags_exit_with_usage_error() {
    let result = run(&["verify-concavity", "--frobnicate"]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&result.stderr).is_empty());
}

#[test]
fn solve_recovers_the_round_solution() {
    let dir = tmp_dir("solve");
    let out = dir.join("out").to_string_lossy().to_string();
    let result = run(&[
        "solve",
        "--n",
        "3",
        "--rhs",
        "constant:0.75",
        "--resolution",
        "8",
        "--out",
        &out,
    ]);
    assert!(result.status.success(), "{result:?}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&out).join("solve.json")).unwrap())
            .unwrap();
    assert!((v["payload"]["kappa_max"].as_f64().unwrap() - 0.5).abs() < 1e-6);
    assert_eq!(v["payload"]["admissible"], true);
    // the graph artifact parses back and is the radius-2 sphere
    let graph_text = std::fs::read_to_string(Path::new(&out).join("graph.csv")).unwrap();
    assert!(graph_text.starts_with("# {\"n\":3,\"resolution\":8}"));
    for line in graph_text.lines().skip(2) {
        let rho: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((rho - 2.0).abs() < 1e-6);
    }
}

#[test]
fn sample_writes_csv_with_header() {
    let dir = tmp_dir("sample");
    let out = dir.join("out").to_string_lossy().to_string();
    let result = run(&[
        "sample", "--n", "4", "--k", "3", "--count", "6", "--seed", "9", "--out", &out,
    ]);
    assert!(result.status.success());
    let text = std::fs::read_to_string(Path::new(&out).join("samples.csv")).unwrap();
    assert!(text.starts_with("lambda_1,lambda_2,lambda_3,lambda_4"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn diagnose_reports_the_case_split() {
    let dir = tmp_dir("diagnose");
    let out = dir.join("out").to_string_lossy().to_string();
    let result = run(&[
        "diagnose",
        "--n",
        "3",
        "--body",
        "ellipsoid:1.2,1,1,1",
        "--resolution",
        "8",
        "--f-max",
        "7",
        "--out",
        &out,
    ]);
    assert!(result.status.success(), "{result:?}");
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(Path::new(&out).join("diagnostics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["kind"], "diagnostics");
    assert_eq!(v["payload"]["case"], "SemiConvex");
    assert!(v["payload"]["k0"].as_f64().unwrap() >= 1.0);
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let dir = tmp_dir("config");
    let out = dir.join("out").to_string_lossy().to_string();
    let conf = dir.join("run.conf");
    std::fs::write(&conf, "n = 3\nf-max = 7\ntrials = 500\nseed = 5\n").unwrap();
    let conf_s = conf.to_string_lossy().to_string();
    let result = run(&[
        "verify-concavity",
        "--config",
        &conf_s,
        "--trials",
        "200",
        "--out",
        &out,
    ]);
    assert!(result.status.success(), "{result:?}");
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(Path::new(&out).join("concavity-campaign.json")).unwrap(),
    )
    .unwrap();
    // flag beat the config for trials; config supplied the rest
    assert_eq!(v["payload"]["trials"], 200);
    assert_eq!(v["payload"]["seed"], 5);
    // raw config recorded verbatim
    assert!(v["config_text"].as_str().unwrap().contains("f-max = 7"));
}

#[test]
fn report_merge_is_append_safe() {
    let dir = tmp_dir("report");
    let out = dir.join("out").to_string_lossy().to_string();
    assert!(run(&[
        "verify-cone", "--n", "3", "--k", "2", "--trials", "300", "--out", &out,
    ])
    .status
    .success());
    let json_path = Path::new(&out).join("cone-campaign.json");
    let json_s = json_path.to_string_lossy().to_string();
    let csv = dir.join("summary.csv");
    let csv_s = csv.to_string_lossy().to_string();
    assert!(run(&["report", &json_s, "--csv", &csv_s]).status.success());
    assert!(run(&["report", &json_s, "--csv", &csv_s]).status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
    assert_eq!(text.matches("kind,").count(), 1);
}
