//! End-to-end runs of the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use undercrowd::cli::{effective_config, Cli};

const BASE: &str = r#"seed = 4

[synth]
n_dates = 20

[gmerf.forest]
n_trees = 20

[model]
slot_degree = 2
week_degree = 1
slot_interactions = false
week_interactions = false
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_undercrowd"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Exit code and the parsed JSON error line.
fn fails(dir: &Path, args: &[&str]) -> (i32, Value) {
    let o = run(dir, args);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8_lossy(&o.stderr);
    let json = serde_json::from_str(err.trim()).unwrap_or(Value::Null);
    (o.status.code().unwrap(), json)
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_slice(&fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

/// Simulates, ingests, validates and aggregates into `dir`.
fn prepared(extra: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), format!("{BASE}{extra}")).unwrap();
    let c = ["--config", "run.toml", "--in-place"];
    let step = |out: &str, rest: &[&str]| {
        let mut a: Vec<&str> = c.to_vec();
        a.extend(["--out", out]);
        a.extend(rest);
        ok(d, &a)
    };
    step("sim", &["simulate"]);
    step("ingest", &["ingest", "--signals", "sim/signals.csv", "--network", "sim/network.json"]);
    step("validate", &["validate", "--rides", "ingest/rides.json", "--network", "sim/network.json"]);
    step(
        "aggregate",
        &[
            "aggregate",
            "--clean-rides",
            "validate/clean_rides.json",
            "--weather",
            "sim/weather.csv",
            "--calendar",
            "sim/calendar.csv",
        ],
    );
    dir
}

#[test]
fn aggregation_reproduces_the_simulated_labels() {
    let dir = prepared("");
    let d = dir.path();
    assert_eq!(
        fs::read(d.join("aggregate/observations.csv")).unwrap(),
        fs::read(d.join("sim/observations_truth.csv")).unwrap()
    );
    let rej = fs::read_to_string(d.join("validate/rejections.csv")).unwrap();
    assert_eq!(rej.trim(), "date,route,table_no,ride_no,direction,reason");
}

#[test]
fn manifests_list_every_file_with_its_digest() {
    let dir = prepared("");
    for sub in ["sim", "ingest", "validate", "aggregate"] {
        let m = read_json(dir.path().join(sub).join("manifest.json"));
        let files = m["files"].as_array().unwrap();
        assert!(!files.is_empty());
        for f in files {
            let bytes = fs::read(dir.path().join(sub).join(f["name"].as_str().unwrap())).unwrap();
            assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
            assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
        }
    }
    // Inputs are recorded by digest.
    let m = read_json(dir.path().join("ingest/manifest.json"));
    let roles: Vec<&str> = m["provenance"]["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["role"].as_str().unwrap())
        .collect();
    assert_eq!(roles, ["signals", "network"]);
    let sig = fs::read(dir.path().join("sim/signals.csv")).unwrap();
    assert_eq!(
        m["provenance"]["inputs"][0]["sha256"].as_str().unwrap(),
        hex::encode(Sha256::digest(&sig))
    );
}

#[test]
fn config_hash_matches_the_effective_config() {
    let dir = prepared("");
    let d = dir.path();
    let cfg_path = d.join("run.toml");
    let args = [
        "undercrowd",
        "--config",
        cfg_path.to_str().unwrap(),
        "--in-place",
        "--out",
        "glmm",
        "fit-glmm",
        "--observations",
        "aggregate/observations.csv",
    ];
    ok(d, &args[1..]);
    let cfg = effective_config(&Cli::try_parse_from(args).unwrap()).unwrap();
    let want = hex::encode(Sha256::digest(serde_json::to_vec(&cfg).unwrap()));
    let model = read_json(d.join("glmm/model.json"));
    assert_eq!(model["provenance"]["config_hash"].as_str().unwrap(), want);
    assert_eq!(model["provenance"]["seed"].as_u64().unwrap(), 4);
    // Without --in-place the run directory carries the hash prefix.
    let out = ok(d, &args[1..].iter().filter(|a| **a != "--in-place").copied().collect::<Vec<_>>());
    assert!(out.contains(&format!("fit-glmm-{}", &want[..8])), "{out}");
}

#[test]
fn models_evaluate_report_and_answer_scenarios() {
    let dir = prepared("");
    let d = dir.path();
    let c = ["--config", "run.toml", "--in-place"];
    let obs = "aggregate/observations.csv";
    let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run_ok = |rest: &[&str]| {
        let a = with(rest);
        ok(d, &a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    run_ok(&["--out", "glmm", "fit-glmm", "--observations", obs]);
    run_ok(&["--out", "gmerf", "fit-gmerf", "--observations", obs]);
    for m in ["glmm", "gmerf"] {
        let model = format!("{m}/model.json");
        let split = format!("{m}/split.json");
        run_ok(&["--out", &format!("eval-{m}"), "evaluate", "--observations", obs, "--model", &model, "--split", &split]);
        let e = read_json(d.join(format!("eval-{m}/evaluation.json")));
        let data = &e["data"];
        assert_eq!(data["model"], m);
        let auc = data["auc"].as_f64().unwrap();
        assert!((0.5..=1.0).contains(&auc), "{m} AUC {auc}");
        let conf = fs::read_to_string(d.join(format!("eval-{m}/confusion.csv"))).unwrap();
        let total: u64 = conf
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, data["n_test_rows"].as_u64().unwrap());
        let roc = fs::read_to_string(d.join(format!("eval-{m}/roc.csv"))).unwrap();
        assert!(roc.starts_with("x,y,series,threshold\n"));
    }
    let trace = fs::read_to_string(d.join("gmerf/trace.csv")).unwrap();
    let best: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(best.windows(2).all(|w| w[1] >= w[0]));

    run_ok(&["--out", "rides", "ride-report", "--observations", obs, "--model", "glmm/model.json"]);
    let curve = fs::read_to_string(d.join("rides/level_curve.csv")).unwrap();
    let counts: Vec<u64> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 201);
    assert!(counts.windows(2).all(|w| w[1] <= w[0]));
    let report = read_json(d.join("rides/ride_report.json"));
    assert_eq!(counts[0], report["data"]["n_rides"].as_u64().unwrap());
}

fn scenario_file(rain: f64) -> String {
    format!(
        "day_type = \"working\"\ntime_slot = 9\nweek = 2\n\n[weather]\ntemperature = 18.0\nwind_speed = 12.0\ncloud_coverage = 50.0\nhumidity = 70.0\nrain = {rain}\n"
    )
}

#[test]
fn rain_moves_scenario_probabilities_with_its_coefficient() {
    let dir = prepared("");
    let d = dir.path();
    let c = ["--config", "run.toml", "--in-place"];
    let mut a = c.to_vec();
    a.extend(["--out", "glmm", "fit-glmm", "--observations", "aggregate/observations.csv"]);
    ok(d, &a);
    fs::write(d.join("dry.toml"), scenario_file(0.0)).unwrap();
    fs::write(d.join("wet.toml"), scenario_file(1.0)).unwrap();
    let probs = |name: &str| -> Vec<f64> {
        let mut a = c.to_vec();
        let file = format!("{name}.toml");
        a.extend(["--out", name, "scenario", "--model", "glmm/model.json", "--scenario", &file]);
        ok(d, &a);
        read_json(d.join(name).join("scenario.json"))["data"]["probabilities"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect()
    };
    let (dry, wet) = (probs("dry"), probs("wet"));
    assert!(!dry.is_empty());
    assert_eq!(dry.len(), wet.len());
    let model = read_json(d.join("glmm/model.json"));
    let fit = &model["data"]["fit"];
    let k = fit["terms"]
        .as_array()
        .unwrap()
        .iter()
        .position(|t| t == "Precipitation")
        .expect("rain term");
    let b_rain = fit["beta"][k].as_f64().unwrap();
    assert!(b_rain != 0.0);
    for (p0, p1) in dry.iter().zip(&wet) {
        // One unit of rain shifts every logit by the rain coefficient.
        let shift = (p1 / (1.0 - p1)).ln() - (p0 / (1.0 - p0)).ln();
        assert!((shift - b_rain).abs() < 1e-9, "{shift} vs {b_rain}");
    }
}

#[test]
fn seed_drives_the_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), BASE).unwrap();
    for (out, seed) in [("a", "1"), ("b", "1"), ("c", "2")] {
        ok(d, &["--config", "run.toml", "--seed", seed, "--out", out, "--in-place", "simulate"]);
    }
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/signals.csv"), read("b/signals.csv"));
    // The output path is part of the config hash, so only the payloads match.
    assert_eq!(read_json(d.join("a/truth.json"))["data"], read_json(d.join("b/truth.json"))["data"]);
    assert_ne!(read("a/signals.csv"), read("c/signals.csv"));
}

#[test]
fn single_class_response_exits_5() {
    let dir = prepared("");
    let d = dir.path();
    let text = fs::read_to_string(d.join("aggregate/observations.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let y = header.split(',').position(|h| h == "y").unwrap();
    let mut out = vec![header.to_string()];
    for l in lines {
        let mut f: Vec<&str> = l.split(',').collect();
        f[y] = "0";
        out.push(f.join(","));
    }
    fs::write(d.join("zeros.csv"), out.join("\n") + "\n").unwrap();
    let (code, err) = fails(d, &["--config", "run.toml", "--out", "x", "fit-glmm", "--observations", "zeros.csv"]);
    assert_eq!(code, 5);
    assert_eq!(err["error"]["code"], "degenerate_response");
    assert_eq!(err["error"]["exit"], 5);
}

#[test]
fn weather_gap_exits_4_and_names_the_date() {
    let dir = prepared("");
    let d = dir.path();
    let text = fs::read_to_string(d.join("sim/weather.csv")).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("2022-06-05")).collect();
    fs::write(d.join("gappy.csv"), kept.join("\n") + "\n").unwrap();
    let (code, err) = fails(
        d,
        &[
            "--config",
            "run.toml",
            "--out",
            "x",
            "aggregate",
            "--clean-rides",
            "validate/clean_rides.json",
            "--weather",
            "gappy.csv",
            "--calendar",
            "sim/calendar.csv",
        ],
    );
    assert_eq!(code, 4);
    assert!(err["error"]["message"].as_str().unwrap().contains("2022-06-05"), "{err}");
}

#[test]
fn malformed_rows_are_skipped_or_fatal_under_strict() {
    let dir = prepared("");
    let d = dir.path();
    let mut text = fs::read_to_string(d.join("sim/signals.csv")).unwrap();
    text.push_str("2022-06-01,R1,1,6,0,V001,1,P1,not-a-time,0,0,,S01,7,0,0,0\n");
    fs::write(d.join("bad.csv"), text).unwrap();
    let args = ["ingest", "--signals", "bad.csv", "--network", "sim/network.json"];
    let mut lenient = vec!["--config", "run.toml", "--out", "lenient", "--in-place"];
    lenient.extend(args);
    ok(d, &lenient);
    let diags = read_json(d.join("lenient/ingest_diagnostics.json"));
    assert!(diags["data"]
        .as_array()
        .unwrap()
        .iter()
        .any(|x| x["code"] == "malformed_row"));
    let mut strict = vec!["--config", "run.toml", "--out", "strict", "--strict"];
    strict.extend(args);
    let (code, err) = fails(d, &strict);
    assert_eq!(code, 3);
    assert_eq!(err["error"]["code"], "schema_mismatch");
}

#[test]
fn configuration_and_io_errors_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bogus.toml"), "no_such_key = 1\n").unwrap();
    let (code, err) = fails(d, &["--config", "bogus.toml", "simulate"]);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["code"], "invalid_config");

    fs::write(d.join("frac.toml"), "[eval]\nfraction = 1.5\n").unwrap();
    assert_eq!(fails(d, &["--config", "frac.toml", "simulate"]).0, 2);

    let (code, err) = fails(d, &["ingest", "--signals", "missing.csv", "--network", "missing.json"]);
    assert_eq!(code, 7);
    assert_eq!(err["error"]["code"], "io");

    // A required path that is never given.
    assert_eq!(fails(d, &["fit-glmm"]).0, 2);
    // Usage errors come from the argument parser.
    assert_eq!(run(d, &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn help_lists_exit_codes() {
    let o = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("Exit codes"));
    assert!(text.contains("degenerate response"));
}
