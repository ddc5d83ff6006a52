use std::fs;
use std::process::{Command, Output};

fn dyntrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyntrack")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

const CONFIG: &str = r#"{
    "name": "cli",
    "function": {"n": 30, "b": 0.1, "theta": 100},
    "arms": [
        {"label": "ea", "algorithm": {"kind": "single"}},
        {"label": "pop", "algorithm": {"kind": "population", "lambda": 10, "selection": "tournament:k=4"}}
    ],
    "budget": 4000,
    "replicates": 2,
    "seed": 3
}"#;

#[test]
fn run_writes_outputs_and_replays_from_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, CONFIG).unwrap();
    let a = dir.path().join("a");
    let out = dyntrack(&["run", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("ea") && table.contains("pop"));
    for f in ["manifest.json", "aggregate.json", "ea/runs.csv", "pop/in_opt_series.csv", "pop/rep-0001.summary.csv"] {
        assert!(a.join(f).exists(), "missing {f}");
    }

    let b = dir.path().join("b");
    let manifest = a.join("manifest.json");
    let out = dyntrack(&["run", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(out.status.success());
    for f in ["ea/runs.csv", "pop/runs.csv", "pop/rep-0000.summary.csv", "pop/in_opt_series.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dyntrack"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--replicates", "1", "--budget", "200"])
        .env("DYNTRACK_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("cli/manifest.json").exists());
}

#[test]
fn exit_codes_distinguish_validation_and_io() {
    assert_eq!(dyntrack(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(dyntrack(&["ruin", "--n", "10", "--r", "8", "--d", "5"]).status.code(), Some(1));
    assert_eq!(dyntrack(&["beta", "--selection", "linear-ranking:eta=5", "--lambda", "10"]).status.code(), Some(1));
    let missing = dyntrack(&["run", "--config", "/nonexistent/dyntrack.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    assert_eq!(dyntrack(&["verify", "--only", "42"]).status.code(), Some(1));
    assert_eq!(dyntrack(&["--help"]).status.code(), Some(0));
}

#[test]
fn analysis_commands_print_json() {
    let v = stdout_json(&dyntrack(&["stability", "--n", "100", "--b", "0.3", "--theta", "500"]));
    assert_eq!(v["bound"]["kappa"], 250.0);

    let v = stdout_json(&dyntrack(&["beta", "--selection", "tournament:k=2", "--lambda", "10", "--gamma", "0.5"]));
    assert!((v["beta"][0]["closed_form"].as_f64().unwrap() - 0.75).abs() < 1e-12);

    let v = stdout_json(&dyntrack(&["ruin", "--n", "64", "--r", "3", "--d", "16"]));
    assert_eq!(v["states"].as_array().unwrap().len(), 15);
    assert!(v["residual"].as_f64().unwrap() < 1e-12);

    let v = stdout_json(&dyntrack(&["drift", "--n", "200", "--b", "0.05", "--state", "0,3", "--samples", "2000"]));
    assert_eq!(v["states"].as_array().unwrap().len(), 2);

    let v = stdout_json(&dyntrack(&["occupancy", "--n", "100", "--b", "0.1", "--steps", "5000", "--burn-in", "100"]));
    let frac = v["report"]["fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&frac));
}

#[test]
fn plot_renders_series_to_svg() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    fs::write(&csv, "generation,mean,lo,hi\n0,1,1,1\n1,0.6,0.5,0.7\n2,0.55,0.45,0.65\n").unwrap();
    let svg = dir.path().join("out.svg");
    let arg = format!("pop={}", csv.display());
    let out = dyntrack(&["plot", &arg, "--band", "lo,hi", "--fraction", "--out", svg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("pop"));

    let bad = dyntrack(&["plot", &arg, "--y", "missing"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("missing"));
}

#[test]
fn verify_reports_one_line_per_criterion() {
    let out = dyntrack(&["verify", "--only", "2,4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.starts_with("PASS [2]")));
    assert!(text.lines().any(|l| l.starts_with("PASS [4]")));
}
