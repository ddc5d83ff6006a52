use std::fs;

use dyntrack::harness::experiment::{aggregate, read_runs, ArmAggregate};
use dyntrack::harness::{run_experiment, ExperimentConfig};

fn config(dir: &std::path::Path, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(
        r#"{
            "name": "contrast-small",
            "function": {"n": 60, "b": 0.1, "theta": 900},
            "arms": [
                {"label": "one-plus-one", "algorithm": {"kind": "single"}},
                {"label": "tournament", "algorithm": {"kind": "population", "lambda": 150, "selection": "tournament:k=30"}}
            ],
            "budget": 150000,
            "replicates": 3
        }"#,
    )
    .unwrap();
    cfg.seed = seed;
    cfg.out_dir = Some(dir.to_path_buf());
    cfg
}

#[test]
fn aggregates_are_recomputable_from_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&config(dir.path(), 1)).unwrap();
    let stored: Vec<ArmAggregate> = serde_json::from_str(&fs::read_to_string(dir.path().join("aggregate.json")).unwrap()).unwrap();
    for (arm, saved) in out.arms.iter().zip(&stored) {
        let runs = read_runs(&dir.path().join(&arm.label).join("runs.csv")).unwrap();
        assert_eq!(runs, arm.runs);
        let again = aggregate(&arm.label, &arm.spec.to_string(), &runs);
        assert_eq!(&again, saved);
    }
}

#[test]
fn populations_stay_closer_to_the_target_than_a_single_individual() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&config(dir.path(), 2)).unwrap();
    let single = &out.arms[0].aggregate;
    let pop = &out.arms[1].aggregate;
    assert!(single.mean_tail_hit_fraction < 0.05, "{single:?}");
    assert!(pop.mean_hit_fraction > 0.2, "{pop:?}");
    assert!(pop.mean_hit_fraction > 4.0 * single.mean_hit_fraction);
}

#[test]
fn seeds_change_results_and_manifests_record_them() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let x = run_experiment(&config(a.path(), 10)).unwrap();
    let y = run_experiment(&config(b.path(), 11)).unwrap();
    assert_ne!(x.manifest.function_seed, y.manifest.function_seed);
    assert_ne!(x.arms[1].runs, y.arms[1].runs);
    let reloaded = ExperimentConfig::load(&a.path().join("manifest.json")).unwrap();
    assert_eq!(reloaded.seed, 10);
    assert!(x.manifest.files.iter().all(|f| a.path().join(f).exists()));
}

#[test]
fn broken_run_files_report_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&config(dir.path(), 3)).unwrap();
    let path = dir.path().join(&out.arms[0].label).join("runs.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[2] = lines[2].replacen(',', ",oops", 1);
    fs::write(&path, lines.join("\n")).unwrap();
    let err = read_runs(&path).unwrap_err().to_string();
    assert!(err.contains("row 2") && err.contains("evaluations"), "{err}");
}
