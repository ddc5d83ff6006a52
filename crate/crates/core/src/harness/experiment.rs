//! Batch runner: replicates, per-run files, aggregates and the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ResolvedArm};
use crate::algorithms::{initial_points, run_population, run_single, AlgorithmSpec, GenerationSummary, Trace, TraceOptions};
use crate::analysis::{hit_fraction_from, loss_events, tracking_score};
use crate::bits::hamming;
use crate::dynamics::{MhbInstance, MhbParams};
use crate::error::{invalid, Error, Result};
use crate::stats::{z_score, RngStream};

/// Label mixed into the master seed for the function streams; arm `i` uses `1 + i`.
pub const FUNCTION_LABEL: u64 = 0;

/// Floats in output files carry 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Per-replicate outcome, one row of `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub replicate: u32,
    pub evaluations: u64,
    pub dropped_evaluations: u64,
    /// Target changes at times up to the last evaluation.
    pub changes: u64,
    pub hit_fraction: f64,
    pub tail_hit_fraction: f64,
    pub tracking_min: f64,
    pub tracking_mean: f64,
    pub tracks: bool,
    /// Smallest in-OPT fraction over generations after the first.
    pub min_in_opt_fraction: f64,
    pub loss_episodes: u64,
    pub unrecovered_losses: u64,
    pub change_events: u64,
    pub change_losses: u64,
}

const RUN_HEADER: [&str; 14] = [
    "replicate",
    "evaluations",
    "dropped_evaluations",
    "changes",
    "hit_fraction",
    "tail_hit_fraction",
    "tracking_min",
    "tracking_mean",
    "tracks",
    "min_in_opt_fraction",
    "loss_episodes",
    "unrecovered_losses",
    "change_events",
    "change_losses",
];

impl RunSummary {
    fn record(&self) -> Vec<String> {
        vec![
            self.replicate.to_string(),
            self.evaluations.to_string(),
            self.dropped_evaluations.to_string(),
            self.changes.to_string(),
            fmt_f64(self.hit_fraction),
            fmt_f64(self.tail_hit_fraction),
            fmt_f64(self.tracking_min),
            fmt_f64(self.tracking_mean),
            self.tracks.to_string(),
            fmt_f64(self.min_in_opt_fraction),
            self.loss_episodes.to_string(),
            self.unrecovered_losses.to_string(),
            self.change_events.to_string(),
            self.change_losses.to_string(),
        ]
    }
}

/// Aggregate over the replicates of one arm; recomputable from `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmAggregate {
    pub label: String,
    pub algorithm: String,
    pub replicates: usize,
    pub mean_hit_fraction: f64,
    pub mean_tail_hit_fraction: f64,
    pub mean_tracking_min: f64,
    pub tracking_runs: usize,
    pub loss_free_runs: usize,
    pub runs_with_unrecovered_loss: usize,
    /// Pooled change-induced loss rate: sum of losses over sum of events.
    pub change_loss_rate: f64,
    pub min_in_opt_fraction: f64,
}

pub fn aggregate(label: &str, algorithm: &str, runs: &[RunSummary]) -> ArmAggregate {
    let n = runs.len() as f64;
    let mean = |f: fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let events: u64 = runs.iter().map(|r| r.change_events).sum();
    let losses: u64 = runs.iter().map(|r| r.change_losses).sum();
    ArmAggregate {
        label: label.into(),
        algorithm: algorithm.into(),
        replicates: runs.len(),
        mean_hit_fraction: mean(|r| r.hit_fraction),
        mean_tail_hit_fraction: mean(|r| r.tail_hit_fraction),
        mean_tracking_min: mean(|r| r.tracking_min),
        tracking_runs: runs.iter().filter(|r| r.tracks).count(),
        loss_free_runs: runs.iter().filter(|r| r.loss_episodes == 0).count(),
        runs_with_unrecovered_loss: runs.iter().filter(|r| r.unrecovered_losses > 0).count(),
        change_loss_rate: if events == 0 { f64::NAN } else { losses as f64 / events as f64 },
        min_in_opt_fraction: runs.iter().map(|r| r.min_in_opt_fraction).fold(f64::INFINITY, f64::min),
    }
}

/// Mean in-OPT fraction across replicates at one generation, with a 95% band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub generation: u64,
    pub clock: u64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestArm {
    #[serde(flatten)]
    pub arm: ResolvedArm,
    pub algorithm_seed: u64,
    pub evaluations: u64,
    pub dropped_evaluations: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub params: MhbParams,
    pub function_seed: u64,
    pub arms: Vec<ManifestArm>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub label: String,
    pub spec: AlgorithmSpec,
    pub runs: Vec<RunSummary>,
    pub series: Vec<SeriesPoint>,
    pub aggregate: ArmAggregate,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub arms: Vec<ArmResult>,
}

struct RunOutput {
    summary: RunSummary,
    fractions: Vec<(u64, u64, f64)>,
}

fn run_file(arm: &str, rep: u32, kind: &str) -> String {
    format!("{arm}/rep-{rep:04}.{kind}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn summary_rows<'a>(gens: impl Iterator<Item = &'a GenerationSummary> + 'a) -> impl Iterator<Item = Vec<String>> + 'a {
    gens.map(|g| {
        vec![
            g.generation.to_string(),
            g.clock.to_string(),
            g.in_opt_count.to_string(),
            fmt_f64(g.in_opt_fraction()),
            g.dist_best_to_target.map_or(String::new(), |d| d.to_string()),
        ]
    })
}

const SUMMARY_HEADER: [&str; 5] = ["generation", "clock", "in_opt_count", "in_opt_fraction", "dist_best_to_target"];

fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let rows = trace.records.iter().map(|r| {
        vec![
            r.t.to_string(),
            r.eval_time.to_string(),
            r.point.to_hex(),
            fmt_f64(r.value),
            r.was_optimal.to_string(),
            r.generation.to_string(),
        ]
    });
    write_csv(path, &["t", "i_t", "point", "value", "was_optimal", "generation"], rows)
}

/// Runs one replicate of one arm against a fresh function.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    params: &MhbParams,
    arm: &ResolvedArm,
    arm_seed: u64,
    function_seed: u64,
    rep: u32,
    record_points: bool,
) -> Result<(Trace, MhbInstance)> {
    let mut f = MhbInstance::new(*params, RngStream::new(function_seed, rep as u64))?;
    let mut rng = RngStream::new(arm_seed, rep as u64);
    let options = TraceOptions { record_points };
    let trace = match &arm.spec {
        AlgorithmSpec::Single { mutation } => {
            let x0 = initial_points(&f, cfg.init, 1, &mut rng)?.remove(0);
            run_single(&mut f, mutation, x0, cfg.budget, options, &mut rng)?
        }
        AlgorithmSpec::Population { lambda, selection, mutation } => {
            let p0 = initial_points(&f, cfg.init, *lambda, &mut rng)?;
            run_population(&mut f, selection, mutation, p0, cfg.budget, options, &mut rng)?
        }
    };
    trace.check()?;
    for w in f.history().windows(2) {
        if hamming(&w[0].1, &w[1].1)? != params.l {
            return invalid(format!("target change at time {} did not move exactly l bits", w[1].0));
        }
    }
    Ok((trace, f))
}

/// Per-run metrics of a finished trace.
pub fn summarize(cfg: &ExperimentConfig, arm: &ResolvedArm, trace: &Trace, f: &MhbInstance, rep: u32) -> Result<RunSummary> {
    let evaluations = trace.meta.evaluations;
    let tracking = tracking_score(trace, arm.window, arm.t0, cfg.report.c_prime)?;
    let tail_start = (evaluations as f64 * (1.0 - cfg.report.tail)).floor() as usize;
    let losses = loss_events(trace, f, cfg.report.gamma0)?;
    let hits = trace.hits.iter().filter(|&&h| h).count();
    Ok(RunSummary {
        replicate: rep,
        evaluations,
        dropped_evaluations: trace.meta.dropped_evaluations,
        changes: f.history().iter().skip(1).filter(|(t, _)| *t < evaluations).count() as u64,
        hit_fraction: hits as f64 / evaluations as f64,
        tail_hit_fraction: hit_fraction_from(trace, tail_start),
        tracking_min: tracking.min,
        tracking_mean: tracking.mean,
        tracks: tracking.tracks,
        min_in_opt_fraction: trace.generations[1..]
            .iter()
            .map(|g| g.in_opt_fraction())
            .fold(f64::INFINITY, f64::min),
        loss_episodes: losses.episodes.len() as u64,
        unrecovered_losses: losses.unrecovered as u64,
        change_events: losses.change_events,
        change_losses: losses.change_losses,
    })
}

fn series(runs: &[RunOutput]) -> Vec<SeriesPoint> {
    let z = z_score(0.95);
    let len = runs.iter().map(|r| r.fractions.len()).min().unwrap_or(0);
    let k = runs.len() as f64;
    (0..len)
        .map(|i| {
            let (generation, clock, _) = runs[0].fractions[i];
            let vals: Vec<f64> = runs.iter().map(|r| r.fractions[i].2).collect();
            let mean = vals.iter().sum::<f64>() / k;
            let half = if runs.len() > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
                z * (var / k).sqrt()
            } else {
                0.0
            };
            SeriesPoint {
                generation,
                clock,
                mean,
                lo: (mean - half).max(0.0),
                hi: (mean + half).min(1.0),
            }
        })
        .collect()
}

/// Runs every replicate of every arm and writes the output bundle.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let resolved = cfg.resolve()?;
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::InvalidInput("out_dir: no output directory given".into()))?;
    fs::create_dir_all(&out_dir)?;
    for arm in &resolved.arms {
        fs::create_dir_all(out_dir.join(&arm.label))?;
    }
    let function_seed = RngStream::derive_seed(cfg.seed, FUNCTION_LABEL);
    let arm_seeds: Vec<u64> = (0..resolved.arms.len())
        .map(|i| RngStream::derive_seed(cfg.seed, 1 + i as u64))
        .collect();
    let jobs: Vec<(usize, u32)> = (0..resolved.arms.len())
        .flat_map(|a| (0..cfg.replicates).map(move |r| (a, r)))
        .collect();

    let outputs: Vec<Result<RunOutput>> = jobs
        .par_iter()
        .map(|&(a, rep)| {
            let arm = &resolved.arms[a];
            let (trace, f) = run_replicate(cfg, &resolved.params, arm, arm_seeds[a], function_seed, rep, cfg.write_trace)?;
            let summary = summarize(cfg, arm, &trace, &f, rep)?;
            let kept: Vec<&GenerationSummary> = trace
                .generations
                .iter()
                .filter(|g| g.clock % cfg.summary_stride == 0)
                .collect();
            write_csv(
                &out_dir.join(run_file(&arm.label, rep, "summary.csv")),
                &SUMMARY_HEADER,
                summary_rows(kept.iter().copied()),
            )?;
            if cfg.write_trace {
                write_trace(&out_dir.join(run_file(&arm.label, rep, "trace.csv")), &trace)?;
                write_json(&out_dir.join(run_file(&arm.label, rep, "meta.json")), &trace.meta)?;
            }
            Ok(RunOutput {
                summary,
                fractions: kept.iter().map(|g| (g.generation, g.clock, g.in_opt_fraction())).collect(),
            })
        })
        .collect();

    let mut per_arm: Vec<Vec<RunOutput>> = (0..resolved.arms.len()).map(|_| Vec::new()).collect();
    for ((a, _), out) in jobs.iter().zip(outputs) {
        per_arm[*a].push(out?);
    }

    let mut files = Vec::new();
    let mut arms = Vec::new();
    let mut manifest_arms = Vec::new();
    for ((arm, runs), seed) in resolved.arms.iter().zip(per_arm).zip(&arm_seeds) {
        let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
        write_csv(
            &out_dir.join(&arm.label).join("runs.csv"),
            &RUN_HEADER,
            summaries.iter().map(|s| s.record()),
        )?;
        let pts = series(&runs);
        write_csv(
            &out_dir.join(&arm.label).join("in_opt_series.csv"),
            &["generation", "clock", "mean", "lo", "hi"],
            pts.iter().map(|p| {
                vec![
                    p.generation.to_string(),
                    p.clock.to_string(),
                    fmt_f64(p.mean),
                    fmt_f64(p.lo),
                    fmt_f64(p.hi),
                ]
            }),
        )?;
        files.push(format!("{}/runs.csv", arm.label));
        files.push(format!("{}/in_opt_series.csv", arm.label));
        for rep in 0..cfg.replicates {
            files.push(run_file(&arm.label, rep, "summary.csv"));
            if cfg.write_trace {
                files.push(run_file(&arm.label, rep, "trace.csv"));
                files.push(run_file(&arm.label, rep, "meta.json"));
            }
        }
        let first = &summaries[0];
        manifest_arms.push(ManifestArm {
            arm: arm.clone(),
            algorithm_seed: *seed,
            evaluations: first.evaluations,
            dropped_evaluations: first.dropped_evaluations,
        });
        let agg = aggregate(&arm.label, &arm.spec.to_string(), &summaries);
        arms.push(ArmResult {
            label: arm.label.clone(),
            spec: arm.spec.clone(),
            runs: summaries,
            series: pts,
            aggregate: agg,
        });
    }
    let aggregates: Vec<&ArmAggregate> = arms.iter().map(|a| &a.aggregate).collect();
    write_json(&out_dir.join("aggregate.json"), &aggregates)?;
    files.push("aggregate.json".into());
    let manifest = Manifest {
        tool: "dyntrack".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        params: resolved.params,
        function_seed,
        arms: manifest_arms,
        warnings: resolved.warnings,
        files,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(ExperimentOutput { out_dir, manifest, arms })
}

/// Parses a `runs.csv` written by [`run_experiment`].
pub fn read_runs(path: &Path) -> Result<Vec<RunSummary>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(RUN_HEADER.iter().copied()) {
        return Err(Error::Schema {
            row: 0,
            column: "header".into(),
            message: format!("expected columns {}", RUN_HEADER.join(",")),
        });
    }
    let mut runs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let get = |c: usize| -> Result<&str> {
            rec.get(c).ok_or_else(|| Error::Schema {
                row,
                column: RUN_HEADER[c].into(),
                message: "missing value".into(),
            })
        };
        fn parse<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Schema {
                row,
                column: col.into(),
                message: format!("cannot parse `{s}`"),
            })
        }
        let p = |c: usize| -> Result<f64> { parse(get(c)?, row, RUN_HEADER[c]) };
        let u = |c: usize| -> Result<u64> { parse(get(c)?, row, RUN_HEADER[c]) };
        runs.push(RunSummary {
            replicate: parse(get(0)?, row, RUN_HEADER[0])?,
            evaluations: u(1)?,
            dropped_evaluations: u(2)?,
            changes: u(3)?,
            hit_fraction: p(4)?,
            tail_hit_fraction: p(5)?,
            tracking_min: p(6)?,
            tracking_mean: p(7)?,
            tracks: parse(get(8)?, row, RUN_HEADER[8])?,
            min_in_opt_fraction: p(9)?,
            loss_episodes: u(10)?,
            unrecovered_losses: u(11)?,
            change_events: u(12)?,
            change_losses: u(13)?,
        });
    }
    Ok(runs)
}
