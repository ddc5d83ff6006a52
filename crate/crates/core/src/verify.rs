//! The acceptance suite: one check per criterion, each with fixed seeds and
//! the tolerance stated for it. Shared by `dyntrack verify` and the
//! `acceptance` test target.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::algorithms::{run_single, TraceOptions};
use crate::analysis::{
    border_distance_series, drift_constants, drift_estimate, occupancy_fraction, point_occupancy_bound,
    ruin_probability_closed, ruin_probability_simulated, solve_ruin_chain,
};
use crate::bits::{all_ones, Bitstring};
use crate::dynamics::{multi_change_bound, stability_bound, stability_estimate, MhbInstance, MhbParams};
use crate::error::Result;
use crate::harness::config::{preset, AlgorithmConfig, ArmConfig, ExperimentConfig, FunctionConfig, ReportConfig};
use crate::harness::experiment::{run_experiment, FUNCTION_LABEL, run_replicate, summarize, RunSummary};
use crate::operators::{beta_closed_form, beta_empirical, MutationOp, SelectionSpec};
use crate::stats::{chi_square_test, ln_binomial, poisson_cdf, poisson_tail_bound, RngStream};

/// Outcome of one acceptance check.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub id: String,
    pub title: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn outcome(id: &str, title: &str, start: Instant, result: Result<(bool, String)>) -> Outcome {
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome {
        id: id.into(),
        title: title.into(),
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

/// Identifiers accepted by [`run`].
pub const CRITERIA: [&str; 9] = ["1", "2", "3", "4", "5", "6", "7", "8", "9"];

/// Runs the selected criteria (all when `only` is empty), calling `report`
/// as each outcome becomes available.
pub fn run(only: &[String], mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let want = |id: &str| only.is_empty() || only.iter().any(|o| o == id);
    let mut all = Vec::new();
    let mut push = |o: Outcome| {
        report(&o);
        all.push(o);
    };
    if want("1") {
        push(selection_beta());
    }
    if want("2") {
        push(mutation_transition());
    }
    if want("3") {
        push(gamblers_ruin());
    }
    if want("4") {
        push(poisson_tail());
    }
    if want("5") {
        push(stability());
    }
    if want("6") {
        push(drift());
    }
    if want("7") {
        push(occupancy());
    }
    if want("8") {
        for o in headline_contrast() {
            push(o);
        }
    }
    if want("9") {
        push(replay());
    }
    all
}

/// Criterion 1: empirical cumulative selection probability within 3 sigma of
/// the closed form on the mechanism grid.
pub fn selection_beta() -> Outcome {
    let start = Instant::now();
    let lambda = 100;
    let samples = 1_000_000;
    let r = (|| {
        let mut specs: Vec<SelectionSpec> = [2, 5, 33].iter().map(|&k| SelectionSpec::Tournament { k }).collect();
        specs.extend([lambda / 10, lambda / 4].iter().map(|&mu| SelectionSpec::MuCommaLambda { mu }));
        let etas = [1.5, 2.0, 5.0, 33.0];
        let mut skipped = 0;
        for &eta in &etas {
            if eta <= 2.0 {
                specs.push(SelectionSpec::LinearRanking { eta });
            } else {
                skipped += 1;
            }
            specs.push(SelectionSpec::ExponentialRanking { eta });
        }
        let mut rng = RngStream::new(0xB37A, 1);
        let (mut worst, mut worst_at, mut fails, mut cells) = (0.0f64, String::new(), 0, 0);
        for spec in &specs {
            for &gamma in &[0.1, 0.3, 0.5, 1.0] {
                let exact = beta_closed_form(spec, gamma, lambda)?;
                let est = beta_empirical(spec, lambda, gamma, samples, &mut rng)?;
                let sigma = (exact * (1.0 - exact) / samples as f64).sqrt();
                let dev = (est.mean - exact).abs();
                let z = if sigma > 0.0 { dev / sigma } else if dev == 0.0 { 0.0 } else { f64::INFINITY };
                cells += 1;
                if z > 3.0 {
                    fails += 1;
                }
                if z > worst {
                    worst = z;
                    worst_at = format!("{spec} gamma={gamma}");
                }
            }
        }
        Ok((
            fails == 0,
            format!(
                "{cells} cells, {fails} beyond 3 sigma, worst |z| = {worst:.2} at {worst_at}; \
                 linear ranking with eta > 2 is not a valid mechanism ({skipped} eta values skipped)"
            ),
        ))
    })();
    outcome("1", "selection beta oracle", start, r)
}

/// Criterion 2: transition probabilities sum to one and the flip count is
/// Binomial(64, 1/64).
pub fn mutation_transition() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let op = MutationOp::default();
        let n = 12;
        let mut worst = 0.0f64;
        let starts: Vec<Bitstring> = vec![Bitstring::zeros(n)?, all_ones(n)?, "101100111000".parse()?];
        for x in &starts {
            let mut total = 0.0;
            for m in 0..(1u32 << n) {
                let bits: Vec<bool> = (0..n).map(|i| m >> i & 1 == 1).collect();
                total += op.transition_prob(x, &Bitstring::from_bits(&bits)?)?;
            }
            worst = worst.max((total - 1.0).abs());
        }
        let mut rng = RngStream::new(0xF11B, 2);
        let x = all_ones(64)?;
        let mut counts = vec![0u64; 65];
        for _ in 0..1_000_000 {
            counts[op.mutate(&x, &mut rng).distance_unchecked(&x)] += 1;
        }
        let p = 1.0f64 / 64.0;
        let probs: Vec<f64> = (0..=64u64)
            .map(|k| (ln_binomial(64, k) + k as f64 * p.ln() + (64 - k) as f64 * (-p).ln_1p()).exp())
            .collect();
        let test = chi_square_test(&counts, &probs)?;
        Ok((
            worst <= 1e-10 && test.p_value > 1e-6,
            format!(
                "max |sum - 1| = {worst:.2e} over {} starts; flip-count chi-square {:.2} on {} dof, p = {:.4}",
                starts.len(),
                test.statistic,
                test.dof,
                test.p_value
            ),
        ))
    })();
    outcome("2", "mutation transition", start, r)
}

/// Criterion 3: the ruin chain solves to residual below 1e-12, stays below the
/// closed form, agrees with simulated single-bit walks, and scales as
/// `max(r, log n)/n`.
pub fn gamblers_ruin() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let mut rng = RngStream::new(0x5A1E, 3);
        let (mut max_res, mut above, mut sim_fail, mut worst_z, mut points) = (0.0f64, 0, 0, 0.0f64, 0);
        let mut closed_checked = 0;
        for n in [16usize, 32, 64, 128, 256] {
            let mut rs = vec![1, (n / 20).max(1)];
            rs.dedup();
            let mut ds = vec![2, n / 4];
            ds.dedup();
            for &r in &rs {
                for &d in &ds {
                    points += 1;
                    let sol = solve_ruin_chain(r, d, n)?;
                    max_res = max_res.max(sol.residual);
                    if 2 * (d + r) < n {
                        for x in r + 1..r + d {
                            closed_checked += 1;
                            if sol.at(x) > ruin_probability_closed(r, d, n, x)? + 1e-15 {
                                above += 1;
                            }
                        }
                    }
                    let exact = sol.at(r + 1);
                    let est = ruin_probability_simulated(r, d, n, r + 1, &MutationOp::SingleBit, 100_000, &mut rng)?;
                    let sigma = (exact * (1.0 - exact) / 100_000.0).sqrt();
                    let z = (est.mean - exact).abs() / sigma;
                    worst_z = worst_z.max(z);
                    if z > 3.0 {
                        sim_fail += 1;
                    }
                }
            }
        }
        let mut max_ratio = 0.0f64;
        for n in [64usize, 128, 256] {
            for r in [1, (n / 20).max(1)] {
                let d = n / 4;
                let p = solve_ruin_chain(r, d, n)?.at(r + 1);
                max_ratio = max_ratio.max(p * n as f64 / (r as f64).max((n as f64).ln()));
            }
        }
        Ok((
            max_res < 1e-12 && above == 0 && sim_fail == 0 && max_ratio <= 10.0,
            format!(
                "{points} grid points: max residual {max_res:.1e}; exact above closed form at {above} of \
                 {closed_checked} states; simulation worst |z| = {worst_z:.2} ({sim_fail} beyond 3 sigma); \
                 max exact(r+1, n/4) n / max(r, ln n) = {max_ratio:.3}"
            ),
        ))
    })();
    outcome("3", "gambler's ruin", start, r)
}

/// Criterion 4: Poisson lower tail below its Chernoff-type bound.
pub fn poisson_tail() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let (mut checked, mut violations, mut tightest) = (0, 0, 0.0f64);
        for theta in [5.0f64, 10.0, 20.0, 50.0] {
            for x in 1..theta as u64 {
                let cdf = poisson_cdf(theta, x as f64);
                let bound = poisson_tail_bound(theta, x as f64)?;
                checked += 1;
                if cdf > bound * (1.0 + 1e-12) {
                    violations += 1;
                }
                tightest = tightest.max(cdf / bound);
            }
        }
        Ok((
            violations == 0,
            format!("{checked} (theta, x) pairs, {violations} violations, max cdf/bound = {tightest:.4}"),
        ))
    })();
    outcome("4", "poisson tail bound", start, r)
}

/// Criterion 5: Monte Carlo stability against the closed-form bound.
pub fn stability() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let params = MhbParams::with_fraction(100, 0.3, 1, 500.0)?;
        let bound = stability_bound(&params, 1.0, None, 1.0)?;
        let mut rng = RngStream::new(0x57AB, 5);
        let est = stability_estimate(&params, &MutationOp::default(), bound.kappa as u64, 100_000, &mut rng)?;
        let rho_ok = est.rho_hat.mean >= bound.rho - 3.0 * est.rho_hat.std_err;
        let multi_limit = multi_change_bound(bound.kappa, 1.0) + 3.0 * est.multi_change.std_err;
        let multi_ok = est.multi_change.mean <= multi_limit;
        let classes: Vec<String> = est
            .classes
            .iter()
            .map(|c| format!("l'={}: {:.4} (n={})", c.excess, c.estimate.mean, c.estimate.samples))
            .collect();
        Ok((
            rho_ok && multi_ok,
            format!(
                "kappa = {}, rho_hat = {:.4} +- {:.4} vs rho = {:.4}; classes [{}]; multi-change {:.2e} vs bound {:.2e}",
                est.kappa,
                est.rho_hat.mean,
                est.rho_hat.std_err,
                bound.rho,
                classes.join(", "),
                est.multi_change.mean,
                multi_limit
            ),
        ))
    })();
    outcome("5", "stability", start, r)
}

/// Criterion 6: interior drift at least delta, border drift at least -eta.
pub fn drift() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let params = MhbParams::with_fraction(200, 0.05, 1, f64::INFINITY)?;
        let mut rng = RngStream::new(0xD21F, 6);
        let mut ok = true;
        let mut parts = Vec::new();
        let mut bounds = (0.0, 0.0);
        for i in [0usize, 1, 2, 3, 4, 5] {
            let e = drift_estimate(&params, &MutationOp::default(), i, 100_000, &mut rng)?;
            ok &= e.meets_bound(3.0);
            bounds = (e.delta, e.eta);
            parts.push(format!("i={i}: {:.4}+-{:.4}", e.estimate.mean, e.estimate.std_err));
        }
        Ok((
            ok,
            format!("delta = {:.5}, eta = {:.3}; {}", bounds.0, bounds.1, parts.join(", ")),
        ))
    })();
    outcome("6", "drift constants", start, r)
}

/// Criterion 7: the (1+1) EA in a frozen ball spends at least
/// `delta/(2(delta+eta)) - 0.05` of its steps on the border.
pub fn occupancy() -> Outcome {
    let start = Instant::now();
    let r = (|| {
        let params = MhbParams::with_fraction(200, 0.05, 1, f64::INFINITY)?;
        let op = MutationOp::default();
        let (delta, eta) = drift_constants(&op, params.b(), 0.0)?;
        let floor = point_occupancy_bound(delta, eta) - 0.05;
        let (burn, steps) = (10_000usize, 1_000_000usize);
        let mut fractions = Vec::new();
        for seed in 0..10u64 {
            let mut f = MhbInstance::new(params, RngStream::new(0x0CC0 + seed, 0))?;
            let mut rng = RngStream::new(0x0CC0 + seed, 1);
            let trace = run_single(&mut f, &op, all_ones(params.n)?, 2 * (burn + steps) as u64, TraceOptions::default(), &mut rng)?;
            let states = border_distance_series(&trace, params.r)?;
            let rep = occupancy_fraction(&states[burn..burn + steps], delta, eta)?;
            fractions.push(rep.fraction);
        }
        let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        Ok((
            min >= floor,
            format!("border fraction min {min:.4}, mean {mean:.4} over 10 seeds vs floor {floor:.4}"),
        ))
    })();
    outcome("7", "border occupancy", start, r)
}

fn contrast_runs(cfg: &ExperimentConfig) -> Result<Vec<(String, Vec<RunSummary>)>> {
    let resolved = cfg.resolve()?;
    let function_seed = RngStream::derive_seed(cfg.seed, FUNCTION_LABEL);
    resolved
        .arms
        .iter()
        .enumerate()
        .map(|(a, arm)| {
            let arm_seed = RngStream::derive_seed(cfg.seed, 1 + a as u64);
            let runs = (0..cfg.replicates)
                .into_par_iter()
                .map(|rep| {
                    let (trace, f) = run_replicate(cfg, &resolved.params, arm, arm_seed, function_seed, rep, false)?;
                    summarize(cfg, arm, &trace, &f, rep)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((arm.label.clone(), runs))
        })
        .collect()
}

/// Criterion 8: the (1+1) EA loses the moving ball while populations with
/// enough selection pressure keep tracking it.
pub fn headline_contrast() -> Vec<Outcome> {
    let start = Instant::now();
    let cfg = match preset("moving-ball-contrast") {
        Ok(c) => c,
        Err(e) => return vec![outcome("8", "headline contrast", start, Err(e))],
    };
    let runs = match contrast_runs(&cfg) {
        Ok(r) => r,
        Err(e) => return vec![outcome("8", "headline contrast", start, Err(e))],
    };
    let seeds = cfg.replicates as usize;
    let mut outs = Vec::new();
    for (label, runs) in runs {
        if label == "one-plus-one" {
            let good = runs
                .iter()
                .filter(|r| r.tail_hit_fraction <= 0.01 && r.unrecovered_losses >= 1)
                .count();
            let max_tail = runs.iter().map(|r| r.tail_hit_fraction).fold(0.0, f64::max);
            let passed = good as f64 >= 0.90 * seeds as f64;
            outs.push(outcome(
                "8a",
                "(1+1) EA loses the ball",
                start,
                Ok((
                    passed,
                    format!(
                        "{good}/{seeds} seeds with final-half hit rate <= 0.01 and an unrecovered loss (need >= 90%); \
                         max final-half hit rate {max_tail:.4}"
                    ),
                )),
            ));
        } else {
            let good = runs.iter().filter(|r| r.min_in_opt_fraction >= 0.5 && r.tracks).count();
            let in_opt_ok = runs.iter().filter(|r| r.min_in_opt_fraction >= 0.5).count();
            let track_ok = runs.iter().filter(|r| r.tracks).count();
            let loss_free = runs.iter().filter(|r| r.loss_episodes == 0).count();
            let mut mins: Vec<f64> = runs.iter().map(|r| r.min_in_opt_fraction).collect();
            mins.sort_by(f64::total_cmp);
            let mean_hits = runs.iter().map(|r| r.hit_fraction).sum::<f64>() / seeds as f64;
            let passed = good as f64 >= 0.95 * seeds as f64;
            outs.push(outcome(
                &format!("8b-{label}"),
                "population tracks the ball",
                start,
                Ok((
                    passed,
                    format!(
                        "{good}/{seeds} seeds pass (need >= 95%): in-OPT fraction >= 0.5 after the first generation in \
                         {in_opt_ok}, tracking at c'=0.25 in {track_ok}, no total loss in {loss_free}; median min \
                         in-OPT fraction {:.3}; mean hit rate {mean_hits:.3}",
                        mins[seeds / 2]
                    ),
                )),
            ));
        }
    }
    let elapsed = start.elapsed();
    for o in &mut outs {
        o.elapsed = elapsed;
    }
    outs
}

fn scratch_dir(tag: &str) -> PathBuf {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.subsec_nanos());
    std::env::temp_dir().join(format!("dyntrack-{tag}-{}-{nanos}", std::process::id()))
}

fn summary_files(root: &Path) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

/// Small configuration used by the replay check.
pub fn replay_config(out_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        name: "replay".into(),
        function: FunctionConfig {
            n: 50,
            b: 0.1,
            l: 1,
            theta: Some(250.0),
        },
        arms: vec![
            ArmConfig {
                label: "one-plus-one".into(),
                algorithm: AlgorithmConfig::Single {
                    mutation: MutationOp::default(),
                },
            },
            ArmConfig {
                label: "tournament".into(),
                algorithm: AlgorithmConfig::Population {
                    lambda: None,
                    c: Some(5.0),
                    d: Some(1.0),
                    selection: SelectionSpec::Tournament { k: 33 },
                    mutation: MutationOp::default(),
                },
            },
        ],
        budget: 20_000,
        replicates: 3,
        seed: 99,
        out_dir: Some(out_dir.to_path_buf()),
        report: ReportConfig::default(),
        pressure_check: Default::default(),
        pressure_delta: 0.1,
        write_trace: true,
        summary_stride: 1,
        init: Default::default(),
    }
}

/// Criterion 9: rerunning from the manifest reproduces every CSV byte for byte.
pub fn replay() -> Outcome {
    let start = Instant::now();
    let first = scratch_dir("replay-a");
    let second = scratch_dir("replay-b");
    let r = (|| {
        run_experiment(&replay_config(&first))?;
        let mut cfg = ExperimentConfig::load(&first.join("manifest.json"))?;
        cfg.out_dir = Some(second.clone());
        run_experiment(&cfg)?;
        let a = summary_files(&first)?;
        let b = summary_files(&second)?;
        let mut differing = Vec::new();
        for f in &a {
            if fs::read(first.join(f))? != fs::read(second.join(f)).unwrap_or_default() {
                differing.push(f.display().to_string());
            }
        }
        Ok((
            a == b && differing.is_empty() && !a.is_empty(),
            format!(
                "{} CSV files compared, {} differ{}",
                a.len(),
                differing.len(),
                if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
            ),
        ))
    })();
    let _ = fs::remove_dir_all(&first);
    let _ = fs::remove_dir_all(&second);
    outcome("9", "deterministic replay", start, r)
}
