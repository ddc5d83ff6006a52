use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use dyntrack::algorithms::{run_single, TraceOptions};
use dyntrack::analysis::{
    border_distance_series, drift_constants, drift_estimate, occupancy_fraction, ruin_probability_closed,
    ruin_probability_simulated, solve_ruin_chain,
};
use dyntrack::dynamics::{stability_bound, stability_estimate};
use dyntrack::harness::{emit_plot, preset, run_experiment, ExperimentConfig, PlotSpec, SeriesInput};
use dyntrack::operators::{beta_closed_form, beta_empirical, beta_condition_gamma0, pressure_satisfied};
use dyntrack::{verify, Error, MhbInstance, MhbParams, MutationOp, RngStream, SelectionSpec};

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "dyntrack", version, about = "Evolutionary algorithms tracking a moving Hamming ball")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file, a manifest or a preset.
    Run(RunArgs),
    /// Closed-form stability bound, optionally with a Monte Carlo estimate.
    Stability(StabilityArgs),
    /// Cumulative selection probability of a selection mechanism.
    Beta(BetaArgs),
    /// Ruin probabilities of the border-distance chain.
    Ruin(RuinArgs),
    /// One-step drift of the distance to the border in a frozen ball.
    Drift(DriftArgs),
    /// Fraction of time a (1+1) EA spends on the border of a frozen ball.
    Occupancy(OccupancyArgs),
    /// Render CSV series as an SVG line chart.
    Plot(PlotArgs),
    /// Run the acceptance checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config or manifest (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $DYNTRACK_OUT/<name> or runs/<name>].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<u32>,
    /// Evaluations per run.
    #[arg(long)]
    budget: Option<u64>,
}

#[derive(Args)]
struct BallArgs {
    #[arg(long)]
    n: usize,
    /// Ball radius as a fraction of n.
    #[arg(long)]
    b: f64,
    #[arg(long, default_value_t = 1)]
    l: usize,
    /// Mean time between changes; omit for a frozen target.
    #[arg(long)]
    theta: Option<f64>,
}

impl BallArgs {
    fn params(&self) -> dyntrack::Result<MhbParams> {
        MhbParams::with_fraction(self.n, self.b, self.l, self.theta.unwrap_or(f64::INFINITY))
    }
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    ball: BallArgs,
    #[arg(long, default_value_t = 1.0)]
    chi: f64,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    d: f64,
    /// Monte Carlo trials; 0 skips the estimate.
    #[arg(long, default_value_t = 0)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct BetaArgs {
    /// e.g. `tournament:k=5`, `mu-comma-lambda:mu=10`, `exponential-ranking:eta=2`.
    #[arg(long)]
    selection: SelectionSpec,
    #[arg(long)]
    lambda: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 0.5, 1.0])]
    gamma: Vec<f64>,
    /// Samples per gamma; 0 reports the closed form only.
    #[arg(long, default_value_t = 0)]
    samples: u64,
    /// Stability rho for the pressure diagnostics.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct RuinArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    d: usize,
    /// Starting distance; all interior states when omitted.
    #[arg(long)]
    x: Option<usize>,
    /// Simulated walks at each reported state; 0 skips simulation.
    #[arg(long, default_value_t = 0)]
    walks: u64,
    #[arg(long, default_value = "single-bit")]
    mutation: MutationOp,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct DriftArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    b: f64,
    /// Distances to the border.
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 3, 4, 5])]
    state: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value = "bitwise:chi=1")]
    mutation: MutationOp,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct OccupancyArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    b: f64,
    #[arg(long, default_value_t = 1_000_000)]
    steps: usize,
    #[arg(long, default_value_t = 10_000)]
    burn_in: usize,
    #[arg(long, default_value = "bitwise:chi=1")]
    mutation: MutationOp,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    /// CSV inputs as `path` or `label=path`; one series each.
    #[arg(required = true)]
    inputs: Vec<String>,
    #[arg(long, default_value = "generation")]
    x: String,
    #[arg(long, default_value = "mean")]
    y: String,
    /// Band columns as `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    band: Option<Vec<String>>,
    /// Clamp the y axis to [0, 1].
    #[arg(long)]
    fraction: bool,
    #[arg(long, default_value = "")]
    title: String,
    /// Output SVG; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Criteria to run (1-9); all when omitted.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
}

enum Failure {
    Lib(Error),
    Verify,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?);
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => unreachable!("clap requires one of --config/--preset"),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    if let Some(out) = a.out {
        cfg.out_dir = Some(out);
    } else if cfg.out_dir.is_none() {
        let root = std::env::var_os("DYNTRACK_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        cfg.out_dir = Some(root.join(&cfg.name));
    }
    let out = run_experiment(&cfg)?;
    for w in &out.manifest.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{:<24} {:>5} {:>9} {:>9} {:>8} {:>9} {:>10}",
        "arm", "runs", "hit", "tail-hit", "tracks", "loss-free", "min-in-opt"
    );
    for arm in &out.arms {
        let g = &arm.aggregate;
        println!(
            "{:<24} {:>5} {:>9.4} {:>9.4} {:>8} {:>9} {:>10.3}",
            g.label,
            g.replicates,
            g.mean_hit_fraction,
            g.mean_tail_hit_fraction,
            g.tracking_runs,
            g.loss_free_runs,
            g.min_in_opt_fraction
        );
    }
    println!("wrote {}", out.out_dir.display());
    Ok(())
}

fn cmd_stability(a: StabilityArgs) -> Result<(), Failure> {
    let params = a.ball.params()?;
    let bound = stability_bound(&params, a.chi, a.epsilon, a.d)?;
    let estimate = if a.trials > 0 {
        let op = MutationOp::bitwise(a.chi)?;
        let mut rng = RngStream::new(a.seed, 0);
        Some(stability_estimate(&params, &op, bound.kappa as u64, a.trials, &mut rng)?)
    } else {
        None
    };
    print_json(&json!({ "params": params, "bound": bound, "estimate": estimate }))
}

fn cmd_beta(a: BetaArgs) -> Result<(), Failure> {
    a.selection.validate_for(a.lambda)?;
    let mut rng = RngStream::new(a.seed, 0);
    let mut rows = Vec::new();
    for &gamma in &a.gamma {
        let exact = beta_closed_form(&a.selection, gamma, a.lambda)?;
        let empirical = if a.samples > 0 {
            Some(beta_empirical(&a.selection, a.lambda, gamma, a.samples, &mut rng)?)
        } else {
            None
        };
        rows.push(json!({ "gamma": gamma, "closed_form": exact, "empirical": empirical }));
    }
    let pressure = match a.rho {
        Some(rho) => Some(json!({
            "rho": rho,
            "delta": a.delta,
            "pressure": a.selection.pressure(a.lambda),
            "satisfied": pressure_satisfied(&a.selection, a.lambda, rho, a.delta),
            "gamma0": beta_condition_gamma0(&a.selection, a.lambda, rho, a.delta)?,
        })),
        None => None,
    };
    print_json(&json!({
        "selection": a.selection.to_string(),
        "lambda": a.lambda,
        "beta": rows,
        "pressure": pressure,
    }))
}

fn cmd_ruin(a: RuinArgs) -> Result<(), Failure> {
    let sol = solve_ruin_chain(a.r, a.d, a.n)?;
    let states: Vec<usize> = match a.x {
        Some(x) => vec![x],
        None => (a.r + 1..a.r + a.d).collect(),
    };
    let mut rng = RngStream::new(a.seed, 0);
    let mut rows = Vec::new();
    for x in states {
        let exact = sol.at(x);
        let closed = ruin_probability_closed(a.r, a.d, a.n, x).ok();
        let simulated = if a.walks > 0 {
            Some(ruin_probability_simulated(a.r, a.d, a.n, x, &a.mutation, a.walks, &mut rng)?)
        } else {
            None
        };
        rows.push(json!({ "x": x, "exact": exact, "closed_form": closed, "simulated": simulated }));
    }
    print_json(&json!({
        "n": a.n, "r": a.r, "d": a.d,
        "residual": sol.residual,
        "states": rows,
    }))
}

fn cmd_drift(a: DriftArgs) -> Result<(), Failure> {
    let params = MhbParams::with_fraction(a.n, a.b, 1, f64::INFINITY)?;
    let mut rng = RngStream::new(a.seed, 0);
    let mut rows = Vec::new();
    for &i in &a.state {
        let e = drift_estimate(&params, &a.mutation, i, a.samples, &mut rng)?;
        let meets = e.meets_bound(3.0);
        rows.push(json!({ "estimate": e, "meets_bound_3sigma": meets }));
    }
    print_json(&json!({ "params": params, "mutation": a.mutation.to_string(), "states": rows }))
}

fn cmd_occupancy(a: OccupancyArgs) -> Result<(), Failure> {
    let params = MhbParams::with_fraction(a.n, a.b, 1, f64::INFINITY)?;
    let (delta, eta) = drift_constants(&a.mutation, params.b(), 0.0)?;
    let mut f = MhbInstance::new(params, RngStream::new(a.seed, 0))?;
    let mut rng = RngStream::new(a.seed, 1);
    let x0 = f.target_at(0)?.clone();
    let budget = 2 * (a.burn_in + a.steps) as u64;
    let trace = run_single(&mut f, &a.mutation, x0, budget, TraceOptions::default(), &mut rng)?;
    let states = border_distance_series(&trace, params.r)?;
    let report = occupancy_fraction(&states[a.burn_in..a.burn_in + a.steps], delta, eta)?;
    print_json(&json!({ "params": params, "delta": delta, "eta": eta, "report": report }))
}

fn cmd_plot(a: PlotArgs) -> Result<(), Failure> {
    let mut loaded = Vec::new();
    for input in &a.inputs {
        let (label, path) = match input.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(input);
                let label = p.parent().and_then(|d| d.file_name()).map_or_else(
                    || input.clone(),
                    |d| d.to_string_lossy().into_owned(),
                );
                (label, p)
            }
        };
        loaded.push((label, fs::read_to_string(&path)?));
    }
    let inputs: Vec<SeriesInput<'_>> = loaded.iter().map(|(label, csv)| SeriesInput { label, csv }).collect();
    let mut spec = PlotSpec::new(&a.x, &a.y);
    spec.title = a.title;
    spec.fraction = a.fraction;
    spec.band = match a.band.as_deref() {
        None => None,
        Some([lo, hi]) => Some((lo.clone(), hi.clone())),
        Some(_) => return Err(Error::InvalidInput("--band takes two columns: lo,hi".into()).into()),
    };
    let svg = emit_plot(&inputs, &spec)?;
    match a.out {
        Some(path) => fs::write(path, svg)?,
        None => print!("{svg}"),
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    for id in &a.only {
        if !verify::CRITERIA.contains(&id.as_str()) {
            return Err(Error::InvalidInput(format!("unknown criterion `{id}` (expected 1-9)")).into());
        }
    }
    let outcomes = verify::run(&a.only, |o| println!("{o}"));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        return Err(Failure::Verify);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Beta(a) => cmd_beta(a),
        Command::Ruin(a) => cmd_ruin(a),
        Command::Drift(a) => cmd_drift(a),
        Command::Occupancy(a) => cmd_occupancy(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify) => ExitCode::from(EXIT_VERIFY),
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION })
        }
    }
}
