//! The single-individual algorithm with consistent pairwise comparisons and
//! the non-elitist population algorithm with a per-generation static copy.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{sample_in_ball, Bitstring};
use crate::dynamics::{DynamicFunction, MhbInstance};
use crate::error::{invalid, Result};
use crate::operators::{MutationOp, Ranking, SelectionSpec};

/// Which algorithm produced a trace, with its operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlgorithmSpec {
    Single {
        mutation: MutationOp,
    },
    Population {
        lambda: usize,
        selection: SelectionSpec,
        mutation: MutationOp,
    },
}

impl AlgorithmSpec {
    /// Evaluations per iteration or generation.
    pub fn block(&self) -> u64 {
        match self {
            AlgorithmSpec::Single { .. } => 2,
            AlgorithmSpec::Population { lambda, .. } => *lambda as u64,
        }
    }

    pub fn mutation(&self) -> &MutationOp {
        match self {
            AlgorithmSpec::Single { mutation } | AlgorithmSpec::Population { mutation, .. } => mutation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let AlgorithmSpec::Population { lambda, selection, .. } = self {
            selection.validate_for(*lambda)?;
        }
        Ok(())
    }
}

impl fmt::Display for AlgorithmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgorithmSpec::Single { mutation } => write!(f, "single[{mutation}]"),
            AlgorithmSpec::Population {
                lambda,
                selection,
                mutation,
            } => write!(f, "population[lambda={lambda};{selection};{mutation}]"),
        }
    }
}

/// Starting points for a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Every individual at the initial target.
    #[default]
    Center,
    /// Every individual drawn uniformly from the initial ball.
    UniformInBall,
}

/// `count` starting points inside the optimal region at time 0.
pub fn initial_points<R: Rng + ?Sized>(f: &MhbInstance, init: Init, count: usize, rng: &mut R) -> Result<Vec<Bitstring>> {
    let center = f.target_at(0)?.clone();
    match init {
        Init::Center => Ok(vec![center; count]),
        Init::UniformInBall => (0..count).map(|_| sample_in_ball(&center, f.params().r, rng)).collect(),
    }
}

/// One query of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryRecord {
    /// Query time: the clock value consumed by this evaluation.
    pub t: u64,
    /// Time of the function the point was evaluated with.
    pub eval_time: u64,
    pub point: Bitstring,
    pub value: f64,
    /// Whether the point is optimal at the query time `t`.
    pub was_optimal: bool,
    /// Iteration or generation index.
    pub generation: u64,
}

/// State of the incumbent or population at the start of an iteration or
/// generation, measured against the function at `clock`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: u64,
    pub clock: u64,
    pub in_opt_count: usize,
    pub population: usize,
    /// Smallest distance from a member to the target, when defined.
    pub dist_best_to_target: Option<usize>,
}

impl GenerationSummary {
    pub fn in_opt_fraction(&self) -> f64 {
        self.in_opt_count as f64 / self.population as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub algorithm: AlgorithmSpec,
    pub budget: u64,
    /// Evaluations actually performed: `budget` rounded down to whole blocks.
    pub evaluations: u64,
    /// Evaluations left unused because they did not fill a block.
    pub dropped_evaluations: u64,
}

/// Everything observed in one run.
#[derive(Clone, Debug)]
pub struct Trace {
    pub meta: TraceMeta,
    /// `hits[t]`: whether the point queried at time `t` was optimal at `t`.
    pub hits: Vec<bool>,
    /// Full query records; empty unless requested.
    pub records: Vec<QueryRecord>,
    /// One entry per iteration or generation, plus the final state.
    pub generations: Vec<GenerationSummary>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraceOptions {
    /// Keep a `QueryRecord` (with the point) for every query.
    pub record_points: bool,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// Evaluation time used for the query at time `t`.
    pub fn eval_time(&self, t: u64) -> u64 {
        let b = self.meta.algorithm.block();
        b * (t / b)
    }

    /// Checks the structural invariants of the trace.
    pub fn check(&self) -> Result<()> {
        let b = self.meta.algorithm.block();
        if self.hits.len() as u64 != self.meta.evaluations {
            return invalid("hit series length differs from the evaluation count");
        }
        if !self.meta.evaluations.is_multiple_of(b) || self.meta.evaluations + self.meta.dropped_evaluations != self.meta.budget {
            return invalid("budget accounting is inconsistent");
        }
        if !self.records.is_empty() {
            if self.records.len() != self.hits.len() {
                return invalid("record count differs from the hit series length");
            }
            for (k, rec) in self.records.iter().enumerate() {
                let t = k as u64;
                if rec.t != t || rec.eval_time != self.eval_time(t) || rec.eval_time > rec.t {
                    return invalid(format!("record {k} breaks the query-time discipline"));
                }
                if rec.was_optimal != self.hits[k] || rec.generation != t / b {
                    return invalid(format!("record {k} disagrees with the hit series"));
                }
            }
            if let AlgorithmSpec::Single { .. } = self.meta.algorithm {
                // x_{tau+1} is the offspring or the parent; never worse than x_tau on the static copy
                for pair in self.records.chunks(2).collect::<Vec<_>>().windows(2) {
                    let (cur, next) = (pair[0], pair[1]);
                    let kept = if cur[0].value >= cur[1].value { &cur[0] } else { &cur[1] };
                    if next[1].point != kept.point {
                        return invalid(format!("iteration {} kept a point other than the selected one", cur[0].generation));
                    }
                    if kept.value < cur[1].value {
                        return invalid(format!("iteration {} accepted a worse point", cur[0].generation));
                    }
                }
            }
        }
        let expected = self.meta.evaluations / b + 1;
        if self.generations.len() as u64 != expected {
            return invalid("generation summary count is inconsistent");
        }
        for (g, s) in self.generations.iter().enumerate() {
            if s.generation != g as u64 || s.clock != g as u64 * b {
                return invalid(format!("generation summary {g} is misplaced"));
            }
        }
        Ok(())
    }
}

fn split_budget(block: u64, budget: u64) -> Result<(u64, u64)> {
    if budget == 0 {
        return invalid("budget must be positive");
    }
    let blocks = budget / block;
    if blocks == 0 {
        return invalid(format!("budget {budget} is smaller than one block of {block} evaluations"));
    }
    Ok((blocks, budget - blocks * block))
}

fn check_start<F: DynamicFunction>(f: &F, points: &[Bitstring]) -> Result<()> {
    if f.clock() != 0 {
        return invalid(format!("function must be fresh, but its clock is {}", f.clock()));
    }
    for (i, x) in points.iter().enumerate() {
        if !f.is_optimal_at(x, 0)? {
            return invalid(format!("starting point {i} is not optimal at time 0"));
        }
    }
    Ok(())
}

fn summary<F: DynamicFunction>(f: &F, generation: u64, clock: u64, pop: &[Bitstring]) -> Result<GenerationSummary> {
    let mut in_opt = 0;
    let mut best: Option<usize> = None;
    for x in pop {
        if f.is_optimal_at(x, clock)? {
            in_opt += 1;
        }
        if let Some(d) = f.distance_to_target(x, clock)? {
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    Ok(GenerationSummary {
        generation,
        clock,
        in_opt_count: in_opt,
        population: pop.len(),
        dist_best_to_target: best,
    })
}

/// Single-individual algorithm: in iteration `tau`, the offspring and the
/// parent are both evaluated with the function at time `2 tau`, and the
/// offspring replaces the parent unless it is strictly worse.
///
/// With single-bit mutation this is RLS; with bitwise mutation at `chi = 1`
/// it is the (1+1) EA.
pub fn run_single<F: DynamicFunction, R: Rng + ?Sized>(
    f: &mut F,
    op: &MutationOp,
    x0: Bitstring,
    budget: u64,
    options: TraceOptions,
    rng: &mut R,
) -> Result<Trace> {
    op.check_length(f.dimension())?;
    check_start(f, std::slice::from_ref(&x0))?;
    let (iterations, dropped) = split_budget(2, budget)?;
    let evaluations = 2 * iterations;
    let mut hits = Vec::with_capacity(evaluations as usize);
    let mut records = Vec::with_capacity(if options.record_points { evaluations as usize } else { 0 });
    let mut generations = Vec::with_capacity(iterations as usize + 1);
    let mut x = x0;
    for tau in 0..iterations {
        let at = 2 * tau;
        generations.push(summary(f, tau, at, std::slice::from_ref(&x))?);
        let y = op.mutate(&x, rng);
        let v1 = f.evaluate(&y, at)?;
        let y_opt = f.is_optimal_at(&y, at)?;
        let v2 = f.evaluate(&x, at)?;
        let x_opt = f.is_optimal_at(&x, at + 1)?;
        hits.push(y_opt);
        hits.push(x_opt);
        if options.record_points {
            records.push(QueryRecord {
                t: at,
                eval_time: at,
                point: y.clone(),
                value: v1,
                was_optimal: y_opt,
                generation: tau,
            });
            records.push(QueryRecord {
                t: at + 1,
                eval_time: at,
                point: x.clone(),
                value: v2,
                was_optimal: x_opt,
                generation: tau,
            });
        }
        if v1 >= v2 {
            x = y;
        }
    }
    generations.push(summary(f, iterations, evaluations, std::slice::from_ref(&x))?);
    Ok(Trace {
        meta: TraceMeta {
            algorithm: AlgorithmSpec::Single { mutation: *op },
            budget,
            evaluations,
            dropped_evaluations: dropped,
        },
        hits,
        records,
        generations,
    })
}

/// Non-elitist population algorithm: generation `tau` evaluates its `lambda`
/// members with the function at time `tau lambda`, then builds the next
/// generation from `lambda` independent selections, each followed by mutation.
pub fn run_population<F: DynamicFunction, R: Rng + ?Sized>(
    f: &mut F,
    selection: &SelectionSpec,
    op: &MutationOp,
    p0: Vec<Bitstring>,
    budget: u64,
    options: TraceOptions,
    rng: &mut R,
) -> Result<Trace> {
    let lambda = p0.len();
    if lambda == 0 {
        return invalid("population size must be positive");
    }
    selection.validate_for(lambda)?;
    op.check_length(f.dimension())?;
    check_start(f, &p0)?;
    let block = lambda as u64;
    let (generations_n, dropped) = split_budget(block, budget)?;
    let evaluations = block * generations_n;
    let mut hits = Vec::with_capacity(evaluations as usize);
    let mut records = Vec::with_capacity(if options.record_points { evaluations as usize } else { 0 });
    let mut generations = Vec::with_capacity(generations_n as usize + 1);
    let mut pop = p0;
    let mut values = vec![0.0; lambda];
    for tau in 0..generations_n {
        let at = tau * block;
        generations.push(summary(f, tau, at, &pop)?);
        for (i, x) in pop.iter().enumerate() {
            let t = at + i as u64;
            values[i] = f.evaluate(x, at)?;
            let opt = f.is_optimal_at(x, t)?;
            hits.push(opt);
            if options.record_points {
                records.push(QueryRecord {
                    t,
                    eval_time: at,
                    point: x.clone(),
                    value: values[i],
                    was_optimal: opt,
                    generation: tau,
                });
            }
        }
        let ranking = Ranking::new(&values, rng)?;
        pop = (0..lambda)
            .map(|_| op.mutate(&pop[ranking.select(selection, rng)], rng))
            .collect();
    }
    generations.push(summary(f, generations_n, evaluations, &pop)?);
    Ok(Trace {
        meta: TraceMeta {
            algorithm: AlgorithmSpec::Population {
                lambda,
                selection: *selection,
                mutation: *op,
            },
            budget,
            evaluations,
            dropped_evaluations: dropped,
        },
        hits,
        records,
        generations,
    })
}
