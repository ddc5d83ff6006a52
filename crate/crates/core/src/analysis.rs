//! Tracking metrics, drift and occupancy estimators, and gambler's-ruin
//! escape probabilities.

use std::f64::consts::E;

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::algorithms::{AlgorithmSpec, GenerationSummary, Trace};
use crate::bits::{all_ones, sample_at_distance};
use crate::dynamics::{DynamicFunction, MhbInstance, MhbParams};
use crate::error::{invalid, Result};
use crate::operators::MutationOp;
use crate::stats::{batch_means_std_err, sample_binomial, Estimate};

// ---------------------------------------------------------------- tracking

/// Sliding-window fractions of optimal queries.
#[derive(Clone, Debug, Serialize)]
pub struct TrackingReport {
    pub window: usize,
    pub t0: usize,
    pub threshold: f64,
    #[serde(skip)]
    pub fractions: Vec<f64>,
    pub windows: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// `min >= threshold`.
    pub tracks: bool,
}

/// Fractions of optimal queries in every window of length `window` starting
/// in `[t0, T - window]`.
pub fn tracking_score_hits(hits: &[bool], window: usize, t0: usize, threshold: f64) -> Result<TrackingReport> {
    if window == 0 {
        return invalid("window length must be positive");
    }
    if t0 + window > hits.len() {
        return invalid(format!(
            "window [{t0}, {}) does not fit in a trace of length {}",
            t0 + window,
            hits.len()
        ));
    }
    let mut count = hits[t0..t0 + window].iter().filter(|&&h| h).count();
    let w = window as f64;
    let mut fractions = Vec::with_capacity(hits.len() - window - t0 + 1);
    fractions.push(count as f64 / w);
    for s in t0 + 1..=hits.len() - window {
        count += hits[s + window - 1] as usize;
        count -= hits[s - 1] as usize;
        fractions.push(count as f64 / w);
    }
    let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    let max = fractions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    Ok(TrackingReport {
        window,
        t0,
        threshold,
        windows: fractions.len(),
        fractions,
        min,
        mean,
        max,
        tracks: min >= threshold,
    })
}

pub fn tracking_score(trace: &Trace, window: usize, t0: usize, threshold: f64) -> Result<TrackingReport> {
    tracking_score_hits(&trace.hits, window, t0, threshold)
}

/// Fraction of optimal queries with query time in `[from, T)`.
pub fn hit_fraction_from(trace: &Trace, from: usize) -> f64 {
    let tail = &trace.hits[from.min(trace.hits.len())..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().filter(|&&h| h).count() as f64 / tail.len() as f64
}

// ---------------------------------------------------------------- drift

/// Drift bounds `(delta, eta)` for the distance-to-border process of the
/// single-individual algorithm inside a ball of relative radius `b`.
///
/// Bitwise mutation: `delta = chi (1 - b) e^{-(1 + eps) chi} / 2`,
/// `eta = b chi`. Single-bit mutation: `delta = 1 - 2b`, `eta = b`.
pub fn drift_constants(op: &MutationOp, b: f64, epsilon: f64) -> Result<(f64, f64)> {
    if !(0.0..0.5).contains(&b) {
        return invalid(format!("relative radius must lie in [0, 1/2), got {b}"));
    }
    if !(epsilon >= 0.0) {
        return invalid(format!("epsilon must be nonnegative, got {epsilon}"));
    }
    Ok(match op {
        MutationOp::Bitwise { chi } => (chi * (1.0 - b) * (-(1.0 + epsilon) * chi).exp() / 2.0, b * chi),
        MutationOp::SingleBit => (1.0 - 2.0 * b, b),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftEstimate {
    /// Distance to the border, `r - H(x, target)`.
    pub state: usize,
    pub estimate: Estimate,
    pub delta: f64,
    pub eta: f64,
    /// `delta` for interior states, `-eta` at the border.
    pub bound: f64,
}

impl DriftEstimate {
    /// Whether the estimate is at least the bound minus `z` standard errors.
    pub fn meets_bound(&self, z: f64) -> bool {
        self.estimate.mean >= self.bound - z * self.estimate.std_err
    }
}

fn check_state(params: &MhbParams, state: usize) -> Result<()> {
    params.validate()?;
    if state > params.r {
        return invalid(format!("state {state} exceeds the radius {}", params.r));
    }
    Ok(())
}

/// One-step drift towards the border of the accepted-move process at a
/// prepared state: a point at distance `r - state` from a fixed target is
/// mutated once, and the offspring is kept iff it stays inside the ball.
/// Uses `epsilon = 0` for the bitwise companions.
pub fn drift_estimate<R: RngCore + ?Sized>(
    params: &MhbParams,
    op: &MutationOp,
    state: usize,
    samples: u64,
    rng: &mut R,
) -> Result<DriftEstimate> {
    check_state(params, state)?;
    op.check_length(params.n)?;
    if samples == 0 {
        return invalid("samples must be positive");
    }
    let (delta, eta) = drift_constants(op, params.b(), 0.0)?;
    let target = all_ones(params.n)?;
    let h = params.r - state;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let x = if h == 0 { target.clone() } else { sample_at_distance(&target, h, rng)? };
        let y = op.mutate(&x, rng);
        let h2 = y.distance_unchecked(&target);
        let step = if h2 <= params.r { h2 as f64 - h as f64 } else { 0.0 };
        sum += step;
        sum_sq += step * step;
    }
    Ok(DriftEstimate {
        state,
        estimate: Estimate::from_moments(sum, sum_sq, samples),
        delta,
        eta,
        bound: if state > 0 { delta } else { -eta },
    })
}

/// Matched samples of the drift and its one-flip lower companion
/// `1{Y = 1} - X`, where `X` and `Y` count corrected and spoiled bits.
#[derive(Clone, Debug, Serialize)]
pub struct DominanceCheck {
    pub state: usize,
    pub drift: Estimate,
    pub companion: Estimate,
    /// Samples where the companion exceeded the drift.
    pub pointwise_violations: u64,
    /// `max_z (F_drift(z) - F_companion(z))`; nonpositive under dominance.
    pub max_cdf_excess: f64,
}

pub fn drift_dominance<R: Rng + ?Sized>(
    params: &MhbParams,
    chi: f64,
    state: usize,
    samples: u64,
    rng: &mut R,
) -> Result<DominanceCheck> {
    check_state(params, state)?;
    if state == 0 {
        return invalid("dominance is only claimed for interior states");
    }
    if samples == 0 {
        return invalid("samples must be positive");
    }
    let n = params.n as u64;
    let h = (params.r - state) as u64;
    let p = chi / params.n as f64;
    let offset = n as i64 + 1;
    let mut hist_d = vec![0u64; 2 * n as usize + 3];
    let mut hist_c = vec![0u64; 2 * n as usize + 3];
    let (mut sd, mut sd2, mut sc, mut sc2) = (0.0, 0.0, 0.0, 0.0);
    let mut violations = 0;
    for _ in 0..samples {
        let x = sample_binomial(h, p, rng) as i64;
        let y = sample_binomial(n - h, p, rng) as i64;
        let d = if y - x <= state as i64 { y - x } else { 0 };
        let c = (y == 1) as i64 - x;
        if c > d {
            violations += 1;
        }
        hist_d[(d + offset) as usize] += 1;
        hist_c[(c + offset) as usize] += 1;
        sd += d as f64;
        sd2 += (d * d) as f64;
        sc += c as f64;
        sc2 += (c * c) as f64;
    }
    let (mut cd, mut cc, mut excess) = (0u64, 0u64, f64::NEG_INFINITY);
    for (a, b) in hist_d.iter().zip(&hist_c) {
        cd += a;
        cc += b;
        excess = excess.max((cd as f64 - cc as f64) / samples as f64);
    }
    Ok(DominanceCheck {
        state,
        drift: Estimate::from_moments(sd, sd2, samples),
        companion: Estimate::from_moments(sc, sc2, samples),
        pointwise_violations: violations,
        max_cdf_excess: excess,
    })
}

/// Expected increase of the distance to the target when the target moves
/// `l` bits and the point is at distance `h`: `l (1 - 2h/n)`.
pub fn target_move_drift(n: usize, h: usize, l: usize) -> Result<f64> {
    if n == 0 || h > n || l > n {
        return invalid(format!("need h, l <= n, got n={n}, h={h}, l={l}"));
    }
    Ok(l as f64 * (1.0 - 2.0 * h as f64 / n as f64))
}

// ---------------------------------------------------------------- occupancy

#[derive(Clone, Debug, Serialize)]
pub struct OccupancyReport {
    pub steps: usize,
    pub initial: u64,
    /// Empirical fraction of steps at state 0.
    pub fraction: f64,
    /// Batch-means standard error of `fraction`.
    pub std_err: f64,
    /// `(delta t - X_0) / ((delta + eta) t)`.
    pub time_average_bound: f64,
    /// `delta / (2 (delta + eta))`.
    pub point_bound: f64,
}

/// `delta / (2 (delta + eta))`: lower bound on the probability of the
/// border state at a late, independent time.
pub fn point_occupancy_bound(delta: f64, eta: f64) -> f64 {
    delta / (2.0 * (delta + eta))
}

pub fn occupancy_fraction(states: &[u64], delta: f64, eta: f64) -> Result<OccupancyReport> {
    if states.is_empty() {
        return invalid("state sequence is empty");
    }
    if !(delta > 0.0 && eta >= 0.0) {
        return invalid(format!("need delta > 0 and eta >= 0, got delta={delta}, eta={eta}"));
    }
    let zeros: Vec<f64> = states.iter().map(|&s| (s == 0) as u8 as f64).collect();
    let t = states.len() as f64;
    let fraction = zeros.iter().sum::<f64>() / t;
    let std_err = if states.len() >= 40 {
        batch_means_std_err(&zeros, 20)?
    } else {
        (fraction * (1.0 - fraction) / t).sqrt()
    };
    Ok(OccupancyReport {
        steps: states.len(),
        initial: states[0],
        fraction,
        std_err,
        time_average_bound: (delta * t - states[0] as f64) / ((delta + eta) * t),
        point_bound: point_occupancy_bound(delta, eta),
    })
}

/// Distance-to-border series `r - H(x_tau, target)` of a single-individual
/// trace; states outside the ball map to 0.
pub fn border_distance_series(trace: &Trace, r: usize) -> Result<Vec<u64>> {
    if !matches!(trace.meta.algorithm, AlgorithmSpec::Single { .. }) {
        return invalid("border distances are defined for single-individual traces");
    }
    trace
        .generations
        .iter()
        .map(|g| match g.dist_best_to_target {
            Some(d) => Ok(r.saturating_sub(d) as u64),
            None => invalid("trace carries no target distances"),
        })
        .collect()
}

// ---------------------------------------------------------------- ruin

fn check_ruin(r: usize, d: usize, n: usize) -> Result<()> {
    if d == 0 {
        return invalid("d must be positive");
    }
    if r + d > n {
        return invalid(format!("need r + d <= n, got r={r}, d={d}, n={n}"));
    }
    Ok(())
}

/// Closed-form probability that a walk at distance `x` enters the ball of
/// radius `r` before reaching distance `r + d`, pessimistic for the
/// single-bit walk: `(s^{x-r} - s^d) / (1 - s^d)` with
/// `s = (d + r - 1)/(n - d - r + 1)`. Valid for `d + r < n/2`.
pub fn ruin_probability_closed(r: usize, d: usize, n: usize, x: usize) -> Result<f64> {
    check_ruin(r, d, n)?;
    if 2 * (d + r) >= n {
        return invalid(format!(
            "closed form needs d + r < n/2, got d + r = {} with n = {n}",
            d + r
        ));
    }
    if x <= r {
        return Ok(1.0);
    }
    if x >= r + d {
        return Ok(0.0);
    }
    let s = (d + r - 1) as f64 / (n - d - r + 1) as f64;
    let sd = s.powi(d as i32);
    Ok((s.powi((x - r) as i32) - sd) / (1.0 - sd))
}

/// Solution of `p_x = ((n-x)/n) p_{x+1} + (x/n) p_{x-1}` on `r..=r+d` with
/// `p_r = 1` and `p_{r+d} = 0`.
#[derive(Clone, Debug, Serialize)]
pub struct RuinSolution {
    pub r: usize,
    pub d: usize,
    pub n: usize,
    /// `p[k]` is the probability from distance `r + k`.
    pub p: Vec<f64>,
    /// Largest absolute residual of the recurrence.
    pub residual: f64,
}

impl RuinSolution {
    pub fn at(&self, x: usize) -> f64 {
        if x <= self.r {
            1.0
        } else if x >= self.r + self.d {
            0.0
        } else {
            self.p[x - self.r]
        }
    }
}

pub fn solve_ruin_chain(r: usize, d: usize, n: usize) -> Result<RuinSolution> {
    check_ruin(r, d, n)?;
    let nf = n as f64;
    let m = d - 1;
    // row k (x = r + 1 + k): -(x/n) p_{x-1} + p_x - ((n-x)/n) p_{x+1} = 0
    let mut c_prime = vec![0.0; m];
    let mut d_prime = vec![0.0; m];
    for k in 0..m {
        let x = (r + 1 + k) as f64;
        let a = -x / nf;
        let c = -(nf - x) / nf;
        if k == 0 {
            c_prime[0] = c;
            d_prime[0] = x / nf;
        } else {
            let denom = 1.0 - a * c_prime[k - 1];
            c_prime[k] = c / denom;
            d_prime[k] = -a * d_prime[k - 1] / denom;
        }
    }
    let mut p = vec![0.0; d + 1];
    p[0] = 1.0;
    for k in (0..m).rev() {
        p[k + 1] = d_prime[k] - c_prime[k] * p[k + 2];
    }
    let mut residual: f64 = 0.0;
    for k in 1..d {
        let x = (r + k) as f64;
        let res = p[k] - ((nf - x) / nf) * p[k + 1] - (x / nf) * p[k - 1];
        residual = residual.max(res.abs());
    }
    Ok(RuinSolution { r, d, n, p, residual })
}

/// Exact entry probability of the single-bit walk from distance `x`.
pub fn ruin_probability_exact(r: usize, d: usize, n: usize, x: usize) -> Result<f64> {
    check_ruin(r, d, n)?;
    if x <= r {
        return Ok(1.0);
    }
    if x >= r + d {
        return Ok(0.0);
    }
    Ok(solve_ruin_chain(r, d, n)?.at(x))
}

/// Monte Carlo entry probability of the unselected mutation walk on the
/// distance to the target, started at `x`: every offspring is kept until
/// the distance drops to `r` or below (entry) or reaches `r + d` (escape).
pub fn ruin_probability_simulated<R: Rng + ?Sized>(
    r: usize,
    d: usize,
    n: usize,
    x: usize,
    op: &MutationOp,
    walks: u64,
    rng: &mut R,
) -> Result<Estimate> {
    check_ruin(r, d, n)?;
    op.check_length(n)?;
    if walks == 0 {
        return invalid("walks must be positive");
    }
    let mut entered = 0;
    for _ in 0..walks {
        let mut pos = x;
        loop {
            if pos <= r {
                entered += 1;
                break;
            }
            if pos >= r + d {
                break;
            }
            pos = match op {
                MutationOp::SingleBit => {
                    if rng.random_range(0..n) < pos {
                        pos - 1
                    } else {
                        pos + 1
                    }
                }
                MutationOp::Bitwise { chi } => {
                    let p = chi / n as f64;
                    let inward = sample_binomial(pos as u64, p, rng) as usize;
                    let outward = sample_binomial((n - pos) as u64, p, rng) as usize;
                    pos + outward - inward
                }
            };
        }
    }
    Ok(Estimate::from_counts(entered, walks))
}

// ---------------------------------------------------------------- losses

/// `(1 - b)(1 - 2b) / (2 (1 - b + 2eb))`: probability bound that a target
/// change leaves the (1+1) EA outside the new ball.
pub fn loss_probability_bound(b: f64) -> f64 {
    (1.0 - b) * (1.0 - 2.0 * b) / (2.0 * (1.0 - b + 2.0 * E * b))
}

/// `(2e - 1) / (4 (2e + 1))`, the limit of the loss bound at `b = 1/(1 + 2e)`.
pub fn loss_probability_floor() -> f64 {
    (2.0 * E - 1.0) / (4.0 * (2.0 * E + 1.0))
}

/// A stretch of generations with no individual in the optimal region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LossEpisode {
    pub loss_generation: u64,
    pub loss_time: u64,
    pub recovery_time: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LossReport {
    pub episodes: Vec<LossEpisode>,
    pub unrecovered: usize,
    /// Target changes seen while the incumbent or population was in the ball.
    pub change_events: u64,
    /// Of those, changes after which nothing was in the new ball.
    pub change_losses: u64,
    pub change_loss_rate: Estimate,
    pub gamma0: f64,
    /// Generations with fewer than `gamma0 lambda` optimal members.
    pub below_gamma0: u64,
}

/// Loss episodes of a trace against the function it ran on.
pub fn loss_events(trace: &Trace, f: &MhbInstance, gamma0: f64) -> Result<LossReport> {
    if !(gamma0 > 0.0 && gamma0 <= 1.0) {
        return invalid(format!("gamma0 must lie in (0, 1], got {gamma0}"));
    }
    if f.clock() != trace.meta.evaluations {
        return invalid(format!(
            "trace has {} evaluations but the function clock is {}",
            trace.meta.evaluations,
            f.clock()
        ));
    }
    if let Some(GenerationSummary {
        population, dist_best_to_target: Some(d), ..
    }) = trace.generations.first()
    {
        if *population > 0 && *d > f.params().n {
            return invalid("trace distances exceed the function dimension");
        }
    }
    let gens = &trace.generations;
    let mut episodes: Vec<LossEpisode> = Vec::new();
    let mut lost = false;
    let mut below = 0;
    for g in gens {
        if (g.in_opt_count as f64) < gamma0 * g.population as f64 {
            below += 1;
        }
        if g.in_opt_count == 0 && !lost {
            lost = true;
            episodes.push(LossEpisode {
                loss_generation: g.generation,
                loss_time: g.clock,
                recovery_time: None,
            });
        } else if g.in_opt_count > 0 && lost {
            lost = false;
            episodes.last_mut().expect("open episode").recovery_time = Some(g.clock);
        }
    }
    let unrecovered = episodes.iter().filter(|e| e.recovery_time.is_none()).count();

    let (mut events, mut losses) = (0u64, 0u64);
    let last_clock = gens.last().map_or(0, |g| g.clock);
    let mut prev_time = 0;
    for &(c, _) in f.history().iter().skip(1) {
        if c == 0 || c == prev_time || c > last_clock {
            prev_time = c;
            continue;
        }
        prev_time = c;
        let after_idx = gens.partition_point(|g| g.clock < c);
        if after_idx == 0 || after_idx >= gens.len() {
            continue;
        }
        let (before, after) = (&gens[after_idx - 1], &gens[after_idx]);
        if before.in_opt_count > 0 {
            events += 1;
            if after.in_opt_count == 0 {
                losses += 1;
            }
        }
    }
    Ok(LossReport {
        episodes,
        unrecovered,
        change_events: events,
        change_losses: losses,
        change_loss_rate: Estimate::from_counts(losses, events),
        gamma0,
        below_gamma0: below,
    })
}

/// Rate at which offspring are optimal at their query times, over the
/// generations whose parents had at least `gamma0 lambda` optimal members.
pub fn offspring_optimal_rate(trace: &Trace, gamma0: f64) -> Result<Estimate> {
    let lambda = match trace.meta.algorithm {
        AlgorithmSpec::Population { lambda, .. } => lambda,
        _ => return invalid("offspring rates are defined for population traces"),
    };
    let (mut hits, mut total) = (0u64, 0u64);
    for w in trace.generations.windows(2) {
        let (parent, child) = (&w[0], &w[1]);
        if (parent.in_opt_count as f64) < gamma0 * lambda as f64 {
            continue;
        }
        let start = child.clock as usize;
        if start + lambda > trace.hits.len() {
            break;
        }
        hits += trace.hits[start..start + lambda].iter().filter(|&&h| h).count() as u64;
        total += lambda as u64;
    }
    Ok(Estimate::from_counts(hits, total))
}
