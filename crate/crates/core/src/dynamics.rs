//! Dynamic functions with a global evaluation clock, and the Moving Hamming
//! Ball benchmark.
//!
//! Every evaluation advances the clock by one. A search heuristic may evaluate
//! a point against any function in force at a time no later than the current
//! clock, which is how a population compares its members on a static copy.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::bits::{sample_at_distance, Bitstring};
use crate::error::{invalid, Error, Result};
use crate::operators::MutationOp;
use crate::stats::{sample_poisson, Estimate, RngStream};

/// A time-indexed sequence of fitness functions over bitstrings of a fixed length.
pub trait DynamicFunction {
    fn dimension(&self) -> usize;

    /// Number of evaluations performed so far.
    fn clock(&self) -> u64;

    /// Evaluates `x` with the function in force at time `at <= clock`, then
    /// advances the clock by one.
    fn evaluate(&mut self, x: &Bitstring, at: u64) -> Result<f64>;

    /// Whether `x` maximises the function in force at time `t <= clock`.
    /// Instrumentation only: does not advance the clock.
    fn is_optimal_at(&self, x: &Bitstring, t: u64) -> Result<bool>;

    /// Distance from `x` to the nearest optimum at time `t`, when the function
    /// has a notion of one.
    fn distance_to_optimum(&self, _x: &Bitstring, _t: u64) -> Result<Option<usize>> {
        Ok(None)
    }

    /// Distance from `x` to the target (the centre of the optimal region) at
    /// time `t`, when the function has one.
    fn distance_to_target(&self, _x: &Bitstring, _t: u64) -> Result<Option<usize>> {
        Ok(None)
    }
}

/// Parameters of a moving Hamming ball: string length `n`, radius `r`, step
/// `l` and mean inter-change time `theta` (infinite for a static ball).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhbParams {
    pub n: usize,
    pub r: usize,
    pub l: usize,
    #[serde(with = "theta_serde")]
    pub theta: f64,
}

mod theta_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl MhbParams {
    pub fn new(n: usize, r: usize, l: usize, theta: f64) -> Result<Self> {
        let p = MhbParams { n, r, l, theta };
        p.validate()?;
        Ok(p)
    }

    /// Radius from a relative radius `b`: `r = floor(b n)`.
    pub fn with_fraction(n: usize, b: f64, l: usize, theta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&b) {
            return invalid(format!("relative radius b must lie in [0, 1/2), got {b}"));
        }
        Self::new(n, (b * n as f64 + 1e-9).floor() as usize, l, theta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return invalid("n must be positive");
        }
        if 2 * self.r >= self.n {
            return invalid(format!("radius r = {} must be below n/2 = {}", self.r, self.n as f64 / 2.0));
        }
        if self.l == 0 || self.l > self.n {
            return invalid(format!("step l must lie in 1..={}, got {}", self.n, self.l));
        }
        if !(self.theta > 0.0) {
            return invalid(format!("theta must be positive, got {}", self.theta));
        }
        Ok(())
    }

    /// Relative radius `r / n`.
    pub fn b(&self) -> f64 {
        self.r as f64 / self.n as f64
    }
}

/// Lazily generated sequence of targets and the times they take effect.
///
/// Change `j >= 1` happens at `X_1 + ... + X_j` with `X_i ~ Pois(theta)`;
/// several changes may share a time, and the last one wins.
#[derive(Clone, Debug)]
pub struct ChangeSchedule {
    n: usize,
    l: usize,
    theta: f64,
    rng: RngStream,
    history: Vec<(u64, Bitstring)>,
    next_change: Option<u64>,
    horizon: u64,
}

impl ChangeSchedule {
    pub fn new(params: &MhbParams, rng: RngStream) -> Result<Self> {
        params.validate()?;
        let mut s = ChangeSchedule {
            n: params.n,
            l: params.l,
            theta: params.theta,
            rng,
            history: vec![(0, Bitstring::all_ones(params.n)?)],
            next_change: None,
            horizon: 0,
        };
        s.next_change = s.draw_gap()?;
        s.materialize(0)?;
        Ok(s)
    }

    fn draw_gap(&mut self) -> Result<Option<u64>> {
        if self.theta.is_finite() {
            Ok(Some(sample_poisson(self.theta, &mut self.rng)?))
        } else {
            Ok(None)
        }
    }

    /// Generates every change up to and including time `t`.
    pub fn materialize(&mut self, t: u64) -> Result<()> {
        while let Some(at) = self.next_change {
            if at > t {
                break;
            }
            let last = &self.history.last().expect("nonempty").1;
            let next = sample_at_distance(last, self.l, &mut self.rng)?;
            self.history.push((at, next));
            self.next_change = self.draw_gap()?.map(|g| at.saturating_add(g));
        }
        self.horizon = self.horizon.max(t);
        Ok(())
    }

    /// Target in force at time `t`. Requires `t` to be materialized.
    pub fn target_at(&self, t: u64) -> &Bitstring {
        debug_assert!(t <= self.horizon);
        let idx = self.history.partition_point(|(at, _)| *at <= t);
        &self.history[idx - 1].1
    }

    pub fn history(&self) -> &[(u64, Bitstring)] {
        &self.history
    }

    /// Number of changes with time in `(from, to]`.
    pub fn changes_in(&self, from: u64, to: u64) -> usize {
        let lo = self.history.partition_point(|(at, _)| *at <= from);
        let hi = self.history.partition_point(|(at, _)| *at <= to);
        hi.saturating_sub(lo).min(self.history.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A live Moving Hamming Ball function: fitness 1 inside the ball of radius
/// `r` around the current target, 0 outside.
#[derive(Clone, Debug)]
pub struct MhbInstance {
    params: MhbParams,
    schedule: ChangeSchedule,
    clock: u64,
    seed: u64,
    stream: u64,
}

impl MhbInstance {
    pub fn new(params: MhbParams, rng: RngStream) -> Result<Self> {
        let (seed, stream) = (rng.seed(), rng.stream_id());
        Ok(MhbInstance {
            params,
            schedule: ChangeSchedule::new(&params, rng)?,
            clock: 0,
            seed,
            stream,
        })
    }

    pub fn params(&self) -> &MhbParams {
        &self.params
    }

    /// `(seed, stream_id)` of the function's random stream.
    pub fn stream(&self) -> (u64, u64) {
        (self.seed, self.stream)
    }

    /// Recorded `(change time, target)` pairs, starting with `(0, 1^n)`.
    pub fn history(&self) -> &[(u64, Bitstring)] {
        self.schedule.history()
    }

    fn check_time(&self, t: u64) -> Result<()> {
        if t > self.clock {
            return Err(Error::FutureTime {
                requested: t,
                clock: self.clock,
            });
        }
        Ok(())
    }

    fn check_len(&self, x: &Bitstring) -> Result<()> {
        if x.len() != self.params.n {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: self.params.n,
            });
        }
        Ok(())
    }

    /// Target in force at time `t <= clock`.
    pub fn target_at(&self, t: u64) -> Result<&Bitstring> {
        self.check_time(t)?;
        Ok(self.schedule.target_at(t))
    }

    pub fn distance_at(&self, x: &Bitstring, t: u64) -> Result<usize> {
        self.check_len(x)?;
        Ok(self.target_at(t)?.distance_unchecked(x))
    }
}

impl DynamicFunction for MhbInstance {
    fn dimension(&self) -> usize {
        self.params.n
    }

    fn clock(&self) -> u64 {
        self.clock
    }

    fn evaluate(&mut self, x: &Bitstring, at: u64) -> Result<f64> {
        let inside = self.distance_at(x, at)? <= self.params.r;
        self.clock += 1;
        self.schedule.materialize(self.clock)?;
        Ok(if inside { 1.0 } else { 0.0 })
    }

    fn is_optimal_at(&self, x: &Bitstring, t: u64) -> Result<bool> {
        Ok(self.distance_at(x, t)? <= self.params.r)
    }

    fn distance_to_optimum(&self, x: &Bitstring, t: u64) -> Result<Option<usize>> {
        Ok(Some(self.distance_at(x, t)?.saturating_sub(self.params.r)))
    }

    fn distance_to_target(&self, x: &Bitstring, t: u64) -> Result<Option<usize>> {
        Ok(Some(self.distance_at(x, t)?))
    }
}

/// `(kappa, rho)` such that the ball is `(kappa, rho)`-stable under bitwise
/// mutation, with the constants used to derive them.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StabilityBound {
    pub kappa: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Bound on the probability of two or more changes within `kappa` steps.
    pub multi_change_bound: f64,
}

/// Smallest `epsilon` for which `(1 - chi/n)^(n - r) >= e^{-(1 + epsilon) chi}`
/// follows from the standard inequality chain: `chi / (n - chi)`.
pub fn default_epsilon(n: usize, chi: f64) -> f64 {
    chi / (n as f64 - chi)
}

/// `exp(-kappa d^2 / (2 (d + 1)))`.
pub fn multi_change_bound(kappa: f64, d: f64) -> f64 {
    (-kappa * d * d / (2.0 * (d + 1.0))).exp()
}

/// `kappa = theta / (1 + d)` and `rho = (r chi / (n l))^l e^{-(1 + epsilon) chi}`.
pub fn stability_bound(params: &MhbParams, chi: f64, epsilon: Option<f64>, d: f64) -> Result<StabilityBound> {
    params.validate()?;
    if !(chi > 0.0 && d > 0.0) {
        return invalid(format!("chi and d must be positive, got chi={chi}, d={d}"));
    }
    let n = params.n as f64;
    if chi >= n {
        return invalid(format!("chi = {chi} must be below n = {n}"));
    }
    let eps = epsilon.unwrap_or_else(|| default_epsilon(params.n, chi));
    if !(eps > 0.0) {
        return invalid(format!("epsilon must be positive, got {eps}"));
    }
    let need = (1.0 + 1.0 / eps) * chi;
    if n < need * (1.0 - 1e-12) {
        return invalid(format!(
            "bound requires n >= (1 + 1/epsilon) chi = {need:.6}, but n = {n}; increase epsilon"
        ));
    }
    let kappa = params.theta / (1.0 + d);
    let l = params.l as f64;
    let rho = (params.r as f64 * chi / (n * l)).powi(params.l as i32) * (-(1.0 + eps) * chi).exp();
    Ok(StabilityBound {
        kappa,
        rho,
        epsilon: eps,
        multi_change_bound: multi_change_bound(kappa, d),
    })
}

/// Success rate of recovering the ball after the target has moved `excess`
/// bits beyond the radius (0: the point is still inside).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExcessClass {
    pub excess: usize,
    pub estimate: Estimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityEstimate {
    /// Smallest per-class success rate: the estimate of `rho`.
    pub rho_hat: Estimate,
    pub classes: Vec<ExcessClass>,
    /// Frequency of two or more changes inside the window.
    pub multi_change: Estimate,
    pub kappa: u64,
    pub trials: u64,
}

/// Monte Carlo estimate of the stability probability.
///
/// Each trial picks a start time `t` uniformly in `[0, 4 theta]`, places `x`
/// on the boundary of the ball at time `t`, and mutates `x` once against each
/// distinct target in force during `(t, t + kappa]`. Trials with two or more
/// changes in the window are counted separately and excluded. Successes are
/// grouped by how far the target moved away from `x`; `rho_hat` is the
/// smallest group rate.
pub fn stability_estimate<R: RngCore + ?Sized>(
    params: &MhbParams,
    op: &MutationOp,
    kappa: u64,
    trials: u64,
    rng: &mut R,
) -> Result<StabilityEstimate> {
    params.validate()?;
    op.check_length(params.n)?;
    if kappa == 0 {
        return invalid("window length kappa must be positive");
    }
    if trials == 0 {
        return invalid("trials must be positive");
    }
    let horizon = if params.theta.is_finite() {
        (4.0 * params.theta).ceil().min(1e9) as u64
    } else {
        0
    };
    let mut success = vec![0u64; params.l + 1];
    let mut attempts = vec![0u64; params.l + 1];
    let mut multi = 0u64;
    for _ in 0..trials {
        let mut schedule = ChangeSchedule::new(params, RngStream::new(rng.next_u64(), 0))?;
        let t = rng.random_range(0..=horizon);
        schedule.materialize(t + kappa)?;
        if schedule.changes_in(t, t + kappa) >= 2 {
            multi += 1;
            continue;
        }
        let start = schedule.target_at(t);
        let x = if params.r == 0 {
            start.clone()
        } else {
            sample_at_distance(start, params.r, rng)?
        };
        let first = schedule.target_at(t + 1);
        let last = schedule.target_at(t + kappa);
        let targets: &[&Bitstring] = if first == last { &[first] } else { &[first, last] };
        for target in targets {
            let excess = x.distance_unchecked(target).saturating_sub(params.r).min(params.l);
            let y = op.mutate(&x, rng);
            attempts[excess] += 1;
            if y.distance_unchecked(target) <= params.r {
                success[excess] += 1;
            }
        }
    }
    let classes: Vec<ExcessClass> = (0..=params.l)
        .filter(|&e| attempts[e] > 0)
        .map(|e| ExcessClass {
            excess: e,
            estimate: Estimate::from_counts(success[e], attempts[e]),
        })
        .collect();
    let rho_hat = classes
        .iter()
        .map(|c| c.estimate)
        .min_by(|a, b| a.mean.total_cmp(&b.mean))
        .unwrap_or(Estimate::from_counts(0, 0));
    Ok(StabilityEstimate {
        rho_hat,
        classes,
        multi_change: Estimate::from_counts(multi, trials),
        kappa,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::{all_ones, hamming};

    fn instance(n: usize, r: usize, l: usize, theta: f64, seed: u64) -> MhbInstance {
        MhbInstance::new(MhbParams::new(n, r, l, theta).unwrap(), RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(MhbParams::new(10, 5, 1, 10.0).is_err());
        assert!(MhbParams::new(10, 4, 0, 10.0).is_err());
        assert!(MhbParams::new(10, 4, 11, 10.0).is_err());
        assert!(MhbParams::new(10, 4, 1, 0.0).is_err());
        assert!(MhbParams::new(10, 4, 1, f64::NAN).is_err());
        assert!(MhbParams::new(10, 4, 1, f64::INFINITY).is_ok());
        assert_eq!(MhbParams::with_fraction(100, 0.1, 1, 500.0).unwrap().r, 10);
        assert_eq!(MhbParams::with_fraction(200, 0.05, 1, 500.0).unwrap().r, 10);
    }

    #[test]
    fn fresh_instance() {
        let f = instance(8, 2, 1, 1e6, 1);
        assert_eq!(f.clock(), 0);
        assert_eq!(f.target_at(0).unwrap(), &all_ones(8).unwrap());
        let mut f = f;
        assert_eq!(f.evaluate(&all_ones(8).unwrap(), 0).unwrap(), 1.0);
        assert_eq!(f.clock(), 1);
    }

    #[test]
    fn ball_boundary_is_inclusive() {
        let mut f = instance(10, 3, 1, f64::INFINITY, 2);
        let on: Bitstring = "0001111111".parse().unwrap();
        let off: Bitstring = "0000111111".parse().unwrap();
        assert_eq!(f.evaluate(&on, 0).unwrap(), 1.0);
        assert_eq!(f.evaluate(&off, 0).unwrap(), 0.0);
        assert!(f.is_optimal_at(&on, 2).unwrap());
        assert!(!f.is_optimal_at(&off, 2).unwrap());
        assert_eq!(f.distance_to_optimum(&off, 1).unwrap(), Some(1));
    }

    #[test]
    fn future_evaluation_is_rejected() {
        let mut f = instance(10, 3, 1, 5.0, 3);
        let x = all_ones(10).unwrap();
        assert!(matches!(f.evaluate(&x, 1), Err(Error::FutureTime { requested: 1, clock: 0 })));
        assert!(f.target_at(1).is_err());
        assert!(f.is_optimal_at(&x, 1).is_err());
        assert!(f.evaluate(&all_ones(9).unwrap(), 0).is_err());
        assert_eq!(f.clock(), 0);
    }

    #[test]
    fn history_is_immutable_and_moves_are_exact() {
        let mut f = instance(30, 4, 3, 2.0, 4);
        let mut rng = RngStream::new(9, 9);
        let mut log = Vec::new();
        for t in 0..2000u64 {
            let x = MutationOp::bitwise(3.0).unwrap().mutate(&all_ones(30).unwrap(), &mut rng);
            let i = rng.random_range(0..=t);
            let v = f.evaluate(&x, i).unwrap();
            log.push((x, i, v));
        }
        assert_eq!(f.clock(), 2000);
        for (x, i, v) in &log {
            let again = f.is_optimal_at(x, *i).unwrap();
            assert_eq!(again, *v == 1.0);
        }
        let h = f.history();
        assert!(h.len() > 100);
        for w in h.windows(2) {
            assert!(w[0].0 <= w[1].0);
            assert_eq!(hamming(&w[0].1, &w[1].1).unwrap(), 3);
        }
    }

    #[test]
    fn one_change_moves_target_by_l() {
        let mut f = instance(50, 5, 2, 20.0, 5);
        let x = all_ones(50).unwrap();
        for _ in 0..500 {
            let c = f.clock();
            f.evaluate(&x, c).unwrap();
        }
        let h = f.history().to_vec();
        for w in h.windows(3) {
            let t = w[1].0;
            if w[0].0 < t && t < w[2].0 && t > 0 {
                let before = f.target_at(t - 1).unwrap();
                let after = f.target_at(t).unwrap();
                assert_eq!(hamming(before, after).unwrap(), 2);
            }
        }
    }

    #[test]
    fn static_ball_never_moves() {
        let mut f = instance(20, 2, 1, f64::INFINITY, 6);
        let x = all_ones(20).unwrap();
        for _ in 0..1000 {
            let c = f.clock();
            f.evaluate(&x, c).unwrap();
        }
        assert_eq!(f.history().len(), 1);
        assert_eq!(f.target_at(1000).unwrap(), &x);
    }

    #[test]
    fn stability_bound_examples() {
        let p = MhbParams::new(1000, 300, 1, 500.0).unwrap();
        let b = stability_bound(&p, 1.0, Some(1e-9), 1.0).unwrap_err();
        assert!(b.to_string().contains("epsilon"));
        let p = MhbParams::new(1_000_000_000, 300_000_000, 1, 500.0).unwrap();
        let b = stability_bound(&p, 1.0, Some(1e-8), 1.0).unwrap();
        assert!((b.rho - 0.3 / std::f64::consts::E).abs() < 1e-6);
        assert!((b.rho - 0.11036).abs() < 1e-5);
        assert!((b.kappa - 250.0).abs() < 1e-12);

        let p = MhbParams::new(100, 30, 1, 500.0).unwrap();
        let b = stability_bound(&p, 1.0, None, 1.0).unwrap();
        assert!((b.epsilon - 1.0 / 99.0).abs() < 1e-15);
        assert!((b.rho - 0.3 * (-(1.0 + 1.0 / 99.0f64)).exp()).abs() < 1e-15);
        // rho >= b/3 once epsilon < ln 3 - 1
        assert!(b.rho >= 0.3 / 3.0);
        assert!(stability_bound(&p, 0.0, None, 1.0).is_err());
        assert!(stability_bound(&p, 1.0, None, 0.0).is_err());
    }

    #[test]
    fn stability_estimate_rejects_empty_window() {
        let p = MhbParams::new(20, 4, 1, 50.0).unwrap();
        let mut rng = RngStream::new(1, 1);
        assert!(stability_estimate(&p, &MutationOp::default(), 0, 10, &mut rng).is_err());
    }

    #[test]
    fn stability_estimate_static_case_matches_no_flip_floor() {
        // static ball: only the excess-0 class; P(no matched bit flips) >= e^{-(1+eps) chi}
        let p = MhbParams::new(60, 12, 1, f64::INFINITY).unwrap();
        let mut rng = RngStream::new(2, 2);
        let est = stability_estimate(&p, &MutationOp::default(), 10, 50_000, &mut rng).unwrap();
        assert_eq!(est.classes.len(), 1);
        assert_eq!(est.multi_change.mean, 0.0);
        let eps = default_epsilon(60, 1.0);
        let floor = (-(1.0 + eps)).exp();
        assert!(est.rho_hat.mean >= floor - 3.0 * est.rho_hat.std_err);
    }
}
