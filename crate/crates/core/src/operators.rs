//! Unary mutation and rank-based selection.
//!
//! Selection works on a [`Ranking`] of the population: individuals sorted by
//! fitness (best first) with ties broken by a uniformly random permutation
//! drawn once per ranking. Every mechanism then picks a rank.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{sample_positions, Bitstring};
use crate::error::{invalid, Error, Result};
use crate::stats::Estimate;

/// Relative slack when comparing a pressure parameter against a threshold,
/// so that e.g. `k = 33` meets `1.1 * 3 * 10` despite rounding.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MutationOp {
    /// Flip each bit independently with probability `chi / n`.
    Bitwise { chi: f64 },
    /// Flip exactly one uniformly chosen bit.
    SingleBit,
}

impl Default for MutationOp {
    fn default() -> Self {
        MutationOp::Bitwise { chi: 1.0 }
    }
}

impl MutationOp {
    pub fn bitwise(chi: f64) -> Result<Self> {
        if !(chi.is_finite() && chi >= 0.0) {
            return invalid(format!("chi must be finite and nonnegative, got {chi}"));
        }
        Ok(MutationOp::Bitwise { chi })
    }

    /// Checks that the operator is defined for strings of length `n`.
    pub fn check_length(&self, n: usize) -> Result<()> {
        match *self {
            MutationOp::Bitwise { chi } if !(chi >= 0.0 && chi <= n as f64) => {
                invalid(format!("chi = {chi} must lie in [0, {n}]"))
            }
            _ => Ok(()),
        }
    }

    /// Expected number of flipped bits per application.
    pub fn chi(&self) -> f64 {
        match *self {
            MutationOp::Bitwise { chi } => chi,
            MutationOp::SingleBit => 1.0,
        }
    }

    pub fn mutate<R: Rng + ?Sized>(&self, x: &Bitstring, rng: &mut R) -> Bitstring {
        let n = x.len();
        let mut y = x.clone();
        match *self {
            MutationOp::SingleBit => y.flip(rng.random_range(0..n)),
            MutationOp::Bitwise { chi } => {
                let p = (chi / n as f64).clamp(0.0, 1.0);
                if p == 0.0 {
                    return y;
                }
                let q = p.min(1.0 - p);
                if q * n as f64 <= 32.0 {
                    // K ~ Bin(n, q) by inversion, then a uniform K-subset.
                    let k = binomial_inversion(n, q, rng);
                    let mut pos = Vec::with_capacity(k);
                    sample_positions(n, k, rng, &mut pos);
                    if p > 0.5 {
                        y.invert_in_place();
                    }
                    for i in pos {
                        y.flip(i);
                    }
                } else {
                    for i in 0..n {
                        if rng.random::<f64>() < p {
                            y.flip(i);
                        }
                    }
                }
            }
        }
        y
    }

    /// Exact probability that one application maps `x` to `y`.
    pub fn transition_prob(&self, x: &Bitstring, y: &Bitstring) -> Result<f64> {
        let h = crate::bits::hamming(x, y)?;
        let n = x.len();
        Ok(match *self {
            MutationOp::SingleBit => {
                if h == 1 {
                    1.0 / n as f64
                } else {
                    0.0
                }
            }
            MutationOp::Bitwise { chi } => {
                let p = (chi / n as f64).clamp(0.0, 1.0);
                p.powi(h as i32) * (1.0 - p).powi((n - h) as i32)
            }
        })
    }
}

pub fn mutate<R: Rng + ?Sized>(op: &MutationOp, x: &Bitstring, rng: &mut R) -> Bitstring {
    op.mutate(x, rng)
}

pub fn mutation_transition_prob(op: &MutationOp, x: &Bitstring, y: &Bitstring) -> Result<f64> {
    op.transition_prob(x, y)
}

/// `Bin(n, p)` by sequential inversion. Only used while `n p` is small, so
/// `(1-p)^n` stays far from underflow.
fn binomial_inversion<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let ratio = p / (1.0 - p);
    let mut pk = (1.0 - p).powi(n as i32);
    let mut cdf = pk;
    let mut k = 0;
    while u > cdf && k < n {
        pk *= (n - k) as f64 / (k + 1) as f64 * ratio;
        k += 1;
        cdf += pk;
    }
    k
}

fn fmt_real(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

impl fmt::Display for MutationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            MutationOp::Bitwise { chi } => write!(f, "bitwise:chi={}", fmt_real(chi)),
            MutationOp::SingleBit => f.write_str("single-bit"),
        }
    }
}

/// Splits `"name:key=value"` into `(name, Some((key, value)))`.
fn split_spec(s: &str) -> Result<(&str, Option<(&str, &str)>)> {
    match s.split_once(':') {
        None => Ok((s.trim(), None)),
        Some((name, rest)) => {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected key=value in `{s}`")))?;
            Ok((name.trim(), Some((k.trim(), v.trim()))))
        }
    }
}

fn parse_num<T: FromStr>(spec: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidInput(format!("bad number `{v}` in `{spec}`")))
}

impl FromStr for MutationOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match split_spec(s)? {
            ("single-bit", None) => Ok(MutationOp::SingleBit),
            ("bitwise", None) => Ok(MutationOp::default()),
            ("bitwise", Some(("chi", v))) => MutationOp::bitwise(parse_num(s, v)?),
            _ => invalid(format!(
                "unknown mutation operator `{s}` (expected `bitwise:chi=<x>` or `single-bit`)"
            )),
        }
    }
}

impl TryFrom<String> for MutationOp {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MutationOp> for String {
    fn from(op: MutationOp) -> String {
        op.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SelectionSpec {
    /// Best of `k` individuals drawn uniformly with replacement.
    Tournament { k: usize },
    /// Uniform among the `mu` best.
    MuCommaLambda { mu: usize },
    /// Ranking function `eta (1 - 2x) + 2x`, `eta` in (1, 2].
    LinearRanking { eta: f64 },
    /// Ranking function `eta e^{eta (1 - x)} / (e^eta - 1)`, `eta > 0`.
    ExponentialRanking { eta: f64 },
}

impl SelectionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionSpec::Tournament { k: 0 } => invalid("tournament size k must be >= 1"),
            SelectionSpec::MuCommaLambda { mu: 0 } => invalid("mu must be >= 1"),
            SelectionSpec::LinearRanking { eta } if !(eta > 1.0 && eta <= 2.0) => {
                invalid(format!("linear ranking needs eta in (1, 2], got {eta}"))
            }
            SelectionSpec::ExponentialRanking { eta } if !(eta > 0.0 && eta.is_finite()) => {
                invalid(format!("exponential ranking needs eta > 0, got {eta}"))
            }
            _ => Ok(()),
        }
    }

    /// Validates the spec for a population of `lambda` individuals.
    pub fn validate_for(&self, lambda: usize) -> Result<()> {
        self.validate()?;
        if lambda == 0 {
            return invalid("population must not be empty");
        }
        if let SelectionSpec::MuCommaLambda { mu } = *self {
            if mu > lambda {
                return invalid(format!("mu = {mu} exceeds lambda = {lambda}"));
            }
        }
        Ok(())
    }

    /// Picks a rank in `0..lambda` (0 is the best individual).
    pub fn select_rank<R: Rng + ?Sized>(&self, lambda: usize, rng: &mut R) -> usize {
        match *self {
            SelectionSpec::Tournament { k } => {
                (0..k).map(|_| rng.random_range(0..lambda)).min().unwrap_or(0)
            }
            SelectionSpec::MuCommaLambda { mu } => rng.random_range(0..mu.min(lambda)),
            SelectionSpec::LinearRanking { eta } => {
                // invert F(x) = eta x + (1 - eta) x^2
                let u: f64 = rng.random();
                let x = 2.0 * u / (eta + (eta * eta + 4.0 * (1.0 - eta) * u).max(0.0).sqrt());
                rank_of(x, lambda)
            }
            SelectionSpec::ExponentialRanking { eta } => {
                // invert F(x) = (1 - e^{-eta x}) / (1 - e^{-eta})
                let u: f64 = rng.random();
                let x = -(u * (-eta).exp_m1()).ln_1p() / eta;
                rank_of(x, lambda)
            }
        }
    }

    /// Cumulative selection probability for distinct fitnesses: probability of
    /// selecting an individual ranked `ceil(gamma * lambda)` or better.
    pub fn beta(&self, gamma: f64, lambda: usize) -> Result<f64> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return invalid(format!("gamma must lie in (0, 1], got {gamma}"));
        }
        if lambda == 0 {
            return invalid("lambda must be positive");
        }
        self.validate()?;
        let m = rank_cutoff(gamma, lambda) as f64;
        let l = lambda as f64;
        Ok(match *self {
            SelectionSpec::Tournament { k } => 1.0 - (1.0 - m / l).powi(k as i32),
            SelectionSpec::MuCommaLambda { mu } => (m / mu as f64).min(1.0),
            SelectionSpec::LinearRanking { eta } => gamma * (eta + gamma * (1.0 - eta)),
            SelectionSpec::ExponentialRanking { eta } => {
                (-eta * gamma).exp_m1() / (-eta).exp_m1()
            }
        })
    }

    /// The parameter compared against the selection-pressure threshold:
    /// `k`, `lambda / mu`, or `eta`.
    pub fn pressure(&self, lambda: usize) -> f64 {
        match *self {
            SelectionSpec::Tournament { k } => k as f64,
            SelectionSpec::MuCommaLambda { mu } => lambda as f64 / mu as f64,
            SelectionSpec::LinearRanking { eta } | SelectionSpec::ExponentialRanking { eta } => eta,
        }
    }
}

fn rank_of(x: f64, lambda: usize) -> usize {
    ((x * lambda as f64) as usize).min(lambda - 1)
}

/// `ceil(gamma * lambda)`, robust to `gamma * lambda` landing a hair above an integer.
pub fn rank_cutoff(gamma: f64, lambda: usize) -> usize {
    let g = gamma * lambda as f64;
    let r = g.round();
    let m = if (g - r).abs() <= 1e-9 * g.max(1.0) { r } else { g.ceil() };
    (m as usize).clamp(1, lambda)
}

impl fmt::Display for SelectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SelectionSpec::Tournament { k } => write!(f, "tournament:k={k}"),
            SelectionSpec::MuCommaLambda { mu } => write!(f, "mu-comma-lambda:mu={mu}"),
            SelectionSpec::LinearRanking { eta } => write!(f, "linear-ranking:eta={}", fmt_real(eta)),
            SelectionSpec::ExponentialRanking { eta } => {
                write!(f, "exponential-ranking:eta={}", fmt_real(eta))
            }
        }
    }
}

impl FromStr for SelectionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = match split_spec(s)? {
            ("tournament", Some(("k", v))) => SelectionSpec::Tournament { k: parse_num(s, v)? },
            ("mu-comma-lambda", Some(("mu", v))) => {
                SelectionSpec::MuCommaLambda { mu: parse_num(s, v)? }
            }
            ("linear-ranking", Some(("eta", v))) => {
                SelectionSpec::LinearRanking { eta: parse_num(s, v)? }
            }
            ("exponential-ranking", Some(("eta", v))) => {
                SelectionSpec::ExponentialRanking { eta: parse_num(s, v)? }
            }
            _ => {
                return invalid(format!(
                    "unknown selection `{s}` (expected tournament:k=, mu-comma-lambda:mu=, \
                     linear-ranking:eta= or exponential-ranking:eta=)"
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for SelectionSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SelectionSpec> for String {
    fn from(s: SelectionSpec) -> String {
        s.to_string()
    }
}

/// Population order used by one generation's selections.
#[derive(Clone, Debug)]
pub struct Ranking {
    /// `order[rank]` is the population index of the individual at that rank.
    order: Vec<usize>,
}

impl Ranking {
    pub fn new<R: Rng + ?Sized>(fitnesses: &[f64], rng: &mut R) -> Result<Self> {
        if fitnesses.is_empty() {
            return invalid("cannot rank an empty population");
        }
        if fitnesses.iter().any(|f| f.is_nan()) {
            return invalid("fitness values must not be NaN");
        }
        let mut order: Vec<usize> = (0..fitnesses.len()).collect();
        // random tie-breaking permutation, then a stable sort by fitness
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        order.sort_by(|&a, &b| fitnesses[b].partial_cmp(&fitnesses[a]).expect("not NaN"));
        Ok(Ranking { order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn index_at(&self, rank: usize) -> usize {
        self.order[rank]
    }

    /// Selects a population index.
    pub fn select<R: Rng + ?Sized>(&self, spec: &SelectionSpec, rng: &mut R) -> usize {
        self.order[spec.select_rank(self.order.len(), rng)]
    }
}

/// Selects one index from `fitnesses` with a freshly drawn tie-breaking order.
pub fn select<R: Rng + ?Sized>(spec: &SelectionSpec, fitnesses: &[f64], rng: &mut R) -> Result<usize> {
    spec.validate_for(fitnesses.len())?;
    Ok(Ranking::new(fitnesses, rng)?.select(spec, rng))
}

pub fn beta_closed_form(spec: &SelectionSpec, gamma: f64, lambda: usize) -> Result<f64> {
    spec.beta(gamma, lambda)
}

/// Empirical cumulative selection probability on a population of `lambda`
/// distinct fitness values.
pub fn beta_empirical<R: Rng + ?Sized>(
    spec: &SelectionSpec,
    lambda: usize,
    gamma: f64,
    samples: u64,
    rng: &mut R,
) -> Result<Estimate> {
    if samples == 0 {
        return invalid("samples must be positive");
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return invalid(format!("gamma must lie in (0, 1], got {gamma}"));
    }
    spec.validate_for(lambda)?;
    // fitness decreasing with index, so the true rank of index i is i
    let fitnesses: Vec<f64> = (0..lambda).map(|i| (lambda - i) as f64).collect();
    let ranking = Ranking::new(&fitnesses, rng)?;
    let cutoff = rank_cutoff(gamma, lambda);
    let hits = (0..samples)
        .filter(|_| ranking.select(spec, rng) < cutoff)
        .count() as u64;
    Ok(Estimate::from_counts(hits, samples))
}

/// Whether the spec meets the pressure threshold `(1 + delta) / rho` required
/// for tracking a `(lambda, rho)`-stable function. Linear ranking also needs
/// `eta <= 2`, so it can only qualify when `rho > 1/2`.
pub fn pressure_satisfied(spec: &SelectionSpec, lambda: usize, rho: f64, delta: f64) -> bool {
    if !(rho > 0.0 && rho <= 1.0 && delta > 0.0) {
        return false;
    }
    if let SelectionSpec::LinearRanking { eta } = *spec {
        if eta > 2.0 {
            return false;
        }
    }
    meets(spec.pressure(lambda), (1.0 + delta) / rho)
}

fn meets(value: f64, threshold: f64) -> bool {
    value >= threshold * (1.0 - THRESHOLD_SLACK)
}

/// Minimum pressure parameter `(1 + delta) 3 (l / b)^l` for tracking a moving
/// Hamming ball of relative radius `b` and step `l` with mutation rate `1/n`.
pub fn pressure_threshold(b: f64, l: usize, delta: f64) -> Result<f64> {
    if !(b > 0.0 && b < 1.0) || l == 0 || !(delta > 0.0) {
        return invalid(format!(
            "need b in (0,1), l >= 1, delta > 0; got b={b}, l={l}, delta={delta}"
        ));
    }
    Ok((1.0 + delta) * 3.0 * (l as f64 / b).powi(l as i32))
}

/// Checks `beta(gamma) >= gamma (1 + delta) / rho` on the grid
/// `gamma = j / lambda`, `j = 1..`, and returns the largest grid point up to
/// which the inequality holds without interruption (0 if it fails at once).
pub fn beta_condition_gamma0(spec: &SelectionSpec, lambda: usize, rho: f64, delta: f64) -> Result<f64> {
    spec.validate_for(lambda)?;
    let need = (1.0 + delta) / rho;
    let mut gamma0 = 0.0;
    for j in 1..=lambda {
        let g = j as f64 / lambda as f64;
        if spec.beta(g, lambda)? + 1e-12 >= g * need {
            gamma0 = g;
        } else {
            break;
        }
    }
    Ok(gamma0)
}
