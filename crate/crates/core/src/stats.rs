//! Seeded random streams, the distributions the moving Hamming ball needs,
//! and the small amount of statistics the experiments use.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::Distribution;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by xoshiro256++ (period 2^256 - 1). The 256-bit state is derived
/// from the pair through SplitMix64 so neighbouring stream ids give
/// unrelated states.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: Xoshiro256PlusPlus,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut s = stream ^ 0xD1B5_4A32_D192_ED03;
        let mut state = seed ^ splitmix64(&mut s);
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        RngStream {
            seed,
            stream,
            inner: Xoshiro256PlusPlus::from_seed(bytes),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Derive an independent seed for a sub-component (e.g. one arm of an
    /// experiment) from a master seed and a label.
    pub fn derive_seed(master: u64, label: u64) -> u64 {
        let mut s = master ^ label.rotate_left(32) ^ 0x6A09_E667_F3BC_C909;
        splitmix64(&mut s) ^ splitmix64(&mut s)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draws `X ~ Pois(theta)`. Inversion below 30, rejection sampling above.
pub fn sample_poisson<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> Result<u64> {
    if !(theta.is_finite() && theta > 0.0) {
        return invalid(format!("poisson mean must be positive and finite, got {theta}"));
    }
    if theta < 30.0 {
        let u: f64 = rng.random();
        let mut p = (-theta).exp();
        let mut cdf = p;
        let mut k = 0u64;
        // The cap only matters when u rounds to within machine precision of 1.
        let cap = (theta + 40.0 * theta.sqrt() + 40.0) as u64;
        while u > cdf && k < cap {
            k += 1;
            p *= theta / k as f64;
            cdf += p;
        }
        Ok(k)
    } else {
        let d = rand_distr::Poisson::new(theta)
            .map_err(|e| crate::Error::InvalidInput(format!("poisson({theta}): {e}")))?;
        Ok(d.sample(rng) as u64)
    }
}

pub fn poisson_pmf(theta: f64, k: u64) -> f64 {
    (-theta + k as f64 * theta.ln() - ln_gamma(k as f64 + 1.0)).exp()
}

/// `P(X <= x)` for `X ~ Pois(theta)`, by summing the pmf.
pub fn poisson_cdf(theta: f64, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let top = x.floor() as u64;
    (0..=top).map(|k| poisson_pmf(theta, k)).sum::<f64>().min(1.0)
}

/// Chernoff-type bound `P(X <= x) <= e^-theta (e theta / x)^x` for `0 < x < theta`.
pub fn poisson_tail_bound(theta: f64, x: f64) -> Result<f64> {
    if !(x > 0.0 && x < theta && theta.is_finite()) {
        return invalid(format!("poisson tail bound needs 0 < x < theta, got x={x}, theta={theta}"));
    }
    Ok((-theta + x * (1.0 + theta.ln() - x.ln())).exp())
}

/// Number of successes when drawing `draws` items without replacement from an
/// urn of `population` items of which `successes` are marked.
pub fn sample_hypergeometric<R: Rng + ?Sized>(
    population: u64,
    successes: u64,
    draws: u64,
    rng: &mut R,
) -> Result<u64> {
    if population == 0 || successes > population || draws > population {
        return invalid(format!(
            "hypergeometric parameters out of range: N={population}, K={successes}, draws={draws}"
        ));
    }
    let (mut left, mut marked, mut z) = (population, successes, 0u64);
    for _ in 0..draws {
        if marked > 0 && rng.random_range(0..left) < marked {
            z += 1;
            marked -= 1;
        }
        left -= 1;
    }
    Ok(z)
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

pub fn hypergeometric_pmf(population: u64, successes: u64, draws: u64, z: u64) -> f64 {
    if z > successes || z > draws || draws - z > population - successes {
        return 0.0;
    }
    (ln_binomial(successes, z) + ln_binomial(population - successes, draws - z)
        - ln_binomial(population, draws))
    .exp()
}

/// Checks `1 + x <= exp((x/2)(x+2)/(x+1))` for `x >= 0`.
pub fn ln_bound_holds(x: f64) -> Result<bool> {
    if !(x >= 0.0 && x.is_finite()) {
        return invalid(format!("x must be a finite nonnegative number, got {x}"));
    }
    if x < 1e-3 {
        // rhs - lhs in log space = x^3/6 - x^4/4 + O(x^5)
        let gap = x.powi(3) / 6.0 - x.powi(4) / 4.0;
        return Ok(gap >= 0.0);
    }
    Ok(x.ln_1p() <= 0.5 * x * (x + 2.0) / (x + 1.0))
}

/// Sample mean with a normal-approximation confidence half-width.
pub fn mean_ci(samples: &[f64], confidence: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return invalid("at least two samples are needed for a confidence interval");
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return invalid(format!("confidence must be in (0, 1), got {confidence}"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, z_score(confidence) * (var / n).sqrt()))
}

/// Two-sided normal quantile for the given confidence level.
pub fn z_score(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + confidence / 2.0)
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: u64,
}

impl Estimate {
    pub fn from_counts(successes: u64, trials: u64) -> Self {
        if trials == 0 {
            return Estimate {
                mean: f64::NAN,
                std_err: f64::NAN,
                samples: 0,
            };
        }
        let p = successes as f64 / trials as f64;
        Estimate {
            mean: p,
            std_err: (p * (1.0 - p) / trials as f64).sqrt(),
            samples: trials,
        }
    }

    pub fn from_moments(sum: f64, sum_sq: f64, samples: u64) -> Self {
        let n = samples as f64;
        let mean = sum / n;
        let var = if samples > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            std_err: (var / n).sqrt(),
            samples,
        }
    }

    pub fn half_width(&self, z: f64) -> f64 {
        z * self.std_err
    }
}

/// Standard error of the mean of a correlated series by non-overlapping batch means.
pub fn batch_means_std_err(series: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || series.len() < batches {
        return invalid("batch means need at least two batches with one sample each");
    }
    let size = series.len() / batches;
    let means: Vec<f64> = series
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((var / batches as f64).sqrt())
}

/// Result of a chi-square goodness-of-fit test.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit test of observed counts against category
/// probabilities. Adjacent categories are pooled until each pooled bin has an
/// expected count of at least 5.
pub fn chi_square_test(observed: &[u64], probs: &[f64]) -> Result<ChiSquareTest> {
    if observed.len() != probs.len() || observed.is_empty() {
        return invalid("observed counts and probabilities must have equal nonzero length");
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return invalid("no observations");
    }
    let total = total as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        obs += o as f64;
        exp += p * total;
        if exp >= 5.0 {
            bins.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => bins.push((obs, exp)),
        }
    }
    if bins.len() < 2 {
        return invalid("fewer than two bins after pooling");
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}

/// Draws from `Binomial(n, p)`.
pub fn sample_binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    rand_distr::Binomial::new(n, p)
        .expect("valid binomial parameters")
        .sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_streams_repeat() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let mut c = RngStream::new(42, 8);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
        assert_eq!(a.seed(), 42);
        assert_eq!(a.stream_id(), 7);
    }

    #[test]
    fn neighbouring_streams_are_uncorrelated() {
        let n = 200_000;
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 1);
        let (mut sab, mut sa, mut sb, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x: f64 = a.random();
            let y: f64 = b.random();
            sab += x * y;
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
        }
        let nf = n as f64;
        let cov = sab / nf - sa * sb / nf / nf;
        let corr = cov / ((saa / nf - (sa / nf).powi(2)) * (sbb / nf - (sb / nf).powi(2))).sqrt();
        // sd of the sample correlation is 1/sqrt(n)
        assert!(corr.abs() < 4.0 / nf.sqrt(), "correlation {corr}");
    }

    #[test]
    fn poisson_moments_small_mean() {
        let mut rng = RngStream::new(11, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_poisson(10.0, &mut rng).unwrap() as f64)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // sd(mean) = sqrt(10/n) ~ 0.0032; sd(var) ~ sqrt((mu4 - s^4)/n) = sqrt(210/n) ~ 0.0145
        assert!((mean - 10.0).abs() <= 3.0 * (10.0f64 / n as f64).sqrt(), "mean {mean}");
        assert!((var - 10.0).abs() <= 3.0 * (210.0f64 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn poisson_moments_large_mean() {
        let mut rng = RngStream::new(12, 0);
        let n = 200_000;
        let mean = (0..n)
            .map(|_| sample_poisson(500.0, &mut rng).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 500.0).abs() <= 3.0 * (500.0f64 / n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn poisson_tiny_mean_is_mostly_zero() {
        let mut rng = RngStream::new(13, 0);
        let n = 1_000_000u64;
        let zeros = (0..n)
            .filter(|_| sample_poisson(0.001, &mut rng).unwrap() == 0)
            .count() as f64;
        let p = (-0.001f64).exp();
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((zeros / n as f64 - p).abs() <= 3.0 * sd);
    }

    #[test]
    fn poisson_rejects_bad_mean() {
        let mut rng = RngStream::new(0, 0);
        assert!(sample_poisson(0.0, &mut rng).is_err());
        assert!(sample_poisson(-1.0, &mut rng).is_err());
        assert!(sample_poisson(f64::INFINITY, &mut rng).is_err());
    }

    #[test]
    fn poisson_tail_bound_examples() {
        let b = poisson_tail_bound(10.0, 5.0).unwrap();
        assert!((b - 32.0 * (-5.0f64).exp()).abs() < 1e-12);
        assert!((b - 0.21562).abs() < 1e-4);
        let exact = poisson_cdf(10.0, 5.0);
        assert!((exact - 0.067086).abs() < 1e-5);
        assert!(exact <= b);
        let b20 = poisson_tail_bound(20.0, 10.0).unwrap();
        let expected = (-20.0f64).exp() * (2.0 * std::f64::consts::E).powi(10);
        assert!((b20 - expected).abs() < 1e-12);
        assert!(poisson_cdf(20.0, 10.0) <= b20);
        assert!(poisson_tail_bound(10.0, 10.0).is_err());
        assert!(poisson_tail_bound(10.0, 0.0).is_err());
    }

    #[test]
    fn hypergeometric_examples() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..100 {
            assert_eq!(sample_hypergeometric(10, 0, 4, &mut rng).unwrap(), 0);
        }
        assert!((hypergeometric_pmf(6, 3, 2, 1) - 0.6).abs() < 1e-12);
        assert!(sample_hypergeometric(5, 6, 1, &mut rng).is_err());
        assert!(sample_hypergeometric(5, 2, 6, &mut rng).is_err());
        assert!(sample_hypergeometric(0, 0, 0, &mut rng).is_err());
    }

    #[test]
    fn hypergeometric_mean_is_draws_times_fraction() {
        let mut rng = RngStream::new(4, 0);
        let (n, r, l) = (100u64, 10u64, 3u64);
        let samples = 1_000_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let z = sample_hypergeometric(n, r, l, &mut rng).unwrap() as f64;
            sum += z;
            sum_sq += z * z;
        }
        let est = Estimate::from_moments(sum, sum_sq, samples);
        let expected = (l * r) as f64 / n as f64;
        assert!((est.mean - expected).abs() <= 3.0 * est.std_err);
    }

    #[test]
    fn ln_bound_examples() {
        assert!(ln_bound_holds(0.0).unwrap());
        assert!(ln_bound_holds(1.0).unwrap());
        assert!(2.0 <= (0.75f64).exp());
        assert!(ln_bound_holds(100.0).unwrap());
        assert!(ln_bound_holds(-0.5).is_err());
        assert!(ln_bound_holds(f64::NAN).is_err());
    }

    #[test]
    fn ln_bound_dense_grid() {
        let mut x = 0.0;
        while x <= 1000.0 {
            assert!(ln_bound_holds(x).unwrap(), "fails at {x}");
            x += 1e-3;
        }
        for k in 1..1000 {
            assert!(ln_bound_holds(k as f64 * 1e-6).unwrap());
        }
    }

    #[test]
    fn mean_ci_examples() {
        assert_eq!(mean_ci(&[5.0; 4], 0.95).unwrap(), (5.0, 0.0));
        let (m, hw) = mean_ci(&[0.0, 1.0], 0.95).unwrap();
        assert_eq!(m, 0.5);
        assert!(hw > 0.0);
        assert!(mean_ci(&[1.0], 0.95).is_err());
        assert!((z_score(0.95) - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn mean_ci_fair_coin() {
        let mut rng = RngStream::new(99, 0);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
            .collect();
        let (m, _) = mean_ci(&xs, 0.997).unwrap();
        assert!((m - 0.5).abs() <= 0.0016);
    }

    #[test]
    fn chi_square_detects_bias() {
        let fair = chi_square_test(&[5000, 5000], &[0.5, 0.5]).unwrap();
        assert!(fair.p_value > 0.99);
        let biased = chi_square_test(&[5500, 4500], &[0.5, 0.5]).unwrap();
        assert!(biased.p_value < 1e-10);
        // tail bins pooled
        let pooled = chi_square_test(&[90, 8, 1, 1], &[0.9, 0.08, 0.01, 0.01]).unwrap();
        assert_eq!(pooled.dof, 1);
    }

    #[test]
    fn binomial_edge_cases() {
        let mut rng = RngStream::new(0, 0);
        assert_eq!(sample_binomial(10, 0.0, &mut rng), 0);
        assert_eq!(sample_binomial(10, 1.0, &mut rng), 10);
        assert_eq!(sample_binomial(0, 0.5, &mut rng), 0);
    }
}
