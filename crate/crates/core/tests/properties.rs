use std::collections::HashMap;

use dyntrack::algorithms::{run_population, run_single, TraceOptions};
use dyntrack::analysis::{ruin_probability_closed, solve_ruin_chain, tracking_score_hits};
use dyntrack::bits::{all_ones, hamming, sample_at_distance, sample_in_ball};
use dyntrack::operators::Ranking;
use dyntrack::stats::{chi_square_test, hypergeometric_pmf, ln_binomial, poisson_cdf, poisson_tail_bound};
use dyntrack::{Bitstring, DynamicFunction, MhbInstance, MhbParams, MutationOp, RngStream, SelectionSpec};
use proptest::prelude::*;

fn bits(n: usize) -> impl Strategy<Value = Bitstring> {
    prop::collection::vec(any::<bool>(), n).prop_map(|v| Bitstring::from_bits(&v).unwrap())
}

fn pair(max_n: usize) -> impl Strategy<Value = (Bitstring, Bitstring)> {
    (1..=max_n).prop_flat_map(|n| (bits(n), bits(n)))
}

proptest! {
    #[test]
    fn hamming_is_a_metric((x, y) in pair(200), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let z = sample_in_ball(&x, x.len() / 2, &mut rng).unwrap();
        prop_assert_eq!(hamming(&x, &y).unwrap(), hamming(&y, &x).unwrap());
        prop_assert_eq!(hamming(&x, &x).unwrap(), 0);
        prop_assert!(hamming(&x, &y).unwrap() <= hamming(&x, &z).unwrap() + hamming(&z, &y).unwrap());
        prop_assert_eq!(hamming(&x, &x.complement()).unwrap(), x.len());
    }

    #[test]
    fn text_forms_round_trip(x in (1usize..300).prop_flat_map(bits)) {
        prop_assert_eq!(Bitstring::from_hex(&x.to_hex(), x.len()).unwrap(), x.clone());
        prop_assert_eq!(x.to_string().parse::<Bitstring>().unwrap(), x.clone());
        let json = serde_json::to_string(&x).unwrap();
        prop_assert_eq!(serde_json::from_str::<Bitstring>(&json).unwrap(), x);
    }

    #[test]
    fn sampled_points_have_the_requested_distance(x in (1usize..120).prop_flat_map(bits), frac in 0.0f64..1.0, seed in any::<u64>()) {
        let d = 1 + (frac * (x.len() - 1) as f64) as usize;
        let mut rng = RngStream::new(seed, 1);
        let y = sample_at_distance(&x, d, &mut rng).unwrap();
        prop_assert_eq!(hamming(&x, &y).unwrap(), d);
        let radius = d.min(x.len() - 1);
        let z = sample_in_ball(&x, radius, &mut rng).unwrap();
        prop_assert!(hamming(&x, &z).unwrap() <= radius);
    }

    #[test]
    fn transition_probabilities_sum_to_one(x in (1usize..=8).prop_flat_map(bits), chi in 0.1f64..3.0) {
        let n = x.len();
        prop_assume!(chi < n as f64);
        let op = MutationOp::bitwise(chi).unwrap();
        let total: f64 = (0..1u32 << n)
            .map(|m| {
                let y: Vec<bool> = (0..n).map(|i| m >> i & 1 == 1).collect();
                op.transition_prob(&x, &Bitstring::from_bits(&y).unwrap()).unwrap()
            })
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_cdf_is_below_the_tail_bound(theta in 0.5f64..200.0, frac in 0.001f64..0.999) {
        let x = theta * frac;
        prop_assert!(poisson_cdf(theta, x) <= poisson_tail_bound(theta, x).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn tournament_selection_ignores_fitness_scale(
        fit in prop::collection::hash_set(0u32..10_000, 2..40),
        scale in 0.01f64..100.0,
        k in 1usize..10,
        seed in any::<u64>(),
    ) {
        let fit: Vec<f64> = fit.into_iter().map(f64::from).collect();
        let scaled: Vec<f64> = fit.iter().map(|f| f * scale).collect();
        let spec = SelectionSpec::Tournament { k };
        let (mut a, mut b) = (RngStream::new(seed, 2), RngStream::new(seed, 2));
        let ra = Ranking::new(&fit, &mut a).unwrap();
        let rb = Ranking::new(&scaled, &mut b).unwrap();
        for _ in 0..50 {
            prop_assert_eq!(ra.select(&spec, &mut a), rb.select(&spec, &mut b));
        }
    }

    #[test]
    fn ruin_solution_is_monotone_and_below_the_closed_form(n in 16usize..300, rf in 0.0f64..0.2, df in 0.0f64..0.3) {
        let r = 1 + (rf * n as f64) as usize;
        let d = 2 + (df * n as f64) as usize;
        prop_assume!(r + d < n);
        let sol = solve_ruin_chain(r, d, n).unwrap();
        prop_assert!(sol.residual < 1e-12);
        for x in r + 1..r + d {
            prop_assert!(sol.at(x) <= sol.at(x - 1) + 1e-15);
            prop_assert!((0.0..=1.0).contains(&sol.at(x)));
            if 2 * (d + r) < n {
                prop_assert!(sol.at(x) <= ruin_probability_closed(r, d, n, x).unwrap() + 1e-15);
            }
        }
    }

    #[test]
    fn tracking_windows_are_ordered(hits in prop::collection::vec(any::<bool>(), 1..400), w in 1usize..50, t0 in 0usize..50) {
        prop_assume!(t0 + w <= hits.len());
        let rep = tracking_score_hits(&hits, w, t0, 0.25).unwrap();
        prop_assert!(rep.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
        prop_assert!(rep.min <= rep.mean + 1e-12 && rep.mean <= rep.max + 1e-12);
        prop_assert_eq!(rep.tracks, rep.min >= 0.25);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn traces_respect_query_time_invariants(
        n in 10usize..60,
        b in 0.05f64..0.3,
        theta in 5.0f64..80.0,
        lambda in 1usize..12,
        seed in any::<u64>(),
    ) {
        let params = MhbParams::with_fraction(n, b, 1, theta).unwrap();
        let op = MutationOp::default();

        let mut f = MhbInstance::new(params, RngStream::new(seed, 0)).unwrap();
        let x0 = f.target_at(0).unwrap().clone();
        let trace = run_single(&mut f, &op, x0, 600, TraceOptions { record_points: true }, &mut RngStream::new(seed, 1)).unwrap();
        trace.check().unwrap();
        prop_assert_eq!(f.clock(), 600);
        for (t, rec) in trace.records.iter().enumerate() {
            prop_assert_eq!(rec.t, t as u64);
            prop_assert_eq!(rec.eval_time, 2 * (rec.t / 2));
            prop_assert_eq!(rec.was_optimal, f.is_optimal_at(&rec.point, rec.t).unwrap());
        }

        let mut f = MhbInstance::new(params, RngStream::new(seed, 0)).unwrap();
        let p0 = vec![f.target_at(0).unwrap().clone(); lambda];
        let spec = SelectionSpec::Tournament { k: 2 };
        let trace = run_population(&mut f, &spec, &op, p0, 600, TraceOptions { record_points: true }, &mut RngStream::new(seed, 2)).unwrap();
        trace.check().unwrap();
        let block = lambda as u64;
        prop_assert_eq!(trace.len() as u64 % block, 0);
        for rec in &trace.records {
            prop_assert_eq!(rec.eval_time, block * (rec.t / block));
            prop_assert!(rec.eval_time <= rec.t);
        }
        // Consecutive targets differ in exactly l bits.
        for w in f.history().windows(2) {
            prop_assert_eq!(hamming(&w[0].1, &w[1].1).unwrap(), 1);
        }
    }
}

#[test]
fn points_at_a_fixed_distance_are_uniform() {
    let mut rng = RngStream::new(7, 3);
    for n in 2..=6usize {
        let center = all_ones(n).unwrap();
        for d in 1..=n {
            let cells = (ln_binomial(n as u64, d as u64).exp()).round() as usize;
            if cells < 2 {
                continue;
            }
            let draws = 2000 * cells as u64;
            let mut counts: HashMap<String, u64> = HashMap::new();
            for _ in 0..draws {
                *counts.entry(sample_at_distance(&center, d, &mut rng).unwrap().to_string()).or_default() += 1;
            }
            assert_eq!(counts.len(), cells, "n={n} d={d}: not every point was reached");
            let observed: Vec<u64> = counts.into_values().collect();
            let probs = vec![1.0 / cells as f64; cells];
            let test = chi_square_test(&observed, &probs).unwrap();
            assert!(test.p_value > 1e-6, "n={n} d={d}: p = {}", test.p_value);
        }
    }
}

#[test]
fn target_move_overlap_is_hypergeometric() {
    // Moving the target l bits changes the distance of a fixed point at
    // distance h by l - 2Z with Z ~ Hyp(n, h, l).
    let (n, h, l) = (40usize, 12usize, 5usize);
    let mut rng = RngStream::new(11, 4);
    let target = all_ones(n).unwrap();
    let x = sample_at_distance(&target, h, &mut rng).unwrap();
    let mut counts = vec![0u64; l + 1];
    for _ in 0..200_000 {
        let moved = sample_at_distance(&target, l, &mut rng).unwrap();
        let after = hamming(&x, &moved).unwrap();
        let z = (h + l - after) / 2;
        counts[z] += 1;
    }
    let probs: Vec<f64> = (0..=l as u64).map(|z| hypergeometric_pmf(n as u64, h as u64, l as u64, z)).collect();
    let test = chi_square_test(&counts, &probs).unwrap();
    assert!(test.p_value > 1e-6, "p = {}", test.p_value);
}

#[test]
fn flip_count_is_binomial() {
    let op = MutationOp::default();
    let x = all_ones(64).unwrap();
    let mut rng = RngStream::new(5, 5);
    let mut counts = vec![0u64; 65];
    for _ in 0..200_000 {
        counts[hamming(&x, &op.mutate(&x, &mut rng)).unwrap()] += 1;
    }
    let p = 1.0f64 / 64.0;
    let probs: Vec<f64> = (0..=64u64)
        .map(|k| (ln_binomial(64, k) + k as f64 * p.ln() + (64 - k) as f64 * (-p).ln_1p()).exp())
        .collect();
    assert!(chi_square_test(&counts, &probs).unwrap().p_value > 1e-6);
}
