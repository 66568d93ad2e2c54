use coinpop::budget::{
    budgeted_rule_walk, budgeted_twalk, exact_frequency_expectation, frequency_estimate,
    pooled_frequency_expectation, run_until_budget, tally_distribution, OutcomeClass, OutcomeTally,
};
use coinpop::coin_model::{BiasDistribution, CoinPopulation, RngStream};
use coinpop::estimators::{expected_output, SingleCoinEstimatorSpec};
use coinpop::walk_core::{StoppingRule, Triangle};
use coinpop::Error;
use proptest::prelude::*;

/// E[i_k / Σ i_j] by recursing over every outcome sequence, independent of
/// the library's enumeration.
fn brute_expectation(classes: &[OutcomeClass], budget: u64) -> Vec<f64> {
    fn go(classes: &[OutcomeClass], left: u64, counts: &mut Vec<u64>, p: f64, acc: &mut Vec<f64>) {
        if left == 0 {
            finish(counts, p, acc);
            return;
        }
        for (k, c) in classes.iter().enumerate() {
            if c.prob == 0.0 {
                continue;
            }
            if c.cost > left {
                finish(counts, p * c.prob, acc);
            } else {
                counts[k] += 1;
                go(classes, left - c.cost, counts, p * c.prob, acc);
                counts[k] -= 1;
            }
        }
    }
    fn finish(counts: &[u64], p: f64, acc: &mut [f64]) {
        let total: u64 = counts.iter().sum();
        if total > 0 {
            for (a, c) in acc.iter_mut().zip(counts) {
                *a += p * *c as f64 / total as f64;
            }
        }
    }
    let mut acc = vec![0.0; classes.len()];
    go(classes, budget, &mut vec![0; classes.len()], 1.0, &mut acc);
    acc
}

fn classes(pairs: &[(u64, f64)]) -> Vec<OutcomeClass> {
    pairs.iter().map(|&(cost, prob)| OutcomeClass { cost, prob }).collect()
}

#[test]
fn single_outcome_fills_budget() {
    let t = run_until_budget(|_| (7, 1), 5);
    assert_eq!(t.counts[&7], 5);
    assert!(run_until_budget(|_| (0, 1), 0).counts.is_empty());
}

#[test]
fn two_class_example() {
    let c = classes(&[(1, 0.5), (2, 0.5)]);
    let (e, empty) = exact_frequency_expectation(&c, 3);
    assert_eq!(empty, 0.0);
    assert!((e[0] - 0.5).abs() < 1e-15);
    assert_eq!(e, brute_expectation(&c, 3));
}

#[test]
fn tally_probabilities_sum_to_one() {
    let c = classes(&[(1, 0.2), (3, 0.3), (2, 0.5)]);
    for t in 0..=12 {
        let total: f64 = tally_distribution(&c, t).iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn enumeration_agrees_with_brute_force() {
    let systems = [
        classes(&[(1, 0.3), (2, 0.7)]),
        classes(&[(3, 0.25), (1, 0.75)]),
        classes(&[(1, 0.2), (2, 0.3), (3, 0.5)]),
        classes(&[(2, 0.6), (3, 0.1), (2, 0.3)]),
    ];
    for c in &systems {
        for t in 3..=12 {
            let (fast, _) = exact_frequency_expectation(c, t);
            let slow = brute_expectation(c, t);
            for (k, (a, b)) in fast.iter().zip(&slow).enumerate() {
                assert!((a - b).abs() < 1e-12, "T={t}");
                assert!((a - c[k].prob).abs() < 1e-12, "T={t}");
            }
        }
    }
}

#[test]
fn frequencies_and_empty_tally() {
    let mut t = OutcomeTally::default();
    t.counts.insert(0, 3);
    t.counts.insert(1, 1);
    let f = frequency_estimate(&t).unwrap();
    assert_eq!((f[&0], f[&1]), (0.75, 0.25));
    assert!(matches!(frequency_estimate(&OutcomeTally::default()), Err(Error::EmptyTally)));
}

#[test]
fn pooling_counts_is_biased() {
    let c = classes(&[(1, 0.5), (2, 0.5)]);
    let pooled = pooled_frequency_expectation(&c, 3, 4);
    assert!((pooled[0] - 0.5).abs() > 1e-3, "{pooled:?}");
    let (a, _) = exact_frequency_expectation(&c, 3);
    let (b, _) = exact_frequency_expectation(&c, 4);
    assert!(((a[0] + b[0]) / 2.0 - 0.5).abs() < 1e-12);
}

fn sure_population(rho: f64) -> CoinPopulation {
    CoinPopulation::new(rho, 0.5, BiasDistribution::point(1.0).unwrap(), BiasDistribution::point(0.0).unwrap())
        .unwrap()
}

#[test]
fn deterministic_coins_are_unbiased() {
    // sure-heads coins walk the full depth for value 1, sure-tails coins stop at once
    let spec = SingleCoinEstimatorSpec::with_default_values(3).unwrap();
    let rho = 0.3;
    let c = classes(&[(1, 1.0 - rho), (3, rho)]);
    for t in 3..=12 {
        let (e, _) = exact_frequency_expectation(&c, t);
        assert!((e[1] - rho).abs() < 1e-12);
    }
    let pop = sure_population(rho);
    let runs = 20_000;
    let mean: f64 = (0..runs)
        .map(|s| budgeted_twalk(&pop, &spec, 7, &RngStream::new(s, 0)).report.estimate)
        .sum::<f64>()
        / runs as f64;
    // per-run estimates lie in [0,1]
    assert!((mean - rho).abs() <= 5.0 * (0.25f64 / runs as f64).sqrt(), "{mean}");
}

#[test]
fn large_budget_converges() {
    let pop = CoinPopulation::two_point(0.2, 0.3).unwrap();
    let spec = SingleCoinEstimatorSpec::with_default_values(15).unwrap();
    let exact = 0.2 * expected_output(&spec, 0.8) + 0.8 * expected_output(&spec, 0.2);
    let r = budgeted_twalk(&pop, &spec, 2_000_000, &RngStream::new(6, 0));
    assert!(r.report.flips_used <= 2_000_000);
    assert!((r.report.estimate - exact).abs() < 0.01, "{} vs {exact}", r.report.estimate);
}

#[test]
fn one_flip_budget() {
    let spec = SingleCoinEstimatorSpec::with_default_values(15).unwrap();
    let r = budgeted_twalk(&sure_population(0.0), &spec, 1, &RngStream::new(0, 0));
    assert_eq!(r.report.coins_used, 1);
    assert_eq!(r.report.estimate, 0.0);
    assert!(!r.report.empty);
    let r = budgeted_twalk(&sure_population(1.0), &spec, 3, &RngStream::new(0, 0));
    assert!(r.report.empty);
    assert_eq!(r.report.flips_used, 0);
}

#[test]
fn rule_walk_must_flip() {
    let mut g = Triangle::zeros(2);
    g.set(0, 0, 0.5);
    for k in 0..=2 {
        g.set(2, k, 1.0);
    }
    let rule = StoppingRule::new(g).unwrap();
    let pop = CoinPopulation::two_point(0.2, 0.3).unwrap();
    let values = Triangle::zeros(2);
    assert!(budgeted_rule_walk(&pop, &rule, &values, 10, &RngStream::new(0, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_systems_unbiased(
        weights in prop::collection::vec(0.05f64..1.0, 1..=3),
        costs in prop::collection::vec(1u64..=3, 3),
        extra in 0u64..=9,
    ) {
        let total: f64 = weights.iter().sum();
        let c: Vec<OutcomeClass> = weights
            .iter()
            .zip(&costs)
            .map(|(&w, &cost)| OutcomeClass { cost, prob: w / total })
            .collect();
        let budget = c.iter().map(|x| x.cost).max().unwrap() + extra;
        let (e, empty) = exact_frequency_expectation(&c, budget.min(12));
        prop_assert_eq!(empty, 0.0);
        for (ek, ck) in e.iter().zip(&c) {
            prop_assert!((ek - ck.prob).abs() < 1e-12);
        }
    }
}
