//! Budgeted execution: draw outcomes until the next one would overrun the
//! flip budget, drop that one, and report class frequencies.
//!
//! Frequencies i_k/Σi_j are unbiased for the class probabilities within one
//! budgeted run. Pooling raw counts across separate runs is not.

use std::collections::BTreeMap;

use crate::coin_model::{virtual_block_size, CoinPopulation, CoinView, RngStream};
use crate::estimators::{rule_walk_value, single_coin_walk, RunReport, SingleCoinEstimatorSpec};
use crate::walk_core::{StoppingRule, Triangle};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutcomeTally {
    pub counts: BTreeMap<usize, u64>,
    /// Class of the outcome dropped for overrunning the budget.
    pub discarded: Option<usize>,
    pub discarded_cost: u64,
    pub budget: u64,
    pub consumed: u64,
}

impl OutcomeTally {
    pub fn completed(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Draws outcomes `(class, cost)` from `sampler(i)` for i = 0, 1, ... until the
/// budget is used up exactly or the next cost would exceed what remains.
pub fn run_until_budget(mut sampler: impl FnMut(u64) -> (usize, u64), budget: u64) -> OutcomeTally {
    let mut tally = OutcomeTally { budget, ..Default::default() };
    let mut i = 0u64;
    while tally.consumed < budget {
        let (class, cost) = sampler(i);
        assert!(cost >= 1, "outcome costs must be positive");
        i += 1;
        if cost > budget - tally.consumed {
            tally.discarded = Some(class);
            tally.discarded_cost = cost;
            break;
        }
        tally.consumed += cost;
        *tally.counts.entry(class).or_insert(0) += 1;
    }
    tally
}

pub fn frequency_estimate(tally: &OutcomeTally) -> Result<BTreeMap<usize, f64>> {
    let total = tally.completed();
    if total == 0 {
        return Err(Error::EmptyTally);
    }
    Ok(tally.counts.iter().map(|(&k, &c)| (k, c as f64 / total as f64)).collect())
}

/// Budgeted triangular-walk result with its tally.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetedEstimate {
    pub report: RunReport,
    pub tally: OutcomeTally,
}

/// Runs walks one after another on fresh coins until the raw-flip budget is
/// spent. The estimate is Σ freq(n,k)·v(n,k) over completed walks.
pub fn budgeted_twalk(
    pop: &CoinPopulation,
    spec: &SingleCoinEstimatorSpec,
    budget: u64,
    rng: &RngStream,
) -> BudgetedEstimate {
    let block = virtual_block_size(pop.delta());
    let values = spec.value_triangle();
    let tally = run_until_budget(
        |i| {
            let mut r = rng.child(i);
            let coin = pop.draw_coin(&mut r);
            let mut view = CoinView::new(coin, block, &mut r);
            let (_, end) = single_coin_walk(&mut view, spec);
            (Triangle::index(end.n, end.k), view.raw_flips())
        },
        budget,
    );
    finish_tally(tally, &values, rng)
}

/// Budgeted run of a general rule with explicit values, on raw flips.
pub fn budgeted_rule_walk(
    pop: &CoinPopulation,
    rule: &StoppingRule,
    values: &Triangle,
    budget: u64,
    rng: &RngStream,
) -> Result<BudgetedEstimate> {
    if values.depth() != rule.n_max() {
        return Err(Error::InvalidRule("value triangle depth differs from the rule".into()));
    }
    if rule.gamma(0, 0) > 0.0 {
        return Err(Error::InvalidRule("a budgeted walk must flip at least once".into()));
    }
    let tally = run_until_budget(
        |i| {
            let mut r = rng.child(i);
            let coin = pop.draw_coin(&mut r);
            let mut view = CoinView::raw(coin, &mut r);
            let (_, end) = rule_walk_value(&mut view, rule, values);
            (Triangle::index(end.n, end.k), view.raw_flips())
        },
        budget,
    );
    Ok(finish_tally(tally, values, rng))
}

fn finish_tally(tally: OutcomeTally, values: &Triangle, rng: &RngStream) -> BudgetedEstimate {
    let mut report = RunReport::new(rng);
    report.flips_used = tally.consumed;
    report.coins_used = tally.completed();
    if let Ok(freq) = frequency_estimate(&tally) {
        report.empty = false;
        report.estimate = freq.iter().map(|(&c, &f)| f * values.values()[c]).sum();
        report.group_means = vec![report.estimate];
    }
    BudgetedEstimate { report, tally }
}

/// One outcome class of an enumerable system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeClass {
    pub cost: u64,
    pub prob: f64,
}

/// Exact distribution of the final count vector of one budgeted run.
pub fn tally_distribution(classes: &[OutcomeClass], budget: u64) -> Vec<(Vec<u64>, f64)> {
    let m = classes.len();
    let mut frontier: BTreeMap<(u64, Vec<u64>), f64> = BTreeMap::new();
    frontier.insert((0, vec![0; m]), 1.0);
    let mut finals: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    while let Some(((consumed, counts), p)) = frontier.pop_first() {
        let remaining = budget - consumed;
        if remaining == 0 {
            *finals.entry(counts).or_insert(0.0) += p;
            continue;
        }
        for (k, c) in classes.iter().enumerate() {
            if c.prob == 0.0 {
                continue;
            }
            if c.cost > remaining {
                *finals.entry(counts.clone()).or_insert(0.0) += p * c.prob;
            } else {
                let mut next = counts.clone();
                next[k] += 1;
                *frontier.entry((consumed + c.cost, next)).or_insert(0.0) += p * c.prob;
            }
        }
    }
    finals.into_iter().collect()
}

/// Exact E[i_k/Σi_j] per class, plus the probability of an empty tally
/// (which contributes nothing to the expectations).
pub fn exact_frequency_expectation(classes: &[OutcomeClass], budget: u64) -> (Vec<f64>, f64) {
    let mut expect = vec![0.0; classes.len()];
    let mut empty = 0.0;
    for (counts, p) in tally_distribution(classes, budget) {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            empty += p;
            continue;
        }
        for (e, c) in expect.iter_mut().zip(&counts) {
            *e += p * *c as f64 / total as f64;
        }
    }
    (expect, empty)
}

/// Exact expectation of frequencies computed from counts pooled over two
/// independent budgeted runs.
pub fn pooled_frequency_expectation(
    classes: &[OutcomeClass],
    first_budget: u64,
    second_budget: u64,
) -> Vec<f64> {
    let a = tally_distribution(classes, first_budget);
    let b = tally_distribution(classes, second_budget);
    let mut expect = vec![0.0; classes.len()];
    for (ca, pa) in &a {
        for (cb, pb) in &b {
            let total: u64 = ca.iter().sum::<u64>() + cb.iter().sum::<u64>();
            if total == 0 {
                continue;
            }
            for k in 0..classes.len() {
                expect[k] += pa * pb * (ca[k] + cb[k]) as f64 / total as f64;
            }
        }
    }
    expect
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cost_fills_budget() {
        let t = run_until_budget(|_| (0, 1), 5);
        assert_eq!(t.counts[&0], 5);
        assert_eq!(t.consumed, 5);
        assert_eq!(t.discarded, None);
    }

    #[test]
    fn zero_budget_is_empty() {
        let t = run_until_budget(|_| (0, 1), 0);
        assert_eq!(t.completed(), 0);
        assert!(matches!(frequency_estimate(&t), Err(Error::EmptyTally)));
    }

    #[test]
    fn overrun_is_discarded() {
        let costs = [1u64, 2, 3];
        let t = run_until_budget(|i| (i as usize, costs[i as usize % 3]), 4);
        assert_eq!(t.consumed, 3);
        assert_eq!(t.discarded, Some(2));
        assert!(t.consumed + t.discarded_cost > t.budget);
    }

    #[test]
    fn frequencies() {
        let mut t = OutcomeTally::default();
        t.counts.insert(0, 3);
        t.counts.insert(1, 1);
        let f = frequency_estimate(&t).unwrap();
        assert_eq!(f[&0], 0.75);
        assert_eq!(f[&1], 0.25);
    }

    #[test]
    fn two_class_enumeration_is_unbiased() {
        let classes = [OutcomeClass { cost: 1, prob: 0.5 }, OutcomeClass { cost: 2, prob: 0.5 }];
        let (e, empty) = exact_frequency_expectation(&classes, 3);
        assert_eq!(empty, 0.0);
        assert!((e[0] - 0.5).abs() < 1e-15);
        assert!((e[1] - 0.5).abs() < 1e-15);
    }
}
