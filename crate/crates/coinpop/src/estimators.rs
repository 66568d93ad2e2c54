//! The single-coin estimate, the triangular-walk estimator with
//! median-of-means, and the majority-vote baseline.

use rayon::prelude::*;
use serde::Serialize;

use crate::budget::{budgeted_twalk, BudgetedEstimate};
use crate::coin_model::{
    virtual_block_size, CoinPopulation, CoinView, RngStream, GENERATOR,
};
use crate::math::{ln_choose, median, odd_ceil};
use crate::walk_core::{run_walk, stop_probability, StoppingRule, Triangle, WalkOutcome};
use crate::{Error, Result};

/// Output values at the cap are bounded by this.
pub const DEFAULT_VALUE_CAP: f64 = 4.0;

/// Walk depth for a target error: ⌈24 ln(1/ε)⌉, bumped to odd.
pub fn n_max_for_eps(eps: f64) -> usize {
    odd_ceil(24.0 * (1.0 / eps).ln())
}

/// Parameters of the single-coin walk: the depth cap and the value returned
/// when the cap is reached with k heads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleCoinEstimatorSpec {
    n_max: usize,
    values: Vec<f64>,
}

impl SingleCoinEstimatorSpec {
    /// Default values min(4, n/(2k−n)) for every k with a heads majority.
    pub fn with_default_values(n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidConfig("n_max must be positive".into()));
        }
        let values = (0..=n_max)
            .map(|k| {
                if 2 * k > n_max {
                    DEFAULT_VALUE_CAP.min(n_max as f64 / (2 * k - n_max) as f64)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self { n_max, values })
    }

    pub fn for_eps(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidConfig(format!("eps {eps} outside (0,1)")));
        }
        Self::with_default_values(n_max_for_eps(eps))
    }

    /// Explicit terminal values, indexed by heads count. Entries for k with
    /// 2k ≤ n_max must be zero.
    pub fn with_values(n_max: usize, values: Vec<f64>) -> Result<Self> {
        if n_max == 0 || values.len() != n_max + 1 {
            return Err(Error::InvalidConfig(format!(
                "need {} values for n_max {n_max}, got {}",
                n_max + 1,
                values.len()
            )));
        }
        for (k, v) in values.iter().enumerate() {
            if 2 * k <= n_max && *v != 0.0 {
                return Err(Error::InvalidConfig(format!("value at k={k} must be 0")));
            }
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("value at k={k} is not finite")));
            }
        }
        Ok(Self { n_max, values })
    }

    /// Values given only for the heads-majority terminals, as (k, v) pairs.
    pub fn from_pairs(n_max: usize, pairs: &[(usize, f64)]) -> Result<Self> {
        let mut values = vec![0.0; n_max + 1];
        for &(k, v) in pairs {
            if k > n_max {
                return Err(Error::InvalidConfig(format!("k={k} beyond n_max {n_max}")));
            }
            values[k] = v;
        }
        Self::with_values(n_max, values)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// First heads count with a strict majority at the cap.
    pub fn first_majority(&self) -> usize {
        self.n_max / 2 + 1
    }

    /// The walk as a stopping rule: stop when 2k ≤ n (after the first flip) or at the cap.
    pub fn rule(&self) -> StoppingRule {
        let mut g = Triangle::zeros(self.n_max);
        for n in 1..=self.n_max {
            for k in 0..=n {
                if 2 * k <= n || n == self.n_max {
                    g.set(n, k, 1.0);
                }
            }
        }
        StoppingRule::new(g).expect("walk rule is valid")
    }

    /// Output value on every cell of the triangle (zero off the last row).
    pub fn value_triangle(&self) -> Triangle {
        let mut v = Triangle::zeros(self.n_max);
        for k in 0..=self.n_max {
            v.set(self.n_max, k, self.values[k]);
        }
        v
    }

    /// Number of paths reaching (n_max, k) without a tails-majority prefix.
    pub fn terminal_paths(&self, k: usize) -> f64 {
        let n = self.n_max;
        if 2 * k <= n {
            return 0.0;
        }
        (2 * k - n) as f64 / n as f64 * ln_choose(n, k).exp()
    }
}

/// Exact first two moments and expected length of the walk for a fixed bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkMoments {
    pub mean: f64,
    pub second_moment: f64,
    pub expected_flips: f64,
}

pub fn walk_moments(spec: &SingleCoinEstimatorSpec, p: f64) -> WalkMoments {
    let coeffs = spec.rule().coefficients();
    let (mut mean, mut second, mut flips) = (0.0, 0.0, 0.0);
    for (n, k) in coeffs.alpha.cells() {
        let pr = stop_probability(coeffs.alpha.get(n, k), n, k, p);
        if pr == 0.0 {
            continue;
        }
        flips += pr * n as f64;
        if n == spec.n_max {
            let v = spec.value(k);
            mean += pr * v;
            second += pr * v * v;
        }
    }
    WalkMoments { mean, second_moment: second, expected_flips: flips }
}

pub fn expected_output(spec: &SingleCoinEstimatorSpec, p: f64) -> f64 {
    walk_moments(spec, p).mean
}

/// Runs the single-coin walk; returns the value and the number of (virtual) flips.
pub fn single_coin_estimate(view: &mut CoinView<'_>, spec: &SingleCoinEstimatorSpec) -> (f64, usize) {
    let (value, end) = single_coin_walk(view, spec);
    (value, end.n)
}

/// Same walk, reporting the terminal state.
pub fn single_coin_walk(
    view: &mut CoinView<'_>,
    spec: &SingleCoinEstimatorSpec,
) -> (f64, WalkOutcome) {
    let (mut n, mut k) = (0usize, 0usize);
    loop {
        n += 1;
        if view.flip() {
            k += 1;
        }
        if 2 * k <= n {
            return (0.0, WalkOutcome { n, k });
        }
        if n == spec.n_max {
            return (spec.value(k), WalkOutcome { n, k });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MedianOfMeansConfig {
    pub groups: usize,
    pub coins_per_group: usize,
}

impl MedianOfMeansConfig {
    /// Smallest odd integer ≥ 18 ln(1/δ).
    pub fn group_count(delta_fail: f64) -> usize {
        if delta_fail >= 1.0 {
            return 1;
        }
        odd_ceil(18.0 * (1.0 / delta_fail).ln())
    }

    /// Group count from δ and ⌈36·max(ρ̂, ε)/ε²⌉ coins per group.
    pub fn for_accuracy(eps: f64, delta_fail: f64, rho_hat: Option<f64>) -> Self {
        let r = rho_hat.unwrap_or(1.0).max(eps);
        Self {
            groups: Self::group_count(delta_fail),
            coins_per_group: (36.0 * r / (eps * eps)).ceil() as usize,
        }
    }

    pub fn total_coins(&self) -> usize {
        self.groups * self.coins_per_group
    }
}

/// Splits t items into g groups evenly; the remainder goes to the last group.
pub fn group_sizes(t: usize, groups: usize) -> Vec<usize> {
    let groups = groups.max(1);
    let base = t / groups;
    let mut sizes = vec![base; groups];
    sizes[groups - 1] += t - base * groups;
    sizes
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub estimate: f64,
    pub flips_used: u64,
    pub coins_used: u64,
    pub group_means: Vec<f64>,
    pub seed: u64,
    pub stream_id: u64,
    pub generator: String,
    /// No coin or walk completed; the estimate is a placeholder 0.
    pub empty: bool,
}

impl RunReport {
    pub fn new(rng: &RngStream) -> Self {
        Self {
            estimate: 0.0,
            flips_used: 0,
            coins_used: 0,
            group_means: Vec::new(),
            seed: rng.seed(),
            stream_id: rng.stream_id(),
            generator: GENERATOR.to_string(),
            empty: true,
        }
    }
}

/// One coin's walk result: value, raw flips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoinResult {
    pub value: f64,
    pub raw_flips: u64,
}

/// Runs the single-coin walk on coins `first..first+count`, each on its own
/// child stream, in parallel. Results come back in coin order.
pub fn walk_coins(
    pop: &CoinPopulation,
    spec: &SingleCoinEstimatorSpec,
    first: u64,
    count: usize,
    rng: &RngStream,
) -> Vec<CoinResult> {
    let block = virtual_block_size(pop.delta());
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.child(first + i);
            let coin = pop.draw_coin(&mut r);
            let mut view = CoinView::new(coin, block, &mut r);
            let (value, _) = single_coin_estimate(&mut view, spec);
            CoinResult { value, raw_flips: view.raw_flips() }
        })
        .collect()
}

/// Median of group means over already-computed coin values.
pub fn median_of_means(values: &[f64], groups: usize) -> (f64, Vec<f64>) {
    let sizes = group_sizes(values.len(), groups);
    if sizes.contains(&0) {
        return (0.0, Vec::new());
    }
    let mut means = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        let chunk = &values[start..start + s];
        means.push(chunk.iter().sum::<f64>() / s as f64);
        start += s;
    }
    (median(&means).unwrap_or(0.0), means)
}

/// Triangular-walk estimator on `t` coins with an explicit group count.
pub fn triangular_walk_grouped(
    pop: &CoinPopulation,
    spec: &SingleCoinEstimatorSpec,
    t: usize,
    groups: usize,
    rng: &RngStream,
) -> RunReport {
    let results = walk_coins(pop, spec, 0, t, rng);
    let values: Vec<f64> = results.iter().map(|r| r.value).collect();
    let (estimate, group_means) = median_of_means(&values, groups);
    let mut report = RunReport::new(rng);
    report.empty = group_means.is_empty();
    report.estimate = estimate;
    report.group_means = group_means;
    report.coins_used = t as u64;
    report.flips_used = results.iter().map(|r| r.raw_flips).sum();
    report
}

/// Triangular-walk estimator: walks of depth set by `eps`, median of
/// 18 ln(1/δ) group means.
pub fn triangular_walk_estimate(
    pop: &CoinPopulation,
    t: usize,
    eps: f64,
    delta_fail: f64,
    rng: &RngStream,
) -> Result<RunReport> {
    let spec = SingleCoinEstimatorSpec::for_eps(eps)?;
    let groups = MedianOfMeansConfig::group_count(delta_fail);
    Ok(triangular_walk_grouped(pop, &spec, t, groups, rng))
}

/// Decoupled form: `eps_walk` sets the walk depth (misclassification level),
/// `eps_accuracy` and `rho_hat` set the coin count. One group.
pub fn triangular_walk_decoupled(
    pop: &CoinPopulation,
    eps_accuracy: f64,
    eps_walk: f64,
    rho_hat: f64,
    rng: &RngStream,
) -> Result<RunReport> {
    let spec = SingleCoinEstimatorSpec::for_eps(eps_walk)?;
    let t = MedianOfMeansConfig::for_accuracy(eps_accuracy, 1.0, Some(rho_hat)).coins_per_group;
    Ok(triangular_walk_grouped(pop, &spec, t, 1, rng))
}

/// Runs walks until the flip budget is spent and averages the completed ones.
pub fn anytime_estimate(
    pop: &CoinPopulation,
    eps: f64,
    flip_budget: u64,
    rng: &RngStream,
) -> Result<BudgetedEstimate> {
    let spec = SingleCoinEstimatorSpec::for_eps(eps)?;
    Ok(budgeted_twalk(pop, &spec, flip_budget, rng))
}

/// Fraction of `coins` sampled coins whose majority over `flips_per_coin` raw flips is heads.
pub fn majority_vote_estimate(
    pop: &CoinPopulation,
    coins: usize,
    flips_per_coin: usize,
    rng: &RngStream,
) -> Result<RunReport> {
    if flips_per_coin.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "flips per coin must be odd, got {flips_per_coin}"
        )));
    }
    let votes: Vec<bool> = (0..coins as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.child(i);
            let coin = pop.draw_coin(&mut r);
            let mut view = CoinView::raw(coin, &mut r);
            let heads = (0..flips_per_coin).filter(|_| view.flip()).count();
            2 * heads > flips_per_coin
        })
        .collect();
    let mut report = RunReport::new(rng);
    report.coins_used = coins as u64;
    report.flips_used = (coins * flips_per_coin) as u64;
    if coins > 0 {
        report.empty = false;
        report.estimate = votes.iter().filter(|&&v| v).count() as f64 / coins as f64;
        report.group_means = vec![report.estimate];
    }
    Ok(report)
}

/// Walks a general rule on raw flips and returns v at the stopping state.
pub fn rule_walk_value(
    view: &mut CoinView<'_>,
    rule: &StoppingRule,
    values: &Triangle,
) -> (f64, WalkOutcome) {
    let end = run_walk(rule, view);
    (values.get(end.n, end.k), end)
}

/// Median-of-means over `t` coins for a rule with an explicit value
/// triangle, such as a designed estimator loaded from a rule file.
pub fn rule_walk_estimate(
    pop: &CoinPopulation,
    rule: &StoppingRule,
    values: &Triangle,
    t: usize,
    groups: usize,
    rng: &RngStream,
) -> Result<RunReport> {
    if values.depth() != rule.n_max() {
        return Err(Error::InvalidRule("value triangle depth differs from the rule".into()));
    }
    let results: Vec<CoinResult> = (0..t as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.child(i);
            let coin = pop.draw_coin(&mut r);
            let mut view = CoinView::raw(coin, &mut r);
            let (value, _) = rule_walk_value(&mut view, rule, values);
            CoinResult { value, raw_flips: view.raw_flips() }
        })
        .collect();
    let coin_values: Vec<f64> = results.iter().map(|r| r.value).collect();
    let (estimate, group_means) = median_of_means(&coin_values, groups);
    let mut report = RunReport::new(rng);
    report.empty = group_means.is_empty();
    report.estimate = estimate;
    report.group_means = group_means;
    report.coins_used = t as u64;
    report.flips_used = results.iter().map(|r| r.raw_flips).sum();
    Ok(report)
}

/// Worst |E[output] − 1| over the grid points at or above ½ + `delta_floor`.
pub fn max_positive_bias(spec: &SingleCoinEstimatorSpec, delta_floor: f64, grid: &[f64]) -> f64 {
    let w = TerminalWeights::new(spec, delta_floor, grid);
    w.max_error(spec.values())
}

struct TerminalWeights {
    rows: Vec<Vec<f64>>,
    first: usize,
}

impl TerminalWeights {
    fn new(spec: &SingleCoinEstimatorSpec, delta_floor: f64, grid: &[f64]) -> Self {
        let n = spec.n_max();
        let first = spec.first_majority();
        let rows = grid
            .iter()
            .filter(|&&p| p >= 0.5 + delta_floor - 1e-12)
            .map(|&p| {
                (first..=n)
                    .map(|k| stop_probability(spec.terminal_paths(k), n, k, p))
                    .collect()
            })
            .collect();
        Self { rows, first }
    }

    fn max_error(&self, values: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(&values[self.first..]).map(|(w, v)| w * v).sum();
                (e - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Step sizes for the coordinate search, coarse to fine.
const TUNE_STEPS: [f64; 4] = [1.0, 0.1, 0.01, 0.001];
const TUNE_MAX_SWEEPS: usize = 10_000;

/// Coordinate descent on the terminal values, minimizing the worst
/// |E[output] − 1| over grid biases ≥ ½ + `delta_floor`. Values stay ≥ 0.
pub fn tune_output_values(
    spec: &SingleCoinEstimatorSpec,
    delta_floor: f64,
    grid: &[f64],
) -> Result<SingleCoinEstimatorSpec> {
    if delta_floor < 0.25 {
        return Err(Error::InvalidConfig(format!(
            "delta floor {delta_floor} below 1/4; use virtual coins instead"
        )));
    }
    let weights = TerminalWeights::new(spec, delta_floor, grid);
    let mut values = spec.values().to_vec();
    let mut best = weights.max_error(&values);
    for &step in &TUNE_STEPS {
        for _ in 0..TUNE_MAX_SWEEPS {
            let mut improved = false;
            for k in spec.first_majority()..=spec.n_max() {
                let current = values[k];
                let mut choice: Option<(f64, f64)> = None;
                for cand in [current + step, (current - step).max(0.0)] {
                    if cand == current {
                        continue;
                    }
                    values[k] = cand;
                    let e = weights.max_error(&values);
                    if e < best && choice.is_none_or(|(ce, _)| e < ce) {
                        choice = Some((e, cand));
                    }
                }
                match choice {
                    Some((e, cand)) => {
                        values[k] = cand;
                        best = e;
                        improved = true;
                    }
                    None => values[k] = current,
                }
            }
            if !improved {
                break;
            }
        }
    }
    SingleCoinEstimatorSpec::with_values(spec.n_max(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coin_model::{CoinSpec, Label};

    #[test]
    fn depth_for_eps() {
        assert_eq!(n_max_for_eps(0.1), 57);
        assert_eq!(n_max_for_eps(0.02), 95);
    }

    #[test]
    fn default_values_bounded() {
        let spec = SingleCoinEstimatorSpec::with_default_values(15).unwrap();
        assert_eq!(spec.value(7), 0.0);
        assert_eq!(spec.value(8), 4.0);
        assert_eq!(spec.value(15), 1.0);
        assert!(spec.values().iter().all(|v| (0.0..=4.0).contains(v)));
    }

    #[test]
    fn first_flip_tails_stops() {
        let spec = SingleCoinEstimatorSpec::with_default_values(15).unwrap();
        let mut rng = RngStream::new(0, 0);
        let coin = CoinSpec { bias: 0.0, label: Label::Negative };
        let mut view = CoinView::raw(coin, &mut rng);
        assert_eq!(single_coin_estimate(&mut view, &spec), (0.0, 1));
    }

    #[test]
    fn all_heads_reaches_cap() {
        let spec = SingleCoinEstimatorSpec::with_default_values(15).unwrap();
        let mut rng = RngStream::new(0, 0);
        let coin = CoinSpec { bias: 1.0, label: Label::Positive };
        let mut view = CoinView::raw(coin, &mut rng);
        assert_eq!(single_coin_estimate(&mut view, &spec), (1.0, 15));
    }

    #[test]
    fn expected_output_edges() {
        let spec = SingleCoinEstimatorSpec::with_default_values(15).unwrap();
        assert_eq!(expected_output(&spec, 0.0), 0.0);
        assert!((expected_output(&spec, 1.0) - 1.0).abs() < 1e-12);
        assert!(expected_output(&spec, 0.25) <= 0.05);
    }

    #[test]
    fn terminal_paths_match_rule_alpha() {
        let spec = SingleCoinEstimatorSpec::with_default_values(21).unwrap();
        let alpha = spec.rule().coefficients().alpha;
        for k in 0..=21 {
            let a = alpha.get(21, k);
            assert!((a - spec.terminal_paths(k)).abs() <= 1e-9 * a.max(1.0), "k={k}");
        }
    }

    #[test]
    fn group_sizes_put_remainder_last() {
        assert_eq!(group_sizes(10, 3), vec![3, 3, 4]);
        assert_eq!(group_sizes(2, 3), vec![0, 0, 2]);
        assert_eq!(MedianOfMeansConfig::group_count(0.1), 43);
        assert_eq!(MedianOfMeansConfig::group_count(1.0), 1);
    }

    #[test]
    fn empty_group_gives_zero() {
        let pop = CoinPopulation::two_point(0.5, 0.4).unwrap();
        let rng = RngStream::new(3, 0);
        let r = triangular_walk_estimate(&pop, 0, 0.1, 0.1, &rng).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert!(r.empty);
    }

    #[test]
    fn vote_requires_odd_flips() {
        let pop = CoinPopulation::two_point(0.5, 0.4).unwrap();
        let rng = RngStream::new(3, 0);
        assert!(majority_vote_estimate(&pop, 10, 4, &rng).is_err());
        assert!(majority_vote_estimate(&pop, 0, 5, &rng).unwrap().empty);
    }

    #[test]
    fn tune_rejects_low_floor() {
        let spec = SingleCoinEstimatorSpec::with_default_values(15).unwrap();
        assert!(tune_output_values(&spec, 0.1, &[0.9]).is_err());
    }
}
