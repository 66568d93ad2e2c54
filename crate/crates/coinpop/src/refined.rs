//! Refined sampling, the filter target f_d, the filter-then-estimate
//! procedure given a rough guess of ρ, and the budget-driven optimal estimator.

use rayon::prelude::*;
use serde::Serialize;

use crate::coin_model::{virtual_block_size, CoinPopulation, CoinView, RngStream};
use crate::estimators::{walk_coins, RunReport, SingleCoinEstimatorSpec};
use crate::math::{binom_pmf, choose, ln_choose, median, odd_ceil};
use crate::walk_core::survival_derivatives;
use crate::{Error, Result};

/// Normalizer of the depth law, (√8−1)/√8 = 1 − 2^(−1.5).
pub fn depth_normalizer() -> f64 {
    1.0 - 2f64.powf(-1.5)
}

/// Deepest level used by default (2^15 flips).
pub const DEFAULT_MAX_LEVEL: u32 = 15;

/// Distribution of refined-sampling depth over powers of two:
/// Pr(2^i) = c·2^(−1.5 i), with the tail beyond `max_level` folded into the last level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLaw {
    max_level: u32,
}

impl Default for DepthLaw {
    fn default() -> Self {
        Self { max_level: DEFAULT_MAX_LEVEL }
    }
}

impl DepthLaw {
    pub fn new(max_level: u32) -> Self {
        Self { max_level }
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    /// Probability of level i (depth 2^i).
    pub fn level_prob(&self, level: u32) -> f64 {
        if level > self.max_level {
            return 0.0;
        }
        let tail = 2f64.powf(-1.5 * level as f64);
        if level == self.max_level {
            tail
        } else {
            depth_normalizer() * tail
        }
    }

    /// Untruncated law: Pr(2^i) = c·2^(−1.5 i).
    pub fn untruncated_prob(level: u32) -> f64 {
        depth_normalizer() * 2f64.powf(-1.5 * level as f64)
    }

    /// Importance weight for a depth, 1/Pr(depth).
    pub fn weight(&self, level: u32) -> f64 {
        1.0 / self.level_prob(level)
    }

    pub fn sample_level(&self, rng_uniform: f64) -> u32 {
        let mut acc = 0.0;
        for level in 0..self.max_level {
            acc += self.level_prob(level);
            if rng_uniform < acc {
                return level;
            }
        }
        self.max_level
    }

    pub fn expected_depth(&self) -> f64 {
        (0..=self.max_level).map(|i| self.level_prob(i) * (1u64 << i) as f64).sum()
    }
}

pub fn sample_depth(law: &DepthLaw, rng: &mut RngStream) -> u64 {
    1u64 << law.sample_level(rng.uniform())
}

/// Hypergeometric smoothing term: E[f(i/(n/2))] where i is the number of heads
/// in a uniformly random half of n flips containing k heads.
pub fn half_sample_average(f: &impl Fn(f64) -> f64, n: usize, k: usize) -> f64 {
    let h = n / 2;
    let lo = k.saturating_sub(h);
    let hi = k.min(h);
    if n <= 60 {
        let total = choose(n, k);
        return (lo..=hi)
            .map(|i| f(i as f64 / h as f64) * choose(h, i) * choose(h, k - i) / total)
            .sum();
    }
    let ln_total = ln_choose(n, k);
    (lo..=hi)
        .map(|i| {
            let w = (ln_choose(h, i) + ln_choose(h, k - i) - ln_total).exp();
            f(i as f64 / h as f64) * w
        })
        .sum()
}

/// Unweighted difference term at depth n with k heads.
pub fn level_difference(f: &impl Fn(f64) -> f64, n: usize, k: usize) -> f64 {
    let top = f(k as f64 / n as f64);
    if n == 1 {
        top
    } else {
        top - half_sample_average(f, n, k)
    }
}

/// One refined sample of f at the coin's bias. Returns (value, virtual flips).
pub fn refined_sample(
    view: &mut CoinView<'_>,
    f: &impl Fn(f64) -> f64,
    law: &DepthLaw,
) -> (f64, u64) {
    let level = law.sample_level(view.uniform());
    let n = 1usize << level;
    let k = (0..n).filter(|_| view.flip()).count();
    (law.weight(level) * level_difference(f, n, k), n as u64)
}

/// Exact expectation of the level-n difference term times its probability
/// and weight, i.e. E[diff at depth n] under Bin(n, p).
pub fn level_expectation(f: &impl Fn(f64) -> f64, p: f64, n: usize) -> f64 {
    (0..=n).map(|k| binom_pmf(n, k, p) * level_difference(f, n, k)).sum()
}

/// Exact expectation of the refined estimator restricted to depths ≤ `depth`.
pub fn truncated_expectation(f: &impl Fn(f64) -> f64, p: f64, depth: usize) -> f64 {
    let mut n = 1;
    let mut total = 0.0;
    while n <= depth {
        total += level_expectation(f, p, n);
        n *= 2;
    }
    total
}

/// Exact contribution of depth 2^level to the second moment of the estimator.
pub fn level_second_moment(f: &impl Fn(f64) -> f64, p: f64, law: &DepthLaw, level: u32) -> f64 {
    let n = 1usize << level;
    let w = law.weight(level);
    w * (0..=n)
        .map(|k| {
            let d = level_difference(f, n, k);
            binom_pmf(n, k, p) * d * d
        })
        .sum::<f64>()
}

/// f_d: 0 up to ¼, 1/S_d above ¾, and a quintic in between matching value
/// and two derivatives at both knots.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFunction {
    d: usize,
    // coefficients of t^3, t^4, t^5 with t = (p − ¼)/½
    bridge: [f64; 3],
}

impl TargetFunction {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("filter depth must be positive".into()));
        }
        let (s, s1, s2) = survival_derivatives(d, 0.75);
        let value = 1.0 / s;
        let slope = -s1 / (s * s);
        let curve = (2.0 * s1 * s1 - s * s2) / (s * s * s);
        // derivatives with respect to t
        let g = slope * 0.5;
        let h = curve * 0.25;
        let a = 10.0 * value - 4.0 * g + 0.5 * h;
        let b = -15.0 * value + 7.0 * g - h;
        let c = 6.0 * value - 3.0 * g + 0.5 * h;
        Ok(Self { d, bridge: [a, b, c] })
    }

    pub fn depth(&self) -> usize {
        self.d
    }

    pub fn eval(&self, p: f64) -> f64 {
        if p <= 0.25 {
            0.0
        } else if p >= 0.75 {
            1.0 / survival_derivatives(self.d, p).0
        } else {
            let t = (p - 0.25) / 0.5;
            let [a, b, c] = self.bridge;
            t * t * t * (a + t * (b + t * c))
        }
    }

    /// Closure form for the refined-sampling helpers.
    pub fn as_fn(&self) -> impl Fn(f64) -> f64 + Sync + '_ {
        move |p| self.eval(p)
    }
}

pub fn build_target_function(d: usize) -> Result<TargetFunction> {
    TargetFunction::new(d)
}

/// Filter depth for a rough ρ guess: ⌈8 ln(2/ρ̂)⌉.
pub fn filter_depth(rho_hat: f64) -> usize {
    ((8.0 * (2.0 / rho_hat).ln()).ceil() as usize).max(1)
}

/// Parameters of one filter-then-estimate run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetedPlan {
    pub budget: u64,
    pub coins: usize,
    pub depth: usize,
    pub rho_hat: f64,
}

/// Default constant in coins = ⌈c·Δ²·B⌉.
pub const DEFAULT_COIN_FACTOR: f64 = 0.5;

impl BudgetedPlan {
    pub fn new(budget: u64, delta: f64, rho_hat: f64, coin_factor: f64) -> Result<Self> {
        if !(rho_hat > 0.0 && rho_hat < 1.0) {
            return Err(Error::InvalidConfig(format!("rho_hat {rho_hat} outside (0,1)")));
        }
        let coins = ((coin_factor * delta * delta * budget as f64).ceil() as usize).max(1);
        Ok(Self { budget, coins, depth: filter_depth(rho_hat), rho_hat })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub report: RunReport,
    /// Coins that passed the filter and ran refined sampling.
    pub survivors: u64,
    /// True when the flip budget cut the run short.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy)]
struct FilteredCoin {
    value: f64,
    raw_flips: u64,
    survived: bool,
}

/// Filter each virtual coin by a ≤ d-flip walk that stops on a tails
/// majority, then refined-sample f_d on survivors. The mean is over coins that
/// fit in the flip budget; a coin that would overrun it is dropped and the run ends.
pub fn filter_then_estimate(
    pop: &CoinPopulation,
    plan: &BudgetedPlan,
    rng: &RngStream,
) -> Result<FilterReport> {
    let target = TargetFunction::new(plan.depth)?;
    let law = DepthLaw::default();
    let block = virtual_block_size(pop.delta());
    let f = target.as_fn();
    let results: Vec<FilteredCoin> = (0..plan.coins as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.child(i);
            let coin = pop.draw_coin(&mut r);
            let mut view = CoinView::new(coin, block, &mut r);
            let mut heads = 0usize;
            for n in 1..=plan.depth {
                if view.flip() {
                    heads += 1;
                }
                if 2 * heads <= n {
                    return FilteredCoin { value: 0.0, raw_flips: view.raw_flips(), survived: false };
                }
            }
            let (value, _) = refined_sample(&mut view, &f, &law);
            FilteredCoin { value, raw_flips: view.raw_flips(), survived: true }
        })
        .collect();

    let mut report = RunReport::new(rng);
    let mut sum = 0.0;
    let mut survivors = 0;
    let mut truncated = false;
    for c in &results {
        if report.flips_used + c.raw_flips > plan.budget {
            truncated = true;
            report.flips_used = plan.budget;
            break;
        }
        report.flips_used += c.raw_flips;
        report.coins_used += 1;
        sum += c.value;
        survivors += c.survived as u64;
    }
    if report.coins_used > 0 {
        report.empty = false;
        report.estimate = sum / report.coins_used as f64;
        report.group_means = vec![report.estimate];
    }
    Ok(FilterReport { report, survivors, truncated })
}

/// Constants of the three-stage optimal estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalConfig {
    /// Stage-1 coins = ⌈Δ²B / this⌉.
    pub stage1_coin_divisor: f64,
    /// Walk error parameter for stages 1 and 2 = this / (Δ²B).
    pub walk_eps_scale: f64,
    /// Stage-3 coins = ⌈this·Δ²·(B/2)⌉.
    pub stage3_coin_factor: f64,
}

impl Default for OptimalConfig {
    fn default() -> Self {
        Self { stage1_coin_divisor: 8.0, walk_eps_scale: 8.0, stage3_coin_factor: DEFAULT_COIN_FACTOR }
    }
}

/// Largest walk error parameter used by the early stages.
const MAX_STAGE_EPS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimalStatus {
    /// Returned the stage-1 triangular-walk estimate.
    Early,
    /// Returned the stage-3 filter estimate.
    Filtered,
    Failed,
}

impl OptimalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Early => "early",
            Self::Filtered => "filtered",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalReport {
    pub status: OptimalStatus,
    pub report: RunReport,
    pub rho_hat: Option<f64>,
    pub stage_flips: [u64; 3],
    pub stage3: Option<FilterReport>,
}

/// Result of a capped single-group triangular walk.
struct CappedWalk {
    mean: f64,
    flips: u64,
    overran: bool,
}

fn capped_walk(
    pop: &CoinPopulation,
    spec: &SingleCoinEstimatorSpec,
    coins: usize,
    cap: u64,
    rng: &RngStream,
) -> CappedWalk {
    let results = walk_coins(pop, spec, 0, coins, rng);
    let mut flips = 0u64;
    let mut sum = 0.0;
    for r in &results {
        if flips + r.raw_flips > cap {
            return CappedWalk { mean: 0.0, flips: cap, overran: true };
        }
        flips += r.raw_flips;
        sum += r.value;
    }
    let mean = if coins == 0 { 0.0 } else { sum / coins as f64 };
    CappedWalk { mean, flips, overran: false }
}

/// Three-stage estimator under a hard budget of `budget` raw flips.
pub fn optimal_estimate(
    pop: &CoinPopulation,
    budget: u64,
    config: &OptimalConfig,
    rng: &RngStream,
) -> Result<OptimalReport> {
    let d2b = pop.delta() * pop.delta() * budget as f64;
    let quarter = budget / 4;
    let eps = (config.walk_eps_scale / d2b).min(MAX_STAGE_EPS);
    let spec = SingleCoinEstimatorSpec::for_eps(eps)?;
    let mut out = OptimalReport {
        status: OptimalStatus::Failed,
        report: RunReport::new(rng),
        rho_hat: None,
        stage_flips: [0; 3],
        stage3: None,
    };

    let coins1 = ((d2b / config.stage1_coin_divisor).ceil() as usize).max(1);
    let s1 = capped_walk(pop, &spec, coins1, quarter, &rng.child(1));
    out.stage_flips[0] = s1.flips;
    if !s1.overran {
        out.status = OptimalStatus::Early;
        out.report.estimate = s1.mean;
        out.report.empty = false;
        out.report.coins_used = coins1 as u64;
        out.report.group_means = vec![s1.mean];
        out.report.flips_used = s1.flips;
        return Ok(out);
    }

    let coins2 = (d2b.sqrt().ceil() as usize).max(1);
    let s2 = capped_walk(pop, &spec, coins2, quarter, &rng.child(2));
    out.stage_flips[1] = s2.flips;
    if s2.overran {
        out.report.flips_used = s1.flips + s2.flips;
        return Ok(out);
    }
    let floor = (1.0 / d2b).min(0.5);
    let rho_hat = s2.mean.clamp(floor, 0.5);
    out.rho_hat = Some(rho_hat);

    let plan = BudgetedPlan::new(budget / 2, pop.delta(), rho_hat, config.stage3_coin_factor)?;
    let s3 = filter_then_estimate(pop, &plan, &rng.child(3))?;
    out.stage_flips[2] = s3.report.flips_used;
    out.report.flips_used = out.stage_flips.iter().sum();
    out.report.coins_used = (coins1 + coins2) as u64 + s3.report.coins_used;
    if !s3.report.empty {
        out.status = OptimalStatus::Filtered;
        out.report.estimate = s3.report.estimate;
        out.report.empty = false;
        out.report.group_means = vec![s3.report.estimate];
    }
    out.stage3 = Some(s3);
    assert!(out.report.flips_used <= budget, "optimal estimator overran its budget");
    Ok(out)
}

/// Repetitions for the boosted estimator: smallest odd ≥ 18 ln(1/δ), at least 3.
pub fn boost_repetitions(delta_fail: f64) -> usize {
    if delta_fail >= 1.0 {
        return 3;
    }
    odd_ceil(18.0 * (1.0 / delta_fail).ln()).max(3)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoostedReport {
    pub estimate: Option<f64>,
    pub runs: Vec<OptimalReport>,
    pub flips_used: u64,
}

impl BoostedReport {
    pub fn failed(&self) -> bool {
        self.estimate.is_none()
    }
}

/// Median of independent runs of [`optimal_estimate`], skipping failed runs.
pub fn optimal_estimate_boosted(
    pop: &CoinPopulation,
    budget: u64,
    delta_fail: f64,
    config: &OptimalConfig,
    rng: &RngStream,
) -> Result<BoostedReport> {
    let reps = boost_repetitions(delta_fail);
    let runs = (0..reps as u64)
        .map(|i| optimal_estimate(pop, budget, config, &rng.child(i)))
        .collect::<Result<Vec<_>>>()?;
    let ok: Vec<f64> = runs
        .iter()
        .filter(|r| r.status != OptimalStatus::Failed)
        .map(|r| r.report.estimate)
        .collect();
    let flips_used = runs.iter().map(|r| r.report.flips_used).sum();
    Ok(BoostedReport { estimate: median(&ok), runs, flips_used })
}
