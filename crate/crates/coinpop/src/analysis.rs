//! Distances between finite distributions, exact transcript distributions of
//! small decision trees, and the single-rule Hellinger and mutual-information
//! computations used to check the lower-bound machinery numerically.

use serde::Serialize;

use crate::coin_model::{BiasDistribution, RngStream};
use crate::design_opt::{information_functional, MomentTable};
use crate::math::{binom_pmf, ln_choose};
use crate::walk_core::StoppingRule;
use crate::{Error, Result};

pub mod suites;

/// Tolerance on the total mass of a [`FiniteDistribution`]. Probabilities
/// built from products of moments drift from 1 by a few ulps per term.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteDistribution {
    probs: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidFinite("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidFinite(format!("bad probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidFinite(format!("mass {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of a set of outcomes given as a membership mask.
    pub fn event_prob(&self, event: &[bool]) -> f64 {
        self.probs.iter().zip(event).filter(|(_, &e)| e).map(|(p, _)| p).sum()
    }
}

fn same_support(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    Ok(())
}

/// 1 − Σ√(p q) over unnormalized weight vectors of equal length.
pub fn hellinger_sq_raw(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc).clamp(0.0, 1.0)
}

/// Σ p ln(p/q) in nats; +∞ when some q = 0 < p.
pub fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return f64::INFINITY;
        }
        total += a * (a / b).ln();
    }
    total.max(0.0)
}

pub fn hellinger_sq(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    same_support(p, q)?;
    Ok(hellinger_sq_raw(&p.probs, &q.probs))
}

pub fn kl_div(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    same_support(p, q)?;
    Ok(kl_raw(&p.probs, &q.probs))
}

/// Σ|p − q|.
pub fn l1_distance(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    same_support(p, q)?;
    Ok(p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum())
}

/// sup_E |P(E) − Q(E)| = ½Σ|p − q|.
pub fn total_variation(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    Ok(0.5 * l1_distance(p, q)?)
}

/// Result of checking the two distance inequalities on one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinskerCheck {
    pub total_variation: f64,
    pub hellinger: f64,
    pub kl: f64,
    /// P(E) + Q(not E).
    pub error_mass: f64,
    pub tv_holds: bool,
    pub high_prob_holds: bool,
}

/// TV ≤ √2·H and P(E) + Q(Ē) ≥ ½e^(−KL(P‖Q)).
pub fn pinsker_check(p: &FiniteDistribution, q: &FiniteDistribution, event: &[bool]) -> Result<PinskerCheck> {
    same_support(p, q)?;
    if event.len() != p.len() {
        return Err(Error::SupportMismatch(event.len(), p.len()));
    }
    let tv = total_variation(p, q)?;
    let h = hellinger_sq(p, q)?.sqrt();
    let kl = kl_div(p, q)?;
    let not_event: Vec<bool> = event.iter().map(|e| !e).collect();
    let error_mass = p.event_prob(event) + q.event_prob(&not_event);
    Ok(PinskerCheck {
        total_variation: tv,
        hellinger: h,
        kl,
        error_mass,
        tv_holds: tv <= 2f64.sqrt() * h + 1e-12,
        high_prob_holds: error_mass + 1e-12 >= 0.5 * (-kl).exp(),
    })
}

/// Deterministic multi-coin algorithm: flip a coin, branch on the result.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionTree {
    Leaf,
    Flip { coin: usize, heads: Box<DecisionTree>, tails: Box<DecisionTree> },
}

/// Largest tree handled exactly.
pub const MAX_TREE_COINS: usize = 3;
pub const MAX_TREE_DEPTH: usize = 5;

impl DecisionTree {
    pub fn flip(coin: usize, heads: DecisionTree, tails: DecisionTree) -> Self {
        Self::Flip { coin, heads: Box::new(heads), tails: Box::new(tails) }
    }

    pub fn depth(&self) -> usize {
        match self {
            Self::Leaf => 0,
            Self::Flip { heads, tails, .. } => 1 + heads.depth().max(tails.depth()),
        }
    }

    /// One more than the largest coin index used.
    pub fn coin_count(&self) -> usize {
        match self {
            Self::Leaf => 0,
            Self::Flip { coin, heads, tails } => (coin + 1).max(heads.coin_count()).max(tails.coin_count()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Self::Leaf => 1,
            Self::Flip { heads, tails, .. } => heads.leaf_count() + tails.leaf_count(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth() > MAX_TREE_DEPTH || self.coin_count() > MAX_TREE_COINS {
            return Err(Error::InvalidConfig(format!(
                "tree uses {} coins at depth {}; limit is {MAX_TREE_COINS} coins, depth {MAX_TREE_DEPTH}",
                self.coin_count(),
                self.depth()
            )));
        }
        Ok(())
    }

    /// Root-to-leaf flip sequences, heads branch first.
    pub fn leaf_paths(&self) -> Vec<Vec<(usize, bool)>> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.collect_paths(&mut path, &mut out);
        out
    }

    fn collect_paths(&self, path: &mut Vec<(usize, bool)>, out: &mut Vec<Vec<(usize, bool)>>) {
        match self {
            Self::Leaf => out.push(path.clone()),
            Self::Flip { coin, heads, tails } => {
                path.push((*coin, true));
                heads.collect_paths(path, out);
                path.pop();
                path.push((*coin, false));
                tails.collect_paths(path, out);
                path.pop();
            }
        }
    }

    /// Random tree: every node above the depth limit flips with probability ½
    /// (the root always flips), coins uniform over `coins`.
    pub fn random(rng: &mut RngStream, coins: usize, depth: usize) -> Self {
        Self::random_node(rng, coins, depth, true)
    }

    fn random_node(rng: &mut RngStream, coins: usize, depth: usize, root: bool) -> Self {
        if depth == 0 || (!root && rng.bernoulli(0.5)) {
            return Self::Leaf;
        }
        let coin = rng.below(coins);
        let heads = Self::random_node(rng, coins, depth - 1, false);
        let tails = Self::random_node(rng, coins, depth - 1, false);
        Self::flip(coin, heads, tails)
    }

    /// Runs the tree on concrete biases and returns the leaf index.
    pub fn simulate(&self, biases: &[f64], rng: &mut RngStream) -> usize {
        let mut node = self;
        let mut index = 0;
        loop {
            match node {
                Self::Leaf => return index,
                Self::Flip { coin, heads, tails } => {
                    if rng.bernoulli(biases[*coin]) {
                        node = heads;
                    } else {
                        index += heads.leaf_count();
                        node = tails;
                    }
                }
            }
        }
    }
}

fn check_dists(tree: &DecisionTree, coin_dists: &[BiasDistribution]) -> Result<()> {
    tree.validate()?;
    if coin_dists.len() < tree.coin_count() {
        return Err(Error::InvalidConfig(format!(
            "tree uses {} coins, {} distributions given",
            tree.coin_count(),
            coin_dists.len()
        )));
    }
    Ok(())
}

/// Leaf distribution: each leaf gets Π_j E[p^h_j (1−p)^t_j] over coins j.
pub fn transcript_distribution(
    tree: &DecisionTree,
    coin_dists: &[BiasDistribution],
) -> Result<FiniteDistribution> {
    check_dists(tree, coin_dists)?;
    let probs = tree
        .leaf_paths()
        .iter()
        .map(|path| {
            coin_dists
                .iter()
                .enumerate()
                .map(|(j, dist)| {
                    let h = path.iter().filter(|&&(c, r)| c == j && r).count() as i32;
                    let t = path.iter().filter(|&&(c, r)| c == j && !r).count() as i32;
                    dist.expect(|p| p.powi(h) * (1.0 - p).powi(t))
                })
                .product()
        })
        .collect();
    FiniteDistribution::new(probs)
}

/// Same distribution computed flip by flip with Bayesian updates of each
/// coin's posterior; used to cross-check the product formula.
pub fn transcript_distribution_sequential(
    tree: &DecisionTree,
    coin_dists: &[BiasDistribution],
) -> Result<FiniteDistribution> {
    check_dists(tree, coin_dists)?;
    let weights: Vec<Vec<f64>> =
        coin_dists.iter().map(|d| d.atoms().iter().map(|a| a.weight).collect()).collect();
    let mut out = Vec::with_capacity(tree.leaf_count());
    walk_posterior(tree, coin_dists, weights, 1.0, &mut out);
    FiniteDistribution::new(out)
}

fn walk_posterior(
    node: &DecisionTree,
    dists: &[BiasDistribution],
    weights: Vec<Vec<f64>>,
    mass: f64,
    out: &mut Vec<f64>,
) {
    match node {
        DecisionTree::Leaf => out.push(mass),
        DecisionTree::Flip { coin, heads, tails } => {
            let atoms = dists[*coin].atoms();
            let w = &weights[*coin];
            let total: f64 = w.iter().sum();
            let heads_w: Vec<f64> = w.iter().zip(atoms).map(|(x, a)| x * a.bias).collect();
            let tails_w: Vec<f64> = w.iter().zip(atoms).map(|(x, a)| x * (1.0 - a.bias)).collect();
            let p_heads = if total > 0.0 { heads_w.iter().sum::<f64>() / total } else { 0.0 };
            let mut hw = weights.clone();
            hw[*coin] = heads_w;
            walk_posterior(heads, dists, hw, mass * p_heads, out);
            let mut tw = weights;
            tw[*coin] = tails_w;
            walk_posterior(tails, dists, tw, mass * (1.0 - p_heads), out);
        }
    }
}

/// Empirical leaf frequencies from `samples` runs with freshly drawn biases.
pub fn simulate_transcript(
    tree: &DecisionTree,
    coin_dists: &[BiasDistribution],
    samples: u64,
    rng: &mut RngStream,
) -> Result<FiniteDistribution> {
    check_dists(tree, coin_dists)?;
    let mut counts = vec![0u64; tree.leaf_count()];
    for _ in 0..samples {
        let biases: Vec<f64> = coin_dists.iter().map(|d| d.sample(rng)).collect();
        counts[tree.simulate(&biases, rng)] += 1;
    }
    FiniteDistribution::new(counts.iter().map(|&c| c as f64 / samples as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionCheck {
    pub full: f64,
    pub per_coin: Vec<f64>,
}

impl ReductionCheck {
    pub fn per_coin_sum(&self) -> f64 {
        self.per_coin.iter().sum()
    }
}

/// H² between all coins from A and all from B, and for each coin i the H²
/// with coin i from A vs B while every other coin comes from (A+B)/2.
pub fn verify_reduction(
    tree: &DecisionTree,
    a: &BiasDistribution,
    b: &BiasDistribution,
) -> Result<ReductionCheck> {
    let coins = tree.coin_count().max(1);
    let full = hellinger_sq(
        &transcript_distribution(tree, &vec![a.clone(); coins])?,
        &transcript_distribution(tree, &vec![b.clone(); coins])?,
    )?;
    let half = BiasDistribution::mixture(a, 0.5, b);
    let per_coin = per_coin_hellinger(tree, a, b, &half, coins)?;
    Ok(ReductionCheck { full, per_coin })
}

fn per_coin_hellinger(
    tree: &DecisionTree,
    a: &BiasDistribution,
    b: &BiasDistribution,
    others: &BiasDistribution,
    coins: usize,
) -> Result<Vec<f64>> {
    (0..coins)
        .map(|i| {
            let mut da = vec![others.clone(); coins];
            let mut db = da.clone();
            da[i] = a.clone();
            db[i] = b.clone();
            hellinger_sq(&transcript_distribution(tree, &da)?, &transcript_distribution(tree, &db)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlReductionCheck {
    pub full: f64,
    pub per_coin: Vec<f64>,
    /// full / Σ per_coin (0 when both vanish).
    pub ratio: f64,
}

/// KL between transcripts with all coins from ρA + (1−ρ)B vs from
/// (ρ+ε)A + (1−ρ−ε)B, and per-coin H² with the other coins drawn from the
/// ρ-mixture.
pub fn verify_reduction_kl(
    tree: &DecisionTree,
    a: &BiasDistribution,
    b: &BiasDistribution,
    rho: f64,
    eps: f64,
) -> Result<KlReductionCheck> {
    if !(eps < rho) {
        return Err(Error::EpsilonTooLarge { eps, rho });
    }
    if !(eps >= 0.0 && rho + eps <= 1.0) {
        return Err(Error::InvalidConfig(format!("need 0 ≤ ε and ρ+ε ≤ 1, got ρ={rho}, ε={eps}")));
    }
    let coins = tree.coin_count().max(1);
    let low = BiasDistribution::mixture(a, rho, b);
    let high = BiasDistribution::mixture(a, rho + eps, b);
    let full = kl_div(
        &transcript_distribution(tree, &vec![low.clone(); coins])?,
        &transcript_distribution(tree, &vec![high.clone(); coins])?,
    )?;
    let per_coin = per_coin_hellinger(tree, &low, &high, &low, coins)?;
    let sum: f64 = per_coin.iter().sum();
    let ratio = if sum > 0.0 { full / sum } else { 0.0 };
    Ok(KlReductionCheck { full, per_coin, ratio })
}

/// Moment tables of the two-point populations ½+Δ and ½−Δ.
pub fn two_point_tables(delta: f64, n_max: usize) -> Result<(MomentTable, MomentTable)> {
    Ok((
        MomentTable::new(&BiasDistribution::point(0.5 + delta)?, n_max),
        MomentTable::new(&BiasDistribution::point(0.5 - delta)?, n_max),
    ))
}

fn termination_mixture(
    rule: &StoppingRule,
    hplus: &MomentTable,
    hminus: &MomentTable,
    w: f64,
) -> Vec<f64> {
    let alpha = rule.coefficients().alpha;
    alpha
        .cells()
        .map(|(n, k)| alpha.get(n, k) * (w * hplus.get(n, k) + (1.0 - w) * hminus.get(n, k)))
        .collect()
}

/// H² between one walk's terminal state under the ρ and ρ+ε two-point mixtures.
pub fn rule_hellinger_exact(rule: &StoppingRule, rho: f64, eps: f64, delta: f64) -> Result<f64> {
    let (hp, hm) = two_point_tables(delta, rule.n_max())?;
    let p = termination_mixture(rule, &hp, &hm, rho);
    let q = termination_mixture(rule, &hp, &hm, rho + eps);
    Ok(hellinger_sq_raw(&p, &q))
}

/// Σ α(h⁺−h⁻)²/(ρh⁺+(1−ρ)h⁻), without the ε² factor.
pub fn rule_hellinger_linear_functional(
    rule: &StoppingRule,
    hplus: &MomentTable,
    hminus: &MomentTable,
    rho: f64,
) -> f64 {
    information_functional(&rule.coefficients().alpha, hplus, hminus, rho)
}

/// The two sums of the advice form (ε² factored out): cells before the
/// last row, and the last row, where the walk also learns the coin's bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdviceForm {
    pub interior: f64,
    pub last_row: f64,
}

impl AdviceForm {
    pub fn total(&self) -> f64 {
        self.interior + self.last_row
    }
}

pub fn hellinger_form_with_advice(rule: &StoppingRule, rho: f64, eps: f64, delta: f64) -> Result<AdviceForm> {
    let n_max = rule.n_max();
    let (hp, hm) = two_point_tables(delta, n_max)?;
    let alpha = rule.coefficients().alpha;
    let mid = rho + eps / 2.0;
    let mut form = AdviceForm { interior: 0.0, last_row: 0.0 };
    for (n, k) in alpha.cells() {
        let a = alpha.get(n, k);
        if a == 0.0 {
            continue;
        }
        let (p, m) = (hp.get(n, k), hm.get(n, k));
        let d = rho * p + (1.0 - rho) * m;
        if d <= 0.0 {
            continue;
        }
        let reach = mid * p + (1.0 - mid) * m;
        if n < n_max {
            form.interior += a * reach * (p - m).powi(2) / (d * d);
        } else {
            form.last_row += a * reach * (p / rho + m) / d;
        }
    }
    Ok(form)
}

/// Exact H² when the last row also reveals which population the coin came from.
pub fn advice_hellinger_exact(rule: &StoppingRule, rho: f64, eps: f64, delta: f64) -> Result<f64> {
    let n_max = rule.n_max();
    let (hp, hm) = two_point_tables(delta, n_max)?;
    let alpha = rule.coefficients().alpha;
    let outcomes = |w: f64| -> Vec<f64> {
        let mut v = Vec::new();
        for (n, k) in alpha.cells() {
            let a = alpha.get(n, k);
            if n < n_max {
                v.push(a * (w * hp.get(n, k) + (1.0 - w) * hm.get(n, k)));
            } else {
                v.push(a * w * hp.get(n, k));
                v.push(a * (1.0 - w) * hm.get(n, k));
            }
        }
        v
    };
    Ok(hellinger_sq_raw(&outcomes(rho), &outcomes(rho + eps)))
}

fn ln_binom(n: usize, k: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()
}

fn ln_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// I(S; n flips)/n in nats, S uniform over the ρ and ρ+ε two-point worlds.
pub fn mutual_info_per_sample(n: usize, rho: f64, eps: f64, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one flip".into()));
    }
    if !(rho > 0.0 && rho + eps <= 1.0 && eps >= 0.0) {
        return Err(Error::InvalidConfig(format!("bad scenario ρ={rho}, ε={eps}")));
    }
    let mut total = 0.0;
    for k in 0..=n {
        let up = ln_binom(n, k, 0.5 + delta);
        let down = ln_binom(n, k, 0.5 - delta);
        let mixture = |w: f64| {
            let a = if w > 0.0 { w.ln() + up } else { f64::NEG_INFINITY };
            let b = if w < 1.0 { (1.0 - w).ln() + down } else { f64::NEG_INFINITY };
            ln_add(a, b)
        };
        let lx = mixture(rho);
        let ly = mixture(rho + eps);
        let lm = mixture(rho + eps / 2.0);
        let term = |l: f64| if l == f64::NEG_INFINITY { 0.0 } else { l.exp() * (l - lm) };
        total += term(lx) + term(ly);
    }
    Ok((0.5 * total).max(0.0) / n as f64)
}

/// ε²(2·min(1/ρ, ((1+12Δ²)/(1−4Δ²))^n) + 2)/n.
pub fn mutual_info_upper_bound(n: usize, rho: f64, eps: f64, delta: f64) -> f64 {
    let d2 = delta * delta;
    let growth = (n as f64 * ((1.0 + 12.0 * d2) / (1.0 - 4.0 * d2)).ln()).exp();
    eps * eps * (2.0 * (1.0 / rho).min(growth) + 2.0) / n as f64
}

/// Flip count in 1..=n_limit maximizing the per-sample mutual information.
pub fn mutual_info_argmax(rho: f64, eps: f64, delta: f64, n_limit: usize) -> Result<(usize, f64)> {
    let mut best = (1, f64::NEG_INFINITY);
    for n in 1..=n_limit {
        let v = mutual_info_per_sample(n, rho, eps, delta)?;
        if v > best.1 {
            best = (n, v);
        }
    }
    Ok(best)
}

/// Bin(n, p) as a finite distribution.
pub fn binomial_distribution(n: usize, p: f64) -> Result<FiniteDistribution> {
    FiniteDistribution::new((0..=n).map(|k| binom_pmf(n, k, p)).collect())
}
