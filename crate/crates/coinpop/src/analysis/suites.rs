//! Seeded batches of random instances for the distance inequalities. Each
//! instance draws from child stream `i` of `RngStream::new(seed, 0)`, so any
//! row can be replayed from (seed, instance).

use rayon::prelude::*;
use serde::Serialize;

use super::*;
use crate::walk_core::Triangle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Reduction,
    ReductionKl,
    HellingerFunctional,
    Pinsker,
    Mi,
}

impl Suite {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "reduction" => Ok(Self::Reduction),
            "reduction-kl" => Ok(Self::ReductionKl),
            "hellinger-functional" => Ok(Self::HellingerFunctional),
            "pinsker" => Ok(Self::Pinsker),
            "mi" => Ok(Self::Mi),
            other => Err(Error::InvalidConfig(format!("unknown suite `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Reduction => "reduction",
            Self::ReductionKl => "reduction-kl",
            Self::HellingerFunctional => "hellinger-functional",
            Self::Pinsker => "pinsker",
            Self::Mi => "mi",
        }
    }
}

/// One checked instance: `lhs` is the quantity bounded, `rhs` the bound or
/// reference it is compared with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub suite: String,
    pub instance: u64,
    pub seed: u64,
    pub rho: Option<f64>,
    pub eps: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

/// Biases used by the random generators.
pub const BIAS_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// 1 to 3 atoms from [`BIAS_GRID`] with random weights.
pub fn random_bias_distribution(rng: &mut RngStream) -> BiasDistribution {
    let atoms = 1 + rng.below(3);
    let raw: Vec<(f64, f64)> =
        (0..atoms).map(|_| (BIAS_GRID[rng.below(BIAS_GRID.len())], 0.05 + rng.uniform())).collect();
    let total: f64 = raw.iter().map(|a| a.1).sum();
    let mut pairs: Vec<(f64, f64)> = raw.iter().map(|&(b, w)| (b, w / total)).collect();
    let rest: f64 = pairs[1..].iter().map(|a| a.1).sum();
    pairs[0].1 = 1.0 - rest;
    BiasDistribution::from_pairs(&pairs).expect("generated distribution is valid")
}

/// Random tree with 1..=3 coins and depth 1..=5.
pub fn random_tree(rng: &mut RngStream) -> DecisionTree {
    let coins = 1 + rng.below(MAX_TREE_COINS);
    let depth = 1 + rng.below(MAX_TREE_DEPTH);
    DecisionTree::random(rng, coins, depth)
}

/// Random rule of the given depth: each cell above the last row stops with
/// probability 0 half the time, otherwise with a uniform probability.
pub fn random_rule(rng: &mut RngStream, n_max: usize) -> StoppingRule {
    let mut g = Triangle::zeros(n_max);
    for n in 0..=n_max {
        for k in 0..=n {
            let v = if n == n_max {
                1.0
            } else if n == 0 || rng.bernoulli(0.5) {
                0.0
            } else {
                rng.uniform()
            };
            g.set(n, k, v);
        }
    }
    StoppingRule::new(g).expect("generated rule is valid")
}

/// Random distribution on `size` outcomes, some possibly zero.
pub fn random_finite(rng: &mut RngStream, size: usize) -> FiniteDistribution {
    let raw: Vec<f64> =
        (0..size).map(|_| if rng.bernoulli(0.15) { 0.0 } else { rng.uniform() }).collect();
    let total: f64 = raw.iter().sum();
    let probs = if total > 0.0 {
        raw.iter().map(|x| x / total).collect()
    } else {
        let mut v = vec![0.0; size];
        v[0] = 1.0;
        v
    };
    FiniteDistribution::new(probs).expect("generated distribution is valid")
}

/// Band for the exact-vs-functional Hellinger ratio.
pub const HELLINGER_BAND: (f64, f64) = (0.125, 8.0);
/// Empirical cap on D_full / Σ H_i².
pub const KL_RATIO_CAP: f64 = 10.0;

fn instance(suite: Suite, seed: u64, i: u64) -> Result<VerifyRow> {
    let mut rng = RngStream::new(seed, 0).child(i);
    let row = |rho: Option<f64>, eps: Option<f64>, lhs: f64, rhs: f64, ratio: f64, pass: bool| VerifyRow {
        suite: suite.name().to_string(),
        instance: i,
        seed,
        rho,
        eps,
        lhs,
        rhs,
        ratio,
        pass,
    };
    match suite {
        Suite::Reduction => {
            let tree = random_tree(&mut rng);
            let a = random_bias_distribution(&mut rng);
            let b = random_bias_distribution(&mut rng);
            let r = verify_reduction(&tree, &a, &b)?;
            let sum = r.per_coin_sum();
            let ratio = if sum > 0.0 { r.full / sum } else { 0.0 };
            Ok(row(None, None, r.full, sum, ratio, r.full <= sum + 1e-12))
        }
        Suite::ReductionKl => {
            let tree = random_tree(&mut rng);
            let a = random_bias_distribution(&mut rng);
            let b = random_bias_distribution(&mut rng);
            let rho = 0.05 + 0.45 * rng.uniform();
            let eps = rho * (0.001 + 0.099 * rng.uniform());
            let r = verify_reduction_kl(&tree, &a, &b, rho, eps)?;
            let sum: f64 = r.per_coin.iter().sum();
            Ok(row(Some(rho), Some(eps), r.full, sum, r.ratio, r.ratio <= KL_RATIO_CAP))
        }
        Suite::HellingerFunctional => {
            let n_max = 1 + rng.below(20);
            let rule = random_rule(&mut rng, n_max);
            let rho = if i.is_multiple_of(2) { 0.05 } else { 0.2 };
            let eps = rho * (0.001 + 0.099 * rng.uniform());
            let delta = 0.05 + 0.4 * rng.uniform();
            let exact = rule_hellinger_exact(&rule, rho, eps, delta)?;
            let (hp, hm) = two_point_tables(delta, n_max)?;
            let approx = eps * eps * rule_hellinger_linear_functional(&rule, &hp, &hm, rho);
            let ratio = exact / approx;
            let pass = ratio >= HELLINGER_BAND.0 && ratio <= HELLINGER_BAND.1;
            Ok(row(Some(rho), Some(eps), exact, approx, ratio, pass))
        }
        Suite::Pinsker => {
            let size = 2 + rng.below(5);
            let p = random_finite(&mut rng, size);
            let q = random_finite(&mut rng, size);
            let event: Vec<bool> = (0..size).map(|_| rng.bernoulli(0.5)).collect();
            let c = pinsker_check(&p, &q, &event)?;
            let bound = 2f64.sqrt() * c.hellinger;
            let ratio = if bound > 0.0 { c.total_variation / bound } else { 0.0 };
            Ok(row(None, None, c.total_variation, bound, ratio, c.tv_holds && c.high_prob_holds))
        }
        Suite::Mi => {
            // instance i is flip count i+1 at ρ=0.01, Δ=0.3, ε=ρ/2
            let (rho, delta) = (0.01, 0.3);
            let eps = rho / 2.0;
            let n = i as usize + 1;
            let mi = mutual_info_per_sample(n, rho, eps, delta)?;
            let bound = mutual_info_upper_bound(n, rho, eps, delta);
            Ok(row(Some(rho), Some(eps), mi, bound, mi / bound, mi <= bound * (1.0 + 1e-12)))
        }
    }
}

pub fn run_suite(suite: Suite, instances: u64, seed: u64) -> Result<Vec<VerifyRow>> {
    (0..instances).into_par_iter().map(|i| instance(suite, seed, i)).collect()
}
