//! Stopping rules on the Pascal triangle and the walks they generate.
//!
//! A state (n, k) means n flips so far, k of them heads. A rule stops at a
//! state with probability γ(n,k). The derived triangles are
//! β (weighted number of paths reaching a state), α = β·γ (paths stopping
//! there) and η = β − α (paths continuing).

use serde::{Deserialize, Serialize};

use crate::coin_model::CoinView;
use crate::math::{ln_choose, ln_path_weight, path_weight};
use crate::{Error, Result};

/// Default cap on rule depth.
pub const DEFAULT_MAX_DEPTH: usize = 64;

/// Row-major triangular array indexed by (n, k), 0 ≤ k ≤ n ≤ depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    depth: usize,
    data: Vec<f64>,
}

impl Triangle {
    pub fn zeros(depth: usize) -> Self {
        Self { depth, data: vec![0.0; Self::len_for(depth)] }
    }

    pub fn len_for(depth: usize) -> usize {
        (depth + 1) * (depth + 2) / 2
    }

    #[inline]
    pub fn index(n: usize, k: usize) -> usize {
        n * (n + 1) / 2 + k
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.data[Self::index(n, k)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, k: usize, v: f64) {
        self.data[Self::index(n, k)] = v;
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[Self::index(n, 0)..=Self::index(n, n)]
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidRule("no rows".into()));
        }
        let depth = rows.len() - 1;
        let mut t = Self::zeros(depth);
        for (n, row) in rows.iter().enumerate() {
            if row.len() != n + 1 {
                return Err(Error::InvalidRule(format!("row {n} has {} entries", row.len())));
            }
            for (k, &v) in row.iter().enumerate() {
                t.set(n, k, v);
            }
        }
        Ok(t)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..=self.depth).map(|n| self.row(n).to_vec()).collect()
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> {
        let depth = self.depth;
        (0..=depth).flat_map(|n| (0..=n).map(move |k| (n, k)))
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Stopping probabilities γ(n,k); the last row always stops.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingRule {
    gamma: Triangle,
    powers_of_two_only: bool,
}

impl StoppingRule {
    pub fn new(gamma: Triangle) -> Result<Self> {
        let n_max = gamma.depth();
        if n_max == 0 {
            return Err(Error::InvalidRule("max depth must be positive".into()));
        }
        for (n, k) in gamma.cells() {
            let g = gamma.get(n, k);
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidRule(format!("gamma({n},{k}) = {g} outside [0,1]")));
            }
        }
        for k in 0..=n_max {
            if gamma.get(n_max, k) != 1.0 {
                return Err(Error::InvalidRule(format!("gamma({n_max},{k}) must be 1")));
            }
        }
        Ok(Self { gamma, powers_of_two_only: false })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Triangle::from_rows(rows)?)
    }

    /// Flip exactly `n` times and stop.
    pub fn fixed_depth(n: usize) -> Result<Self> {
        let mut g = Triangle::zeros(n);
        for k in 0..=n {
            g.set(n, k, 1.0);
        }
        Self::new(g)
    }

    /// Only stop at power-of-two depths (or at the cap).
    pub fn with_powers_of_two_only(mut self) -> Result<Self> {
        let n_max = self.n_max();
        for (n, k) in self.gamma.cells() {
            if n < n_max && !n.is_power_of_two() && self.gamma.get(n, k) != 0.0 {
                return Err(Error::InvalidRule(format!("stops at non-power-of-two depth {n}")));
            }
        }
        self.powers_of_two_only = true;
        Ok(self)
    }

    pub fn powers_of_two_only(&self) -> bool {
        self.powers_of_two_only
    }

    pub fn n_max(&self) -> usize {
        self.gamma.depth()
    }

    pub fn gamma(&self, n: usize, k: usize) -> f64 {
        self.gamma.get(n, k)
    }

    pub fn gamma_triangle(&self) -> &Triangle {
        &self.gamma
    }

    pub fn coefficients(&self) -> DerivedCoefficients {
        derive_coefficients(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedCoefficients {
    pub alpha: Triangle,
    pub beta: Triangle,
    pub eta: Triangle,
}

pub fn derive_coefficients(rule: &StoppingRule) -> DerivedCoefficients {
    let n_max = rule.n_max();
    let mut alpha = Triangle::zeros(n_max);
    let mut beta = Triangle::zeros(n_max);
    let mut eta = Triangle::zeros(n_max);
    beta.set(0, 0, 1.0);
    for n in 0..=n_max {
        for k in 0..=n {
            if n > 0 {
                let from_tails = if k < n { eta.get(n - 1, k) } else { 0.0 };
                let from_heads = if k > 0 { eta.get(n - 1, k - 1) } else { 0.0 };
                beta.set(n, k, from_tails + from_heads);
            }
            let b = beta.get(n, k);
            let g = rule.gamma(n, k);
            let a = b * g;
            alpha.set(n, k, a);
            eta.set(n, k, if g == 1.0 { 0.0 } else { b * (1.0 - g) });
        }
    }
    DerivedCoefficients { alpha, beta, eta }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WalkOutcome {
    pub n: usize,
    pub k: usize,
}

/// Probability of stopping at each state for a coin of fixed bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminationDistribution {
    pub probs: Triangle,
}

impl TerminationDistribution {
    pub fn total(&self) -> f64 {
        self.probs.values().iter().sum()
    }

    pub fn expect(&self, value: impl Fn(usize, usize) -> f64) -> f64 {
        self.probs.cells().map(|(n, k)| self.probs.get(n, k) * value(n, k)).sum()
    }
}

/// α(n,k)·p^k(1−p)^(n−k), computed in log space past depth 50.
pub fn stop_probability(alpha: f64, n: usize, k: usize, p: f64) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    if n > 50 {
        let lw = ln_path_weight(n, k, p);
        if lw == f64::NEG_INFINITY {
            return 0.0;
        }
        return (alpha.ln() + lw).exp();
    }
    alpha * path_weight(n, k, p)
}

pub fn termination_distribution(rule: &StoppingRule, p: f64) -> TerminationDistribution {
    termination_from_alpha(&rule.coefficients().alpha, p)
}

pub fn termination_from_alpha(alpha: &Triangle, p: f64) -> TerminationDistribution {
    let mut probs = Triangle::zeros(alpha.depth());
    for (n, k) in alpha.cells() {
        probs.set(n, k, stop_probability(alpha.get(n, k), n, k, p));
    }
    TerminationDistribution { probs }
}

/// Runs the walk on one coin. The rule's randomization draws from the same stream.
pub fn run_walk(rule: &StoppingRule, view: &mut CoinView<'_>) -> WalkOutcome {
    let (mut n, mut k) = (0usize, 0usize);
    loop {
        let g = rule.gamma(n, k);
        if g >= 1.0 || (g > 0.0 && view.uniform() < g) {
            return WalkOutcome { n, k };
        }
        if view.flip() {
            k += 1;
        }
        n += 1;
    }
}

/// Fraction of orderings of k heads among n flips with a strict heads
/// majority on every prefix.
pub fn ballot_survival(n: usize, k: usize) -> Result<f64> {
    if 2 * k <= n || k > n {
        return Err(Error::NoHeadsMajority { n, k });
    }
    Ok((2 * k - n) as f64 / n as f64)
}

/// Probability that d flips of a p-coin never show a tails majority on any prefix.
pub fn survival_polynomial(d: usize, p: f64) -> f64 {
    survival_derivatives(d, p).0
}

/// S_d(p) with its first and second derivatives in p.
pub fn survival_derivatives(d: usize, p: f64) -> (f64, f64, f64) {
    let (mut s, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for k in (d / 2 + 1)..=d {
        let c = (2 * k - d) as f64 / d as f64 * ln_choose(d, k).exp();
        let (v, v1, v2) = monomial_derivatives(k, d - k, p);
        s += c * v;
        s1 += c * v1;
        s2 += c * v2;
    }
    (s, s1, s2)
}

/// p^a (1−p)^b and its first two derivatives.
fn monomial_derivatives(a: usize, b: usize, p: f64) -> (f64, f64, f64) {
    let pw = |base: f64, e: i64| if e < 0 { 0.0 } else { base.powi(e as i32) };
    let (a, b) = (a as i64, b as i64);
    let q = 1.0 - p;
    let (af, bf) = (a as f64, b as f64);
    let v = pw(p, a) * pw(q, b);
    let v1 = af * pw(p, a - 1) * pw(q, b) - bf * pw(p, a) * pw(q, b - 1);
    let v2 = af * (af - 1.0) * pw(p, a - 2) * pw(q, b)
        - 2.0 * af * bf * pw(p, a - 1) * pw(q, b - 1)
        + bf * (bf - 1.0) * pw(p, a) * pw(q, b - 2);
    (v, v1, v2)
}

#[derive(Serialize, Deserialize)]
struct RuleFile {
    n_max: usize,
    gamma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Vec<Vec<f64>>>,
}

/// Reads a rule file: `{n_max, gamma: [[row 0], ...], v: optional triangle}`.
pub fn rule_from_json(text: &str) -> Result<(StoppingRule, Option<Triangle>)> {
    let f: RuleFile = serde_json::from_str(text)?;
    if f.gamma.len() != f.n_max + 1 {
        return Err(Error::InvalidRule(format!(
            "n_max {} but {} gamma rows",
            f.n_max,
            f.gamma.len()
        )));
    }
    let rule = StoppingRule::from_rows(&f.gamma)?;
    let v = match f.v {
        Some(rows) => {
            let t = Triangle::from_rows(&rows)?;
            if t.depth() != f.n_max {
                return Err(Error::InvalidRule("value triangle depth differs from n_max".into()));
            }
            Some(t)
        }
        None => None,
    };
    Ok((rule, v))
}

pub fn rule_to_json(rule: &StoppingRule, values: Option<&Triangle>) -> String {
    let f = RuleFile {
        n_max: rule.n_max(),
        gamma: rule.gamma_triangle().to_rows(),
        v: values.map(Triangle::to_rows),
    };
    serde_json::to_string_pretty(&f).expect("rule serializes")
}
