//! Estimator design when the conditional bias distributions are known:
//! moment tables, the closed-form minimum-variance output values for a given
//! rule, and the LP over stopping rules.

pub mod simplex;

use serde::Serialize;

use crate::coin_model::{BiasDistribution, CoinPopulation};
use crate::walk_core::{rule_to_json, StoppingRule, Triangle};
use crate::{Error, Result};

use simplex::{solve, StandardLp};

/// h(n,k) = E[p^k (1−p)^(n−k)] under a bias distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    h: Triangle,
}

impl MomentTable {
    pub fn new(dist: &BiasDistribution, n_max: usize) -> Self {
        let mut h = Triangle::zeros(n_max);
        for (n, k) in h.cells().collect::<Vec<_>>() {
            let v = dist.expect(|p| p.powi(k as i32) * (1.0 - p).powi((n - k) as i32));
            h.set(n, k, v);
        }
        Self { h }
    }

    pub fn n_max(&self) -> usize {
        self.h.depth()
    }

    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.h.get(n, k)
    }

    pub fn triangle(&self) -> &Triangle {
        &self.h
    }

    /// Largest |h(n,k) − h(n+1,k+1) − h(n+1,k)|.
    pub fn pascal_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..self.n_max() {
            for k in 0..=n {
                let r = self.get(n, k) - self.get(n + 1, k + 1) - self.get(n + 1, k);
                worst = worst.max(r.abs());
            }
        }
        worst
    }
}

pub fn moment_table(dist: &BiasDistribution, n_max: usize) -> MomentTable {
    MomentTable::new(dist, n_max)
}

fn check_inputs(hplus: &MomentTable, hminus: &MomentTable, rho: f64, n_max: usize) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidConfig(format!("rho {rho} outside (0,1)")));
    }
    if hplus.n_max() < n_max || hminus.n_max() < n_max {
        return Err(Error::InvalidConfig(format!("moment tables shallower than depth {n_max}")));
    }
    Ok(())
}

/// Mixture stopping weight ρh⁺ + (1−ρ)h⁻.
fn mix(hplus: &MomentTable, hminus: &MomentTable, rho: f64, n: usize, k: usize) -> f64 {
    rho * hplus.get(n, k) + (1.0 - rho) * hminus.get(n, k)
}

/// Per-cell weight (h⁺−h⁻)²/(ρh⁺+(1−ρ)h⁻); 0 where the denominator is 0.
pub fn cell_information(hplus: &MomentTable, hminus: &MomentTable, rho: f64, n: usize, k: usize) -> f64 {
    let d = mix(hplus, hminus, rho, n, k);
    if d <= 0.0 {
        return 0.0;
    }
    let diff = hplus.get(n, k) - hminus.get(n, k);
    diff * diff / d
}

/// Σ α(h⁺−h⁻)²/(ρh⁺+(1−ρ)h⁻): the reciprocal of the minimum variance.
pub fn information_functional(
    alpha: &Triangle,
    hplus: &MomentTable,
    hminus: &MomentTable,
    rho: f64,
) -> f64 {
    alpha
        .cells()
        .map(|(n, k)| alpha.get(n, k) * cell_information(hplus, hminus, rho, n, k))
        .sum()
}

/// Expected flips per coin under the mixture.
pub fn expected_flips(alpha: &Triangle, hplus: &MomentTable, hminus: &MomentTable, rho: f64) -> f64 {
    alpha
        .cells()
        .map(|(n, k)| n as f64 * alpha.get(n, k) * mix(hplus, hminus, rho, n, k))
        .sum()
}

/// Variance of an arbitrary value triangle under a rule, assuming it is unbiased.
pub fn linear_variance(
    alpha: &Triangle,
    hplus: &MomentTable,
    hminus: &MomentTable,
    rho: f64,
    values: &Triangle,
) -> f64 {
    let second: f64 = alpha
        .cells()
        .map(|(n, k)| alpha.get(n, k) * mix(hplus, hminus, rho, n, k) * values.get(n, k).powi(2))
        .sum();
    second - rho * rho
}

/// U/n̄ of a rule: the quantity the stopping LP maximizes.
pub fn rule_efficiency(rule: &StoppingRule, hplus: &MomentTable, hminus: &MomentTable, rho: f64) -> f64 {
    let alpha = rule.coefficients().alpha;
    let flips = expected_flips(&alpha, hplus, hminus, rho);
    if flips <= 0.0 {
        return 0.0;
    }
    information_functional(&alpha, hplus, hminus, rho) / flips
}

/// A stopping rule with output values v(n,k) whose population mean is ρ.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimator {
    pub rule: StoppingRule,
    pub values: Triangle,
    pub variance: f64,
    pub expected_flips: f64,
    /// Σ α(h⁺−h⁻)²/(ρh⁺+(1−ρ)h⁻) for the rule.
    pub information: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub n_max: usize,
    pub variance: f64,
    pub expected_flips: f64,
    pub information: f64,
}

impl LinearEstimator {
    /// Centered values ṽ = v − ρ.
    pub fn centered(&self, n: usize, k: usize) -> f64 {
        self.values.get(n, k) - self.rho
    }

    /// (Σ α h⁺ v − 1, Σ α h⁻ v).
    pub fn unbiasedness_residuals(&self, hplus: &MomentTable, hminus: &MomentTable) -> (f64, f64) {
        let alpha = self.rule.coefficients().alpha;
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (n, k) in alpha.cells() {
            let a = alpha.get(n, k);
            pos += a * hplus.get(n, k) * self.values.get(n, k);
            neg += a * hminus.get(n, k) * self.values.get(n, k);
        }
        (pos - 1.0, neg)
    }

    /// Largest per-cell residual of 2αDṽ + λα(h⁺−h⁻) with λ = −2/U, and the
    /// residual of Σ α(h⁺−h⁻)ṽ − 1.
    pub fn stationarity_residuals(&self, hplus: &MomentTable, hminus: &MomentTable) -> (f64, f64) {
        let alpha = self.rule.coefficients().alpha;
        let lambda = -2.0 / self.information;
        let mut cell_worst: f64 = 0.0;
        let mut constraint = -1.0;
        for (n, k) in alpha.cells() {
            let a = alpha.get(n, k);
            let diff = hplus.get(n, k) - hminus.get(n, k);
            let d = mix(hplus, hminus, self.rho, n, k);
            let vt = self.centered(n, k);
            let r = 2.0 * a * d * vt + lambda * a * diff;
            cell_worst = cell_worst.max(r.abs());
            constraint += a * diff * vt;
        }
        (cell_worst, constraint.abs())
    }

    /// Coins × flips needed for ±ε with failure δ, up to the constant of
    /// median-of-means: variance·n̄·ln(1/δ)/ε².
    pub fn expected_total_flips(&self, eps: f64, delta_fail: f64) -> f64 {
        self.variance * self.expected_flips * (1.0 / delta_fail).ln().max(1.0) / (eps * eps)
    }

    pub fn summary(&self) -> EstimatorSummary {
        EstimatorSummary {
            n_max: self.rule.n_max(),
            variance: self.variance,
            expected_flips: self.expected_flips,
            information: self.information,
        }
    }

    /// Rule file with the value triangle, readable by `rule_from_json`.
    pub fn to_json(&self) -> String {
        rule_to_json(&self.rule, Some(&self.values))
    }
}

/// Minimum-variance unbiased values for a fixed rule.
pub fn optimal_values(
    rule: &StoppingRule,
    hplus: &MomentTable,
    hminus: &MomentTable,
    rho: f64,
) -> Result<LinearEstimator> {
    check_inputs(hplus, hminus, rho, rule.n_max())?;
    let alpha = rule.coefficients().alpha;
    let u = information_functional(&alpha, hplus, hminus, rho);
    if !(u > 1e-300) {
        return Err(Error::Indistinguishable);
    }
    let mut values = Triangle::zeros(rule.n_max());
    for (n, k) in alpha.cells() {
        let d = mix(hplus, hminus, rho, n, k);
        let vt = if d > 0.0 { (hplus.get(n, k) - hminus.get(n, k)) / d / u } else { 0.0 };
        values.set(n, k, vt + rho);
    }
    Ok(LinearEstimator {
        rule: rule.clone(),
        values,
        variance: 1.0 / u,
        expected_flips: expected_flips(&alpha, hplus, hminus, rho),
        information: u,
        rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

/// Solution of the stopping LP, unscaled (β(0,0) is whatever the LP chose).
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub alpha: Triangle,
    pub beta: Triangle,
    pub objective: f64,
    pub status: LpStatus,
}

impl LpSolution {
    /// Largest violation of the LP's constraints: the β recurrence, α ≤ β,
    /// forced stopping on the last row, the flip budget, and nonnegativity.
    pub fn constraint_residual(&self, hplus: &MomentTable, hminus: &MomentTable, rho: f64) -> f64 {
        let (a, b) = (&self.alpha, &self.beta);
        let n_max = a.depth();
        let mut worst: f64 = 0.0;
        for (n, k) in a.cells() {
            worst = worst.max(-a.get(n, k)).max(-b.get(n, k));
            worst = worst.max(a.get(n, k) - b.get(n, k));
            if n > 0 {
                let mut inflow = 0.0;
                if k < n {
                    inflow += b.get(n - 1, k) - a.get(n - 1, k);
                }
                if k > 0 {
                    inflow += b.get(n - 1, k - 1) - a.get(n - 1, k - 1);
                }
                worst = worst.max((b.get(n, k) - inflow).abs());
            }
            if n == n_max {
                worst = worst.max((a.get(n, k) - b.get(n, k)).abs());
            }
        }
        worst.max(expected_flips(a, hplus, hminus, rho) - 1.0)
    }
}

/// Maximizes Σ α(h⁺−h⁻)²/(ρh⁺+(1−ρ)h⁻) over stopping rules of depth
/// `n_max`, scaled so the expected flips are at most 1.
///
/// Variables are α(n,k) for n ≥ 1 and η(n,k) = β − α for n < n_max, so
/// α ≤ β and forced stopping on the last row hold by construction. α(0,0) is
/// fixed at 0: stopping before the first flip costs nothing and earns nothing.
pub fn solve_stopping_lp(
    hplus: &MomentTable,
    hminus: &MomentTable,
    rho: f64,
    n_max: usize,
) -> Result<LpSolution> {
    if n_max == 0 {
        return Err(Error::InvalidConfig("n_max must be at least 1".into()));
    }
    check_inputs(hplus, hminus, rho, n_max)?;
    let cells = Triangle::len_for(n_max);
    let inner = Triangle::len_for(n_max - 1);
    // α(n,k) for n ≥ 1 sits at Triangle::index(n,k) − 1
    let alpha_var = |n: usize, k: usize| Triangle::index(n, k) - 1;
    let eta_var = |n: usize, k: usize| cells - 1 + Triangle::index(n, k);
    let slack = cells - 1 + inner;
    let width = slack + 1;

    let mut a = Vec::with_capacity(cells);
    let mut b = Vec::with_capacity(cells);
    for n in 1..=n_max {
        for k in 0..=n {
            let mut row = vec![0.0; width];
            row[alpha_var(n, k)] = 1.0;
            if n < n_max {
                row[eta_var(n, k)] = 1.0;
            }
            if k < n {
                row[eta_var(n - 1, k)] -= 1.0;
            }
            if k > 0 {
                row[eta_var(n - 1, k - 1)] -= 1.0;
            }
            a.push(row);
            b.push(0.0);
        }
    }
    let mut budget = vec![0.0; width];
    let mut c = vec![0.0; width];
    for n in 1..=n_max {
        for k in 0..=n {
            budget[alpha_var(n, k)] = n as f64 * mix(hplus, hminus, rho, n, k);
            c[alpha_var(n, k)] = cell_information(hplus, hminus, rho, n, k);
        }
    }
    budget[slack] = 1.0;
    a.push(budget);
    b.push(1.0);

    let opt = match solve(&StandardLp { a, b, c }) {
        Ok(o) => o,
        Err(Error::Infeasible) => {
            return Ok(LpSolution {
                alpha: Triangle::zeros(n_max),
                beta: Triangle::zeros(n_max),
                objective: 0.0,
                status: LpStatus::Infeasible,
            })
        }
        Err(e) => return Err(e),
    };
    let mut alpha = Triangle::zeros(n_max);
    let mut beta = Triangle::zeros(n_max);
    for n in 0..=n_max {
        for k in 0..=n {
            let av = if n > 0 { opt.x[alpha_var(n, k)] } else { 0.0 };
            let ev = if n < n_max { opt.x[eta_var(n, k)] } else { 0.0 };
            alpha.set(n, k, av);
            beta.set(n, k, av + ev);
        }
    }
    Ok(LpSolution { alpha, beta, objective: opt.objective, status: LpStatus::Optimal })
}

/// Stopping rule from an LP solution: rescale to β(0,0) = 1 and take γ = α/β
/// (0 where β = 0, 1 on the last row).
pub fn rule_from_lp(sol: &LpSolution) -> Result<StoppingRule> {
    if sol.status != LpStatus::Optimal {
        return Err(Error::Infeasible);
    }
    let root = sol.beta.get(0, 0);
    if !(root > 0.0) || sol.objective <= 0.0 {
        return Err(Error::Indistinguishable);
    }
    let n_max = sol.alpha.depth();
    let mut gamma = Triangle::zeros(n_max);
    for (n, k) in sol.alpha.cells() {
        let b = sol.beta.get(n, k) / root;
        let g = if n == n_max {
            1.0
        } else if b > 1e-12 {
            (sol.alpha.get(n, k) / root / b).clamp(0.0, 1.0)
        } else {
            0.0
        };
        gamma.set(n, k, g);
    }
    StoppingRule::new(gamma)
}

/// LP-designed rule plus its minimum-variance values.
pub fn design_estimator(
    hplus: &MomentTable,
    hminus: &MomentTable,
    rho: f64,
    n_max: usize,
) -> Result<LinearEstimator> {
    let sol = solve_stopping_lp(hplus, hminus, rho, n_max)?;
    let rule = rule_from_lp(&sol)?;
    optimal_values(&rule, hplus, hminus, rho)
}

/// Designs against a population file's conditional distributions and ρ.
pub fn design_for_population(pop: &CoinPopulation, n_max: usize) -> Result<LinearEstimator> {
    let hplus = MomentTable::new(pop.positive(), n_max);
    let hminus = MomentTable::new(pop.negative(), n_max);
    design_estimator(&hplus, &hminus, pop.rho(), n_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables(pos: f64, neg: f64, n_max: usize) -> (MomentTable, MomentTable) {
        (
            MomentTable::new(&BiasDistribution::point(pos).unwrap(), n_max),
            MomentTable::new(&BiasDistribution::point(neg).unwrap(), n_max),
        )
    }

    #[test]
    fn point_mass_tables() {
        let (one, half) = tables(1.0, 0.5, 4);
        assert_eq!(one.get(3, 3), 1.0);
        assert_eq!(one.get(3, 2), 0.0);
        assert_eq!(half.get(4, 1), 1.0 / 16.0);
        let mixed = BiasDistribution::from_pairs(&[(0.8, 0.5), (0.9, 0.5)]).unwrap();
        assert!((MomentTable::new(&mixed, 2).get(2, 1) - 0.125).abs() < 1e-15);
        assert!(MomentTable::new(&mixed, 10).pascal_residual() < 1e-15);
    }

    #[test]
    fn deterministic_coins() {
        let (hp, hm) = tables(1.0, 0.0, 1);
        let sol = solve_stopping_lp(&hp, &hm, 0.2, 1).unwrap();
        assert!((sol.objective - 6.25).abs() < 1e-9);
        let est = design_estimator(&hp, &hm, 0.2, 1).unwrap();
        assert!((est.values.get(1, 1) - 1.0).abs() < 1e-9);
        assert!(est.values.get(1, 0).abs() < 1e-9);
        assert!((est.variance - 0.16).abs() < 1e-12);
    }

    #[test]
    fn values_are_unbiased() {
        let (hp, hm) = tables(0.7, 0.3, 6);
        let rule = StoppingRule::fixed_depth(6).unwrap();
        let est = optimal_values(&rule, &hp, &hm, 0.3).unwrap();
        let (a, b) = est.unbiasedness_residuals(&hp, &hm);
        assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
        let (s6, s7) = est.stationarity_residuals(&hp, &hm);
        assert!(s6 < 1e-12 && s7 < 1e-12);
    }

    #[test]
    fn indistinguishable_populations() {
        let (hp, hm) = tables(0.5, 0.5, 3);
        let rule = StoppingRule::fixed_depth(3).unwrap();
        assert!(matches!(optimal_values(&rule, &hp, &hm, 0.3), Err(Error::Indistinguishable)));
    }
}
