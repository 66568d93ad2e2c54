//! Dense two-phase simplex with Bland's rule, for the small LPs of this crate.
//!
//! Standard form: maximize c·x subject to A x = b, x ≥ 0.

use crate::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct StandardLp {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpOptimum {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    // reduced costs, last entry is −objective
    cost: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize) {
        let w = self.width;
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for j in 0..=w {
                    row[j] -= f * pivot_row[j];
                }
                row[col] = 0.0;
            }
        }
        let f = self.cost[col];
        if f != 0.0 {
            for j in 0..=w {
                self.cost[j] -= f * pivot_row[j];
            }
            self.cost[col] = 0.0;
        }
        self.basis[r] = col;
        self.pivots += 1;
    }

    /// Bland's rule iterations on columns `< allowed`. Stops early once the
    /// objective reaches `target`.
    fn optimize(&mut self, allowed: usize, target: Option<f64>) -> Result<()> {
        loop {
            if let Some(t) = target {
                if -self.cost[self.width] >= t - COST_TOL {
                    return Ok(());
                }
            }
            let Some(col) = (0..allowed).find(|&j| self.cost[j] > COST_TOL) else {
                return Ok(());
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[col];
                if a > PIVOT_TOL {
                    let ratio = row[self.width] / a;
                    let better = match best {
                        None => true,
                        Some((r, _, bvar)) => {
                            ratio < r - 1e-14 || (ratio <= r + 1e-14 && self.basis[i] < bvar)
                        }
                    };
                    if better {
                        best = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            match best {
                None => return Err(Error::Unbounded),
                Some((_, r, _)) => self.pivot(r, col),
            }
        }
    }
}

pub fn solve(lp: &StandardLp) -> Result<LpOptimum> {
    let m = lp.a.len();
    let n = lp.c.len();
    if lp.b.len() != m || lp.a.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidConfig("LP dimensions disagree".into()));
    }
    let width = n + m;
    let mut rows = Vec::with_capacity(m);
    for (i, (row, &b)) in lp.a.iter().zip(&lp.b).enumerate() {
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        let mut r = vec![0.0; width + 1];
        for (j, &v) in row.iter().enumerate() {
            r[j] = sign * v;
        }
        r[n + i] = 1.0;
        r[width] = sign * b;
        rows.push(r);
    }
    // phase 1: maximize −Σ artificials
    let mut cost = vec![0.0; width + 1];
    for r in &rows {
        for j in 0..n {
            cost[j] += r[j];
        }
        cost[width] += r[width];
    }
    let mut t = Tableau { rows, cost, basis: (n..n + m).collect(), width, pivots: 0 };
    t.optimize(width, Some(0.0))?;
    if -t.cost[width] < -1e-9 {
        return Err(Error::Infeasible);
    }

    // drive zero-level artificials out of the basis, dropping redundant rows
    let mut r = 0;
    while r < t.rows.len() {
        if t.basis[r] >= n {
            match (0..n).find(|&j| t.rows[r][j].abs() > 1e-9) {
                Some(col) => t.pivot(r, col),
                None => {
                    t.rows.remove(r);
                    t.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    // phase 2
    let mut cost = vec![0.0; width + 1];
    cost[..n].copy_from_slice(&lp.c);
    for (i, &bv) in t.basis.iter().enumerate() {
        let cb = if bv < n { lp.c[bv] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..=width {
                cost[j] -= cb * t.rows[i][j];
            }
        }
    }
    for j in n..width {
        cost[j] = 0.0;
    }
    t.cost = cost;
    t.optimize(n, None)?;

    let mut x = vec![0.0; n];
    for (i, &bv) in t.basis.iter().enumerate() {
        if bv < n {
            x[bv] = t.rows[i][width].max(0.0);
        }
    }
    let objective = x.iter().zip(&lp.c).map(|(a, b)| a * b).sum();
    Ok(LpOptimum { x, objective, pivots: t.pivots })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_instance() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18
        let lp = StandardLp {
            a: vec![
                vec![1.0, 0.0, 1.0, 0.0, 0.0],
                vec![0.0, 2.0, 0.0, 1.0, 0.0],
                vec![3.0, 2.0, 0.0, 0.0, 1.0],
            ],
            b: vec![4.0, 12.0, 18.0],
            c: vec![3.0, 5.0, 0.0, 0.0, 0.0],
        };
        let s = solve(&lp).unwrap();
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9);
        assert!((s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible() {
        let lp = StandardLp { a: vec![vec![1.0], vec![1.0]], b: vec![1.0, 2.0], c: vec![1.0] };
        assert!(matches!(solve(&lp), Err(Error::Infeasible)));
    }

    #[test]
    fn unbounded() {
        let lp = StandardLp { a: vec![vec![1.0, -1.0]], b: vec![0.0], c: vec![1.0, 0.0] };
        assert!(matches!(solve(&lp), Err(Error::Unbounded)));
    }

    #[test]
    fn redundant_rows() {
        let lp = StandardLp {
            a: vec![vec![1.0, 1.0], vec![2.0, 2.0]],
            b: vec![1.0, 2.0],
            c: vec![1.0, 2.0],
        };
        let s = solve(&lp).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-12);
    }
}
