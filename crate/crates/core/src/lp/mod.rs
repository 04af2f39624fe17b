//! Dense linear programming.
//!
//! [`LpProblem`] holds a small dense LP with per-row senses and per-variable
//! bounds (infinite bounds are `f64::INFINITY` / `f64::NEG_INFINITY`, never a
//! large finite stand-in). [`solve_lp`] runs a bounded-variable revised
//! simplex and accepts a warm [`Basis`] from a previous solve.

mod dump;
mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use simplex::{solve_lp, solve_lp_with, SimplexOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

impl RowSense {
    pub fn symbol(self) -> &'static str {
        match self {
            RowSense::Le => "<=",
            RowSense::Eq => "=",
            RowSense::Ge => ">=",
        }
    }
}

/// A dense linear program.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    /// Row-major constraint matrix; every row has `objective.len()` entries.
    pub rows: Vec<Vec<f64>>,
    pub row_senses: Vec<RowSense>,
    pub rhs: Vec<f64>,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
}

impl LpProblem {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            rows: Vec::new(),
            row_senses: Vec::new(),
            rhs: Vec::new(),
            var_lower: Vec::new(),
            var_upper: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.objective.push(cost);
        self.var_lower.push(lower);
        self.var_upper.push(upper);
        for row in &mut self.rows {
            row.push(0.0);
        }
        self.objective.len() - 1
    }

    /// Appends a row from sparse `(variable, coefficient)` terms. Repeated
    /// variables are summed.
    pub fn add_row(&mut self, terms: &[(usize, f64)], sense: RowSense, rhs: f64) -> usize {
        let mut row = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            row[j] += a;
        }
        self.rows.push(row);
        self.row_senses.push(sense);
        self.rhs.push(rhs);
        self.rows.len() - 1
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        let m = self.num_rows();
        let bad = |msg: String| Err(LpError::InconsistentDimensions(msg));
        if self.var_lower.len() != n || self.var_upper.len() != n {
            return bad(format!(
                "{} objective coefficients but {} lower / {} upper bounds",
                n,
                self.var_lower.len(),
                self.var_upper.len()
            ));
        }
        if self.row_senses.len() != m || self.rhs.len() != m {
            return bad(format!(
                "{} rows but {} senses / {} rhs entries",
                m,
                self.row_senses.len(),
                self.rhs.len()
            ));
        }
        if let Some((i, row)) = self.rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return bad(format!("row {} has {} entries, expected {}", i, row.len(), n));
        }
        for j in 0..n {
            let (lo, hi) = (self.var_lower[j], self.var_upper[j]);
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return bad(format!("variable {} has invalid bounds [{}, {}]", j, lo, hi));
            }
        }
        if self.objective.iter().chain(self.rhs.iter()).any(|v| !v.is_finite())
            || self.rows.iter().flatten().any(|v| !v.is_finite())
        {
            return bad("non-finite coefficient".to_string());
        }
        Ok(())
    }

    /// Evaluates `objective · x`.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Infinity norm of row `i`, floored at 1. Used to scale feasibility
    /// tolerances.
    pub fn row_scale(&self, i: usize) -> f64 {
        self.rows[i].iter().fold(1.0_f64, |acc, a| acc.max(a.abs()))
    }

    /// Largest scaled violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (i, row) in self.rows.iter().enumerate() {
            let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
            let r = lhs - self.rhs[i];
            let v = match self.row_senses[i] {
                RowSense::Le => r.max(0.0),
                RowSense::Ge => (-r).max(0.0),
                RowSense::Eq => r.abs(),
            };
            worst = worst.max(v / self.row_scale(i));
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.var_lower[j] - v).max(v - self.var_upper[j]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Simplex basis over the `n + m` internal variables (structural columns
/// first, then one slack per row).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    pub basic: Vec<usize>,
    pub at_upper: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Empty unless `status == Optimal`.
    pub primal: Vec<f64>,
    pub objective: f64,
    /// Sensitivity of the optimal objective to each row's right-hand side.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    /// Rows carrying a nonzero phase-one multiplier when infeasible.
    pub infeasible_rows: Vec<usize>,
    pub basis: Option<Basis>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// `rhs · duals + Σ reduced_cost_j · x_j`, which equals the primal
    /// objective at an optimal basis.
    pub fn dual_objective(&self, problem: &LpProblem) -> f64 {
        let by: f64 = problem.rhs.iter().zip(&self.duals).map(|(b, y)| b * y).sum();
        let dx: f64 = self.reduced_costs.iter().zip(&self.primal).map(|(d, x)| d * x).sum();
        by + dx
    }
}
