//! Bounded-variable revised simplex with an explicit dense basis inverse.
//!
//! Every row gets a slack (`A x + s = b`) whose bounds encode the row sense,
//! so the slack basis is always a valid start. Phase one minimizes the sum of
//! bound infeasibilities of the basic variables (composite costs recomputed
//! every iteration), which lets any warm basis serve as a starting point even
//! after the caller has changed variable bounds.

use super::{Basis, LpError, LpProblem, LpSolution, LpStatus, RowSense, Sense};

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Bound tolerance for basic variables. Slack tolerances are multiplied
    /// by the row's infinity norm.
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_threshold: usize,
    pub refactor_interval: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            feasibility_tol: 1e-8,
            optimality_tol: 1e-9,
            pivot_tol: 1e-9,
            degenerate_threshold: 50,
            refactor_interval: 64,
        }
    }
}

pub fn solve_lp(problem: &LpProblem, warm_basis: Option<&Basis>) -> Result<LpSolution, LpError> {
    solve_lp_with(problem, warm_basis, &SimplexOptions::default())
}

pub fn solve_lp_with(
    problem: &LpProblem,
    warm_basis: Option<&Basis>,
    opts: &SimplexOptions,
) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let mut solver = Simplex::new(problem, opts);
    match solver.run(warm_basis, false) {
        Ok(sol) => Ok(sol),
        Err(first) => {
            tracing::debug!("simplex retry from slack basis with Bland's rule: {}", first);
            let mut solver = Simplex::new(problem, opts);
            solver.run(None, true)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    FreeZero,
}

enum Outcome {
    Optimal,
    Infeasible(Vec<usize>),
    Unbounded,
    IterationLimit,
}

struct Simplex<'a> {
    p: &'a LpProblem,
    opts: &'a SimplexOptions,
    n: usize,
    m: usize,
    cols: Vec<Vec<f64>>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    tol: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    iterations: usize,
}

impl<'a> Simplex<'a> {
    fn new(p: &'a LpProblem, opts: &'a SimplexOptions) -> Self {
        let n = p.num_vars();
        let m = p.num_rows();
        let cols = (0..n).map(|j| p.rows.iter().map(|r| r[j]).collect()).collect();
        let flip = if p.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let mut cost: Vec<f64> = p.objective.iter().map(|c| flip * c).collect();
        cost.resize(n + m, 0.0);
        let mut lo = p.var_lower.clone();
        let mut up = p.var_upper.clone();
        let mut tol = vec![opts.feasibility_tol; n];
        for i in 0..m {
            let (l, u) = match p.row_senses[i] {
                RowSense::Le => (0.0, f64::INFINITY),
                RowSense::Ge => (f64::NEG_INFINITY, 0.0),
                RowSense::Eq => (0.0, 0.0),
            };
            lo.push(l);
            up.push(u);
            tol.push(opts.feasibility_tol * p.row_scale(i));
        }
        Self {
            p,
            opts,
            n,
            m,
            cols,
            cost,
            lo,
            up,
            tol,
            x: vec![0.0; n + m],
            state: vec![VarState::AtLower; n + m],
            basis: Vec::new(),
            binv: Vec::new(),
            iterations: 0,
        }
    }

    fn nonbasic_state(&self, j: usize, prefer_upper: bool) -> VarState {
        let (l, u) = (self.lo[j], self.up[j]);
        match (l.is_finite(), u.is_finite()) {
            (true, true) if prefer_upper && l < u => VarState::AtUpper,
            (true, _) => VarState::AtLower,
            (false, true) => VarState::AtUpper,
            (false, false) => VarState::FreeZero,
        }
    }

    fn place_nonbasic(&mut self, j: usize, st: VarState) {
        self.state[j] = st;
        self.x[j] = match st {
            VarState::AtLower => self.lo[j],
            VarState::AtUpper => self.up[j],
            VarState::FreeZero => 0.0,
            VarState::Basic => unreachable!(),
        };
    }

    fn install_slack_basis(&mut self) {
        for j in 0..self.n {
            let st = self.nonbasic_state(j, false);
            self.place_nonbasic(j, st);
        }
        self.basis = (self.n..self.n + self.m).collect();
        for &j in &self.basis {
            self.state[j] = VarState::Basic;
        }
        // The slack basis matrix is the identity.
        self.binv = vec![0.0; self.m * self.m];
        for i in 0..self.m {
            self.binv[i * self.m + i] = 1.0;
        }
    }

    fn try_install_warm(&mut self, warm: &Basis) -> bool {
        let total = self.n + self.m;
        if warm.basic.len() != self.m || warm.at_upper.len() != total {
            return false;
        }
        let mut seen = vec![false; total];
        for &j in &warm.basic {
            if j >= total || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        for j in 0..total {
            if !seen[j] {
                let st = self.nonbasic_state(j, warm.at_upper[j]);
                self.place_nonbasic(j, st);
            } else {
                self.state[j] = VarState::Basic;
            }
        }
        self.basis = warm.basic.clone();
        self.refactor()
    }

    fn column_entry(&self, j: usize, i: usize) -> f64 {
        if j < self.n {
            self.cols[j][i]
        } else if j - self.n == i {
            1.0
        } else {
            0.0
        }
    }

    /// Inverts the basis matrix by Gauss-Jordan elimination with partial
    /// pivoting. Returns false when the basis is numerically singular.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            for i in 0..m {
                a[i * m + k] = self.column_entry(j, i);
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let (piv_row, piv_abs) = (c..m)
                .map(|r| (r, a[r * m + c].abs()))
                .fold((c, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_abs < 1e-11 {
                return false;
            }
            if piv_row != c {
                for k in 0..m {
                    a.swap(c * m + k, piv_row * m + k);
                    inv.swap(c * m + k, piv_row * m + k);
                }
            }
            let piv = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = a[r * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        a[r * m + k] -= f * a[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
        self.binv = inv;
        true
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut rhs = self.p.rhs.clone();
        for j in 0..self.n + self.m {
            if self.state[j] == VarState::Basic || self.x[j] == 0.0 {
                continue;
            }
            for (i, r) in rhs.iter_mut().enumerate() {
                *r -= self.column_entry(j, i) * self.x[j];
            }
        }
        for r in 0..m {
            let v: f64 = (0..m).map(|k| self.binv[r * m + k] * rhs[k]).sum();
            self.x[self.basis[r]] = v;
        }
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        if j >= self.n {
            let c = j - self.n;
            return (0..m).map(|r| self.binv[r * m + c]).collect();
        }
        let col = &self.cols[j];
        (0..m)
            .map(|r| {
                let row = &self.binv[r * m..(r + 1) * m];
                row.iter().zip(col).map(|(b, a)| b * a).sum()
            })
            .collect()
    }

    fn btran(&self, cb: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (r, &c) in cb.iter().enumerate() {
            if c != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (yk, b) in y.iter_mut().zip(row) {
                    *yk += c * b;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, cost_j: f64, y: &[f64]) -> f64 {
        if j < self.n {
            cost_j - y.iter().zip(&self.cols[j]).map(|(a, b)| a * b).sum::<f64>()
        } else {
            cost_j - y[j - self.n]
        }
    }

    /// Phase-one costs for the basic variables, or None when the basis is
    /// primal feasible.
    fn phase_one_costs(&self) -> Option<Vec<f64>> {
        let mut any = false;
        let cb = self
            .basis
            .iter()
            .map(|&j| {
                if self.x[j] < self.lo[j] - self.tol[j] {
                    any = true;
                    -1.0
                } else if self.x[j] > self.up[j] + self.tol[j] {
                    any = true;
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        any.then_some(cb)
    }

    fn pivot(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        for k in 0..m {
            self.binv[r * m + k] /= piv;
        }
        let (head, rest) = self.binv.split_at_mut(r * m);
        let (prow, tail) = rest.split_at_mut(m);
        for (i, &a) in alpha.iter().enumerate() {
            if i == r || a == 0.0 {
                continue;
            }
            let row = if i < r {
                &mut head[i * m..(i + 1) * m]
            } else {
                let off = (i - r - 1) * m;
                &mut tail[off..off + m]
            };
            for (v, p) in row.iter_mut().zip(prow.iter()) {
                *v -= a * p;
            }
        }
    }

    fn run(&mut self, warm: Option<&Basis>, force_bland: bool) -> Result<LpSolution, LpError> {
        match warm {
            Some(b) if self.try_install_warm(b) => {}
            _ => self.install_slack_basis(),
        }
        self.recompute_basic_values();
        let outcome = self.iterate(force_bland)?;
        Ok(self.finish(outcome))
    }

    fn iterate(&mut self, force_bland: bool) -> Result<Outcome, LpError> {
        let total = self.n + self.m;
        let mut bland = force_bland;
        let mut degenerate_run = 0usize;
        let mut since_refactor = 0usize;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Ok(Outcome::IterationLimit);
            }
            if since_refactor >= self.opts.refactor_interval {
                if !self.refactor() {
                    return Err(LpError::NumericalBreakdown("singular basis during refactorization".into()));
                }
                self.recompute_basic_values();
                since_refactor = 0;
            }

            let phase_one = self.phase_one_costs();
            let cb: Vec<f64> = match &phase_one {
                Some(c) => c.clone(),
                None => self.basis.iter().map(|&j| self.cost[j]).collect(),
            };
            let y = self.btran(&cb);

            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..total {
                let st = self.state[j];
                if st == VarState::Basic || self.lo[j] == self.up[j] {
                    continue;
                }
                let cj = if phase_one.is_some() { 0.0 } else { self.cost[j] };
                let d = self.reduced_cost(j, cj, &y);
                let dir = match st {
                    VarState::AtLower if d < -self.opts.optimality_tol => 1.0,
                    VarState::AtUpper if d > self.opts.optimality_tol => -1.0,
                    VarState::FreeZero if d.abs() > self.opts.optimality_tol => -d.signum(),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir, d));
                    break;
                }
                if entering.is_none_or(|(_, _, best)| d.abs() > best.abs()) {
                    entering = Some((j, dir, d));
                }
            }

            let Some((q, dir, _)) = entering else {
                if since_refactor > 0 {
                    // Re-verify on a fresh factorization before declaring.
                    if !self.refactor() {
                        return Err(LpError::NumericalBreakdown("singular basis at termination".into()));
                    }
                    self.recompute_basic_values();
                    since_refactor = 0;
                    continue;
                }
                return Ok(match phase_one {
                    Some(_) => Outcome::Infeasible(
                        y.iter().enumerate().filter(|(_, v)| v.abs() > 1e-9).map(|(i, _)| i).collect(),
                    ),
                    None => Outcome::Optimal,
                });
            };

            let alpha = self.ftran(q);
            let in_phase_one = phase_one.is_some();
            let mut best: Option<(f64, usize, bool)> = None;
            for (i, &a) in alpha.iter().enumerate() {
                if a.abs() <= self.opts.pivot_tol {
                    continue;
                }
                let j = self.basis[i];
                let xi = self.x[j];
                let delta = -dir * a;
                let limit = if in_phase_one && xi < self.lo[j] - self.tol[j] {
                    (delta > 0.0).then(|| ((self.lo[j] - xi) / delta, false))
                } else if in_phase_one && xi > self.up[j] + self.tol[j] {
                    (delta < 0.0).then(|| ((xi - self.up[j]) / -delta, true))
                } else if delta < 0.0 && self.lo[j].is_finite() {
                    Some((((xi - self.lo[j]) / -delta).max(0.0), false))
                } else if delta > 0.0 && self.up[j].is_finite() {
                    Some((((self.up[j] - xi) / delta).max(0.0), true))
                } else {
                    None
                };
                let Some((t, to_upper)) = limit else { continue };
                let better = match best {
                    None => true,
                    Some((bt, bi, _)) => {
                        if t < bt - 1e-12 {
                            true
                        } else if t <= bt + 1e-12 {
                            if bland {
                                j < self.basis[bi]
                            } else {
                                a.abs() > alpha[bi].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    best = Some((t, i, to_upper));
                }
            }

            let flip_range = self.up[q] - self.lo[q];
            let flip = flip_range.is_finite() && best.is_none_or(|(t, _, _)| flip_range <= t);
            if best.is_none() && !flip {
                if in_phase_one {
                    return Err(LpError::NumericalBreakdown("phase one ratio test found no breakpoint".into()));
                }
                return Ok(Outcome::Unbounded);
            }

            let step = if flip { flip_range } else { best.unwrap().0 };
            for (i, &a) in alpha.iter().enumerate() {
                let j = self.basis[i];
                self.x[j] -= dir * step * a;
            }
            if flip {
                let st = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                self.place_nonbasic(q, st);
            } else {
                let (_, r, to_upper) = best.unwrap();
                self.x[q] += dir * step;
                let leaving = self.basis[r];
                let st = if to_upper { VarState::AtUpper } else { VarState::AtLower };
                self.place_nonbasic(leaving, st);
                self.basis[r] = q;
                self.state[q] = VarState::Basic;
                self.pivot(r, &alpha);
            }
            self.iterations += 1;
            since_refactor += 1;
            if step <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > self.opts.degenerate_threshold {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
        }
    }

    fn finish(&self, outcome: Outcome) -> LpSolution {
        let flip = if self.p.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let basis = Basis {
            basic: self.basis.clone(),
            at_upper: self.state.iter().map(|s| *s == VarState::AtUpper).collect(),
        };
        let empty = |status, infeasible_rows| LpSolution {
            status,
            primal: Vec::new(),
            objective: f64::NAN,
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            infeasible_rows,
            basis: Some(basis.clone()),
            iterations: self.iterations,
        };
        match outcome {
            Outcome::Infeasible(rows) => empty(super::LpStatus::Infeasible, rows),
            Outcome::Unbounded => empty(LpStatus::Unbounded, Vec::new()),
            Outcome::IterationLimit => empty(LpStatus::IterationLimit, Vec::new()),
            Outcome::Optimal => {
                let cb: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
                let y = self.btran(&cb);
                let primal = self.x[..self.n].to_vec();
                let reduced_costs = (0..self.n)
                    .map(|j| {
                        if self.state[j] == VarState::Basic {
                            0.0
                        } else {
                            flip * self.reduced_cost(j, self.cost[j], &y)
                        }
                    })
                    .collect();
                LpSolution {
                    status: LpStatus::Optimal,
                    objective: self.p.objective_value(&primal),
                    primal,
                    duals: y.iter().map(|v| flip * v).collect(),
                    reduced_costs,
                    infeasible_rows: Vec::new(),
                    basis: Some(basis),
                    iterations: self.iterations,
                }
            }
        }
    }
}
