//! Exhaustive activation-pattern enumeration: on each pattern the network is
//! affine, so the worst case is the best of one LP per feasible pattern.
//! Shares nothing with the MILP path beyond the LP kernel.

use crate::bounds::{ibp, Stability};
use crate::domain::DemandBox;
use crate::lp::{solve_lp, LpProblem, LpStatus, RowSense, Sense};
use crate::nn::ReluStack;

use super::{Objective, Target, VerifyError};

pub const MAX_ORACLE_UNSTABLE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub witness: Vec<f64>,
    /// Feasible activation patterns visited.
    pub patterns: usize,
}

/// `rows · p^d + offset`, one row per neuron.
#[derive(Clone)]
struct AffineMap {
    rows: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

fn compose(w: &[Vec<f64>], b: &[f64], inner: &AffineMap, n: usize) -> AffineMap {
    let rows = w
        .iter()
        .map(|wr| (0..n).map(|k| wr.iter().zip(&inner.rows).map(|(a, r)| a * r[k]).sum()).collect())
        .collect();
    let offset = w.iter().zip(b).map(|(wr, bi)| bi + wr.iter().zip(&inner.offset).map(|(a, c)| a * c).sum::<f64>()).collect();
    AffineMap { rows, offset }
}

fn terms(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter().copied().enumerate().collect()
}

struct Search<'a> {
    stack: &'a ReluStack,
    stability: Vec<Vec<Stability>>,
    unstable: Vec<Vec<usize>>,
    objectives: &'a [Objective],
    best: Vec<Option<(f64, Vec<f64>)>>,
    patterns: usize,
}

impl Search<'_> {
    fn visit(&mut self, layer: usize, z: AffineMap, lp: LpProblem) -> Result<(), VerifyError> {
        let n = lp.num_vars();
        if layer == self.stack.layers.len() {
            return self.leaf(&z, &lp);
        }
        let l = &self.stack.layers[layer];
        let pre = compose(&l.w, &l.b, &z, n);
        let free = self.unstable[layer].clone();
        for mask in 0..(1usize << free.len()) {
            let mut lp = lp.clone();
            let mut post = AffineMap { rows: pre.rows.clone(), offset: pre.offset.clone() };
            let active = |i: usize| free.iter().position(|&f| f == i).map(|k| (mask >> k) & 1 == 1);
            for i in 0..pre.rows.len() {
                let on = match active(i) {
                    Some(on) => {
                        let sense = if on { RowSense::Ge } else { RowSense::Le };
                        lp.add_row(&terms(&pre.rows[i]), sense, -pre.offset[i]);
                        on
                    }
                    // Stable neurons: the IBP classification already holds on the box.
                    None => self.stability[layer][i] == Stability::Active,
                };
                if !on {
                    post.rows[i] = vec![0.0; n];
                    post.offset[i] = 0.0;
                }
            }
            if !free.is_empty() {
                let sol = solve_lp(&lp, None)?;
                if sol.status == LpStatus::Infeasible {
                    continue;
                }
            }
            self.visit(layer + 1, post, lp)?;
        }
        Ok(())
    }

    fn leaf(&mut self, z: &AffineMap, lp: &LpProblem) -> Result<(), VerifyError> {
        self.patterns += 1;
        let r = &self.stack.readout;
        let n = lp.num_vars();
        let out = compose(&r.w, &r.b, z, n);
        for (k, objective) in self.objectives.iter().enumerate() {
            let Objective::Affine { output, demand, constant } = objective else {
                return Err(VerifyError::ShapeMismatch("the oracle handles affine objectives only".into()));
            };
            let mut lp = lp.clone();
            lp.sense = Sense::Maximize;
            let mut offset = *constant;
            for j in 0..n {
                lp.objective[j] = demand[j] + output.iter().zip(&out.rows).map(|(a, row)| a * row[j]).sum::<f64>();
            }
            offset += output.iter().zip(&out.offset).map(|(a, c)| a * c).sum::<f64>();
            let sol = solve_lp(&lp, None)?;
            if !sol.is_optimal() {
                continue;
            }
            let value = sol.objective + offset;
            if self.best[k].as_ref().is_none_or(|(v, _)| value > *v) {
                self.best[k] = Some((value, sol.primal));
            }
        }
        Ok(())
    }
}

/// Exact maxima of each affine objective over the box, by enumerating every
/// activation pattern of the neurons that IBP leaves unstable.
pub fn pattern_enumeration_oracle(
    stack: &ReluStack,
    domain: &DemandBox,
    objectives: &[Objective],
) -> Result<Vec<OracleResult>, VerifyError> {
    let table = ibp(stack, domain).map_err(|e| VerifyError::ShapeMismatch(e.to_string()))?;
    let count = table.num_unstable();
    if count > MAX_ORACLE_UNSTABLE {
        return Err(VerifyError::TooManyUnstable(count));
    }
    let stability: Vec<Vec<Stability>> =
        table.layers.iter().map(|l| l.iter().map(|b| b.stability()).collect()).collect();
    let unstable = stability
        .iter()
        .map(|l| l.iter().enumerate().filter(|(_, s)| **s == Stability::Unstable).map(|(i, _)| i).collect())
        .collect();
    let n = domain.dim();
    let mut lp = LpProblem::new(Sense::Maximize);
    for j in 0..n {
        lp.add_var(domain.lower[j], domain.upper[j], 0.0);
    }
    let identity = AffineMap {
        rows: (0..n).map(|i| (0..n).map(|k| if i == k { 1.0 } else { 0.0 }).collect()).collect(),
        offset: vec![0.0; n],
    };
    let mut search = Search { stack, stability, unstable, objectives, best: vec![None; objectives.len()], patterns: 0 };
    search.visit(0, identity, lp)?;
    let patterns = search.patterns;
    search
        .best
        .into_iter()
        .map(|b| {
            let (value, witness) = b.ok_or(VerifyError::RelaxationInfeasible)?;
            Ok(OracleResult { value, witness, patterns })
        })
        .collect()
}

/// Exact worst-case violation of a target.
pub fn oracle_target(stack: &ReluStack, domain: &DemandBox, target: &Target) -> Result<OracleResult, VerifyError> {
    let objectives = target.signed_objectives(stack.readout.outputs(), domain.dim());
    let results = pattern_enumeration_oracle(stack, domain, &objectives)?;
    let mut best = results.into_iter().max_by(|a, b| a.value.total_cmp(&b.value)).expect("two objectives");
    if target.clamps_at_zero() {
        best.value = best.value.max(0.0);
    }
    Ok(best)
}
