//! Exact worst-case verification of a proxy: power-balance and line-flow
//! targets, each solved as two signed MILPs.

mod bnb;
mod milp;
mod oracle;

pub use bnb::{branch_and_bound, BnbLimits, BnbOutcome, NodeLog, Status};
pub use milp::{encode_milp, Binary, MilpProblem, PostVar, RowTag, VarMap};
pub use oracle::{oracle_target, pattern_enumeration_oracle, OracleResult, MAX_ORACLE_UNSTABLE};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{interval_affine, BoundsTable};
use crate::domain::DemandBox;
use crate::grid::FlowModel;
use crate::lp::LpError;
use crate::nn::ReluStack;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("neuron ({layer}, {index}) has no finite pre-activation bounds; compute bounds first (e.g. `tighten --method ibp`)")]
    UnboundedNeuron { layer: usize, index: usize },
    #[error("LP relaxation is unbounded")]
    RelaxationUnbounded,
    #[error("LP relaxation is infeasible; the bounds table does not cover the box")]
    RelaxationInfeasible,
    #[error("{0} unstable ReLUs exceed the enumeration limit of {MAX_ORACLE_UNSTABLE}")]
    TooManyUnstable(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("line {0} does not exist")]
    UnknownLine(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// A linear objective to maximize.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `output · p̂ + demand · p^d + constant`.
    Affine { output: Vec<f64>, demand: Vec<f64>, constant: f64 },
    /// `sign · Ẑ[layer][index]`; later layers are left out of the encoding.
    PreActivation { layer: usize, index: usize, sign: f64 },
}

impl Objective {
    pub fn evaluate(&self, stack: &ReluStack, pd: &[f64]) -> f64 {
        let (out, trace) = stack.forward(pd);
        match self {
            Objective::Affine { output, demand, constant } => {
                constant
                    + output.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>()
                    + demand.iter().zip(pd).map(|(a, b)| a * b).sum::<f64>()
            }
            Objective::PreActivation { layer, index, sign } => sign * trace.pre[*layer][*index],
        }
    }
}

/// A verification target and its violation measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Target {
    /// `|Σ p^d − Σ p̂^g|`.
    PowerBalance,
    /// `max(0, |gen · p̂^g − load · p^d| − limit)`.
    Line { index: usize, gen: Vec<f64>, load: Vec<f64>, limit: f64 },
}

impl Target {
    pub fn line(flows: &FlowModel, index: usize) -> Result<Self, VerifyError> {
        if index >= flows.num_lines() {
            return Err(VerifyError::UnknownLine(index));
        }
        Ok(Target::Line {
            index,
            gen: flows.gen[index].clone(),
            load: flows.load[index].clone(),
            limit: flows.limits[index],
        })
    }

    pub fn name(&self) -> String {
        match self {
            Target::PowerBalance => "pb".to_string(),
            Target::Line { index, .. } => format!("line-{}", index),
        }
    }

    /// Flow or imbalance `s`; the violation is `|s| − offset`, clamped at 0
    /// for lines.
    pub fn signed(&self, pd: &[f64], phat: &[f64]) -> f64 {
        match self {
            Target::PowerBalance => pd.iter().sum::<f64>() - phat.iter().sum::<f64>(),
            Target::Line { gen, load, .. } => {
                gen.iter().zip(phat).map(|(a, p)| a * p).sum::<f64>() - load.iter().zip(pd).map(|(a, d)| a * d).sum::<f64>()
            }
        }
    }

    pub fn offset(&self) -> f64 {
        match self {
            Target::PowerBalance => 0.0,
            Target::Line { limit, .. } => *limit,
        }
    }

    /// Unclamped margin `|s| − offset`.
    pub fn margin(&self, pd: &[f64], phat: &[f64]) -> f64 {
        self.signed(pd, phat).abs() - self.offset()
    }

    pub fn violation(&self, pd: &[f64], phat: &[f64]) -> f64 {
        let m = self.margin(pd, phat);
        match self {
            Target::PowerBalance => m,
            Target::Line { .. } => m.max(0.0),
        }
    }

    pub fn violation_of(&self, stack: &ReluStack, pd: &[f64]) -> f64 {
        self.violation(pd, &stack.forward(pd).0)
    }

    /// `+s − offset` and `−s − offset` as maximization objectives.
    pub fn signed_objectives(&self, n_gen: usize, n_load: usize) -> [Objective; 2] {
        let (out, dem, c): (Vec<f64>, Vec<f64>, f64) = match self {
            Target::PowerBalance => (vec![-1.0; n_gen], vec![1.0; n_load], 0.0),
            Target::Line { gen, load, limit, .. } => (gen.clone(), load.iter().map(|a| -a).collect(), -limit),
        };
        [1.0, -1.0].map(|s: f64| Objective::Affine {
            output: out.iter().map(|a| s * a).collect(),
            demand: dem.iter().map(|a| s * a).collect(),
            constant: c,
        })
    }

    pub fn clamps_at_zero(&self) -> bool {
        matches!(self, Target::Line { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub limits: BnbLimits,
    pub bounds_method: String,
    pub warm_source: String,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { limits: BnbLimits::default(), bounds_method: "ibp".into(), warm_source: "none".into() }
    }
}

/// One signed MILP of a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideResult {
    pub sign: f64,
    /// Proven not to exceed the target offset, so never solved.
    pub screened: bool,
    pub outcome: Option<BnbOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub target: String,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub witness_pd: Vec<f64>,
    pub status: Status,
    pub nodes: usize,
    pub wall_time: f64,
    pub bounds_method: String,
    pub warm_source: String,
    /// Best warm-start value before search, when one was given.
    pub warm_value: Option<f64>,
    /// Largest root relaxation bound over the signed problems.
    pub root_dual: Option<f64>,
    pub sides: Vec<SideResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_line: Vec<VerifyResult>,
}

/// Upper bound of `sign · s − offset` from output and demand intervals.
fn screen_bound(stack: &ReluStack, table: &BoundsTable, domain: &DemandBox, objective: &Objective) -> f64 {
    let Objective::Affine { output, demand, constant } = objective else { return f64::INFINITY };
    let (lo, hi) = table.post_bounds(table.layers.len() - 1);
    let phat = interval_affine(&stack.readout, &lo, &hi);
    let mut ub = *constant;
    for (a, (l, u)) in output.iter().zip(&phat) {
        ub += if *a >= 0.0 { a * u } else { a * l };
    }
    for (j, a) in demand.iter().enumerate() {
        ub += if *a >= 0.0 { a * domain.upper[j] } else { a * domain.lower[j] };
    }
    ub
}

/// Solves a target as two signed MILPs and combines them; lines are
/// clamped at zero and screened by interval arithmetic first.
pub fn verify_target(
    stack: &ReluStack,
    table: &BoundsTable,
    domain: &DemandBox,
    target: &Target,
    warm: Option<&[f64]>,
    options: &VerifyOptions,
) -> Result<VerifyResult, VerifyError> {
    let start = Instant::now();
    let objectives = target.signed_objectives(stack.readout.outputs(), domain.dim());
    let mut sides = Vec::with_capacity(2);
    for (objective, sign) in objectives.iter().zip([1.0, -1.0]) {
        if target.clamps_at_zero() && screen_bound(stack, table, domain, objective) <= 0.0 {
            sides.push(SideResult { sign, screened: true, outcome: None });
            continue;
        }
        let problem = encode_milp(stack, table, objective, domain)?;
        let outcome = branch_and_bound(&problem, warm, &options.limits)?;
        sides.push(SideResult { sign, screened: false, outcome: Some(outcome) });
    }
    let solved: Vec<&BnbOutcome> = sides.iter().filter_map(|s| s.outcome.as_ref()).collect();
    let floor = if target.clamps_at_zero() { 0.0 } else { f64::NEG_INFINITY };
    let best = solved.iter().max_by(|a, b| a.primal.total_cmp(&b.primal));
    let primal = best.map_or(0.0, |b| b.primal).max(floor);
    let dual = solved.iter().map(|o| o.dual).fold(floor, f64::max);
    let witness_pd = match (best, warm) {
        (Some(b), _) => b.witness.clone(),
        (None, Some(w)) => {
            let mut w = w.to_vec();
            domain.project(&mut w);
            w
        }
        (None, None) => domain.center(),
    };
    let status = if solved.iter().all(|o| o.status == Status::ProvedOptimal) {
        Status::ProvedOptimal
    } else {
        Status::BudgetExhausted
    };
    let warm_value = warm.map(|w| {
        let mut w = w.to_vec();
        domain.project(&mut w);
        target.violation_of(stack, &w)
    });
    let root_dual = solved.iter().map(|o| o.root_dual).reduce(f64::max);
    Ok(VerifyResult {
        target: target.name(),
        primal,
        dual,
        gap: dual - primal,
        witness_pd,
        status,
        nodes: solved.iter().map(|o| o.nodes).sum(),
        wall_time: start.elapsed().as_secs_f64(),
        bounds_method: options.bounds_method.clone(),
        warm_source: options.warm_source.clone(),
        warm_value,
        root_dual,
        sides,
        per_line: Vec::new(),
    })
}

/// Worst-case `|Σ p^d − Σ p̂^g|` over the box.
pub fn verify_power_balance(
    stack: &ReluStack,
    table: &BoundsTable,
    domain: &DemandBox,
    warm: Option<&[f64]>,
    options: &VerifyOptions,
) -> Result<VerifyResult, VerifyError> {
    verify_target(stack, table, domain, &Target::PowerBalance, warm, options)
}

/// Worst-case `max(0, |p^f_e| − p̄^f_e)` over the box.
pub fn verify_line_flow(
    stack: &ReluStack,
    flows: &FlowModel,
    table: &BoundsTable,
    domain: &DemandBox,
    line: usize,
    warm: Option<&[f64]>,
    options: &VerifyOptions,
) -> Result<VerifyResult, VerifyError> {
    verify_target(stack, table, domain, &Target::line(flows, line)?, warm, options)
}

/// Every line in parallel; the aggregate carries the worst line's values and
/// the per-line results.
pub fn verify_all_lines(
    stack: &ReluStack,
    flows: &FlowModel,
    table: &BoundsTable,
    domain: &DemandBox,
    warm: &(dyn Fn(usize) -> Option<Vec<f64>> + Sync),
    options: &VerifyOptions,
) -> Result<VerifyResult, VerifyError> {
    let start = Instant::now();
    let per_line: Vec<VerifyResult> = (0..flows.num_lines())
        .into_par_iter()
        .map(|e| verify_line_flow(stack, flows, table, domain, e, warm(e).as_deref(), options))
        .collect::<Result<_, _>>()?;
    let worst = per_line.iter().enumerate().max_by(|(i, a), (j, b)| a.primal.total_cmp(&b.primal).then(j.cmp(i)));
    let dual = per_line.iter().map(|r| r.dual).fold(0.0, f64::max);
    let (primal, witness_pd) = worst.map_or((0.0, domain.center()), |(_, r)| (r.primal, r.witness_pd.clone()));
    let status = if per_line.iter().all(|r| r.status == Status::ProvedOptimal) {
        Status::ProvedOptimal
    } else {
        Status::BudgetExhausted
    };
    Ok(VerifyResult {
        target: "all-lines".into(),
        primal,
        dual,
        gap: dual - primal,
        witness_pd,
        status,
        nodes: per_line.iter().map(|r| r.nodes).sum(),
        wall_time: start.elapsed().as_secs_f64(),
        bounds_method: options.bounds_method.clone(),
        warm_source: options.warm_source.clone(),
        warm_value: per_line.iter().filter_map(|r| r.warm_value).reduce(f64::max),
        root_dual: per_line.iter().filter_map(|r| r.root_dual).reduce(f64::max),
        sides: Vec::new(),
        per_line,
    })
}
