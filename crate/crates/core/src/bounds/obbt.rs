//! Optimization-based bound tightening: each bound is the dual side of a
//! budgeted branch-and-bound over the sub-network feeding the neuron.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BoundsError, BoundsTable};
use crate::domain::DemandBox;
use crate::nn::ReluStack;
use crate::verify::{branch_and_bound, encode_milp, BnbLimits, Objective, Status};

/// Absolute gap at which a neuron bound counts as solved.
const OBBT_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

/// Limits for one bound problem; `None` means unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Budget {
    pub time: Option<Duration>,
    pub nodes: Option<usize>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn time(limit: Duration) -> Self {
        Self { time: Some(limit), nodes: None }
    }

    pub fn nodes(limit: usize) -> Self {
        Self { time: None, nodes: Some(limit) }
    }

    pub fn is_zero(&self) -> bool {
        self.time == Some(Duration::ZERO) || self.nodes == Some(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObbtBound {
    pub value: f64,
    /// Whether the search closed the gap before the budget ran out.
    pub optimal: bool,
    pub nodes: usize,
}

/// Lower or upper bound of `Ẑ[layer][index]` over the box, given sound
/// intervals for all earlier layers in `prior`.
pub fn obbt_milp(
    stack: &ReluStack,
    domain: &DemandBox,
    layer: usize,
    index: usize,
    side: Side,
    budget: &Budget,
    prior: &BoundsTable,
) -> Result<ObbtBound, BoundsError> {
    if budget.is_zero() {
        return Err(BoundsError::BudgetZero);
    }
    let sign = match side {
        Side::Upper => 1.0,
        Side::Lower => -1.0,
    };
    let objective = Objective::PreActivation { layer, index, sign };
    let problem = encode_milp(stack, prior, &objective, domain).map_err(Box::new)?;
    let limits = BnbLimits { max_nodes: budget.nodes, time_limit: budget.time, gap: OBBT_GAP };
    let outcome = branch_and_bound(&problem, None, &limits).map_err(Box::new)?;
    // Pad by LP round-off so the bound stays sound for the exact network.
    let pad = 1e-12 * outcome.dual.abs().max(1.0);
    Ok(ObbtBound {
        value: sign * (outcome.dual + pad),
        optimal: outcome.status == Status::ProvedOptimal,
        nodes: outcome.nodes,
    })
}
