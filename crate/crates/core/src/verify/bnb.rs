//! Best-first branch-and-bound over the ReLU binaries, warm-starting every
//! node LP from its parent's basis.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::lp::{solve_lp, Basis, LpStatus};

use super::milp::MilpProblem;
use super::VerifyError;

/// Integrality tolerance on binaries.
const INT_TOL: f64 = 1e-9;
/// A candidate replaces the incumbent only if it is better by this much.
const IMPROVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbLimits {
    pub max_nodes: Option<usize>,
    pub time_limit: Option<Duration>,
    /// Absolute optimality gap.
    pub gap: f64,
}

impl Default for BnbLimits {
    fn default() -> Self {
        Self { max_nodes: None, time_limit: None, gap: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    ProvedOptimal,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeLog {
    pub node: usize,
    pub primal: f64,
    pub dual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbOutcome {
    pub primal: f64,
    pub dual: f64,
    pub witness: Vec<f64>,
    pub status: Status,
    /// Node LPs solved.
    pub nodes: usize,
    pub wall_time: f64,
    pub root_dual: f64,
    /// Incumbent value installed before the root was solved.
    pub warm_value: Option<f64>,
    pub log: Vec<NodeLog>,
}

struct Node {
    bound: f64,
    /// Binary fixings in branching order; also the tie-break key.
    path: Vec<(usize, bool)>,
    basis: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Higher bound first, then the lexicographically smaller path.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| other.path.cmp(&self.path))
    }
}

struct Incumbent {
    value: f64,
    witness: Vec<f64>,
}

/// Maximizes the MILP. Every node's LP point is replayed through the network
/// as a candidate incumbent, so the primal side is always an exact network
/// value; the dual side is the largest bound of any unresolved subtree.
pub fn branch_and_bound(
    problem: &MilpProblem<'_>,
    warm: Option<&[f64]>,
    limits: &BnbLimits,
) -> Result<BnbOutcome, VerifyError> {
    let start = Instant::now();
    let mut lp = problem.lp.clone();
    let binaries: Vec<usize> = problem.map.binaries.iter().map(|b| b.var).collect();

    let mut incumbent = warm.map(|w| {
        let mut pd = w.to_vec();
        problem.domain.project(&mut pd);
        Incumbent { value: problem.evaluate(&pd), witness: pd }
    });
    let warm_value = incumbent.as_ref().map(|i| i.value);

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::INFINITY, path: Vec::new(), basis: None });
    // Largest bound among subtrees closed without further search.
    let mut closed = f64::NEG_INFINITY;
    let mut nodes = 0usize;
    let mut log = Vec::new();
    let mut last_dual = f64::INFINITY;
    let mut root_dual = f64::NAN;

    let dual_now = |heap: &BinaryHeap<Node>, closed: f64, inc: &Option<Incumbent>, last: f64| {
        let open = heap.peek().map_or(f64::NEG_INFINITY, |n| n.bound);
        let primal = inc.as_ref().map_or(f64::NEG_INFINITY, |i| i.value);
        open.max(closed).max(primal).min(last)
    };

    while let Some(top) = heap.peek() {
        let primal = incumbent.as_ref().map_or(f64::NEG_INFINITY, |i| i.value);
        if top.bound <= primal + limits.gap {
            // Everything still open is within the gap.
            closed = closed.max(top.bound);
            heap.clear();
            break;
        }
        if nodes > 0 {
            let out_of_nodes = limits.max_nodes.is_some_and(|m| nodes >= m);
            let out_of_time = limits.time_limit.is_some_and(|t| start.elapsed() >= t);
            if out_of_nodes || out_of_time {
                break;
            }
        }
        let node = heap.pop().expect("peeked");
        for &y in &binaries {
            lp.var_lower[y] = 0.0;
            lp.var_upper[y] = 1.0;
        }
        for &(b, value) in &node.path {
            let y = binaries[b];
            let v = if value { 1.0 } else { 0.0 };
            lp.var_lower[y] = v;
            lp.var_upper[y] = v;
        }
        let sol = solve_lp(&lp, node.basis.as_ref())?;
        nodes += 1;
        let is_root = node.path.is_empty();
        match sol.status {
            LpStatus::Infeasible if is_root => return Err(VerifyError::RelaxationInfeasible),
            LpStatus::Infeasible => {}
            LpStatus::Unbounded => return Err(VerifyError::RelaxationUnbounded),
            LpStatus::IterationLimit => {
                // No LP point: keep the parent's bound and split the first free binary.
                let fixed: Vec<usize> = node.path.iter().map(|p| p.0).collect();
                match (0..binaries.len()).find(|b| !fixed.contains(b)) {
                    Some(b) => push_children(&mut heap, &node, b, node.bound, None),
                    None => closed = closed.max(node.bound),
                }
                if is_root {
                    root_dual = node.bound;
                }
            }
            LpStatus::Optimal => {
                let value = (sol.objective + problem.constant).min(node.bound);
                if is_root {
                    root_dual = value;
                }
                let pd = problem.demand_of(&sol.primal);
                let candidate = problem.evaluate(&pd);
                if incumbent.as_ref().is_none_or(|i| candidate > i.value + IMPROVE_TOL) {
                    incumbent = Some(Incumbent { value: candidate, witness: pd });
                }
                let primal = incumbent.as_ref().map_or(f64::NEG_INFINITY, |i| i.value);
                let branch = binaries
                    .iter()
                    .enumerate()
                    .filter(|(_, &y)| {
                        let v = sol.primal[y];
                        v.min(1.0 - v) > INT_TOL
                    })
                    .min_by(|(i, &a), (j, &b)| {
                        let da = (sol.primal[a] - 0.5).abs();
                        let db = (sol.primal[b] - 0.5).abs();
                        da.total_cmp(&db).then(i.cmp(j))
                    })
                    .map(|(i, _)| i);
                match branch {
                    Some(b) if value > primal + limits.gap => push_children(&mut heap, &node, b, value, sol.basis),
                    _ => closed = closed.max(value),
                }
            }
        }
        let dual = dual_now(&heap, closed, &incumbent, last_dual);
        last_dual = dual;
        log.push(NodeLog { node: nodes, primal: incumbent.as_ref().map_or(f64::NEG_INFINITY, |i| i.value), dual });
    }

    let inc = incumbent.ok_or(VerifyError::RelaxationInfeasible)?;
    let dual = dual_now(&heap, closed, &Some(Incumbent { value: inc.value, witness: Vec::new() }), last_dual);
    let status = if dual - inc.value <= limits.gap { Status::ProvedOptimal } else { Status::BudgetExhausted };
    Ok(BnbOutcome {
        primal: inc.value,
        dual,
        witness: inc.witness,
        status,
        nodes,
        wall_time: start.elapsed().as_secs_f64(),
        root_dual,
        warm_value,
        log,
    })
}

fn push_children(heap: &mut BinaryHeap<Node>, parent: &Node, binary: usize, bound: f64, basis: Option<Basis>) {
    for value in [false, true] {
        let mut path = parent.path.clone();
        path.push((binary, value));
        heap.push(Node { bound, path, basis: basis.clone() });
    }
}
