//! DC optimal power flow: minimum-cost dispatch subject to power balance,
//! generator limits, and two one-sided thermal rows per branch.

use thiserror::Error;

use crate::grid::{FlowModel, GridError, Network};
use crate::lp::{solve_lp, LpError, LpProblem, LpStatus, RowSense, Sense};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DcopfError {
    #[error("DC-OPF infeasible; violated rows: {}", .0.join(", "))]
    Infeasible(Vec<String>),
    #[error("demand vector has {got} entries, network has {expected} loads")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("demand {index} is negative ({value})")]
    NegativeDemand { index: usize, value: f64 },
    #[error("LP solver stopped with status {0:?}")]
    SolverStatus(LpStatus),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// An optimal dispatch (p.u.).
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub pg: Vec<f64>,
    /// `Σ cost_g · pg_g` with `pg` in p.u.
    pub cost: f64,
    pub flows: Vec<f64>,
    /// Marginal cost of total demand (dual of the balance row).
    pub balance_dual: f64,
}

/// Reusable solver holding the network's flow model.
#[derive(Debug, Clone)]
pub struct DcopfSolver<'a> {
    network: &'a Network,
    flows: FlowModel,
}

fn row_name(i: usize) -> String {
    match i {
        0 => "balance".to_string(),
        i => {
            let e = (i - 1) / 2;
            if (i - 1) % 2 == 0 {
                format!("flow-upper[{}]", e)
            } else {
                format!("flow-lower[{}]", e)
            }
        }
    }
}

impl<'a> DcopfSolver<'a> {
    pub fn new(network: &'a Network) -> Result<Self, DcopfError> {
        Ok(Self { network, flows: FlowModel::from_network(network)? })
    }

    pub fn flow_model(&self) -> &FlowModel {
        &self.flows
    }

    pub fn build_lp(&self, demand: &[f64]) -> LpProblem {
        let net = self.network;
        let mut lp = LpProblem::new(Sense::Minimize);
        let vars: Vec<usize> =
            net.generators.iter().map(|g| lp.add_var(g.pmin, g.pmax, g.cost)).collect();
        let total: f64 = demand.iter().sum();
        let all: Vec<(usize, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
        lp.add_row(&all, RowSense::Eq, total);
        for e in 0..self.flows.num_lines() {
            let terms: Vec<(usize, f64)> =
                vars.iter().zip(&self.flows.gen[e]).map(|(&v, &a)| (v, a)).collect();
            let load_part: f64 = self.flows.load[e].iter().zip(demand).map(|(a, d)| a * d).sum();
            let limit = self.flows.limits[e];
            lp.add_row(&terms, RowSense::Le, limit + load_part);
            lp.add_row(&terms, RowSense::Ge, -limit + load_part);
        }
        lp
    }

    pub fn solve(&self, demand: &[f64]) -> Result<Dispatch, DcopfError> {
        let expected = self.network.num_loads();
        if demand.len() != expected {
            return Err(DcopfError::DimensionMismatch { expected, got: demand.len() });
        }
        if let Some((index, &value)) = demand.iter().enumerate().find(|(_, d)| !(**d >= 0.0)) {
            return Err(DcopfError::NegativeDemand { index, value });
        }
        let lp = self.build_lp(demand);
        let sol = solve_lp(&lp, None)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                return Err(DcopfError::Infeasible(sol.infeasible_rows.iter().map(|&i| row_name(i)).collect()))
            }
            s => return Err(DcopfError::SolverStatus(s)),
        }
        let flows = self.flows.flows(&sol.primal, demand);
        Ok(Dispatch { cost: sol.objective, flows, balance_dual: sol.duals[0], pg: sol.primal })
    }

    /// Re-checks the model constraints for a stored dispatch.
    pub fn check(&self, demand: &[f64], pg: &[f64], tol: f64) -> Result<(), String> {
        let net = self.network;
        if pg.len() != net.num_generators() {
            return Err(format!("{} generator values for {} generators", pg.len(), net.num_generators()));
        }
        let imbalance = pg.iter().sum::<f64>() - demand.iter().sum::<f64>();
        if imbalance.abs() > tol {
            return Err(format!("power imbalance {}", imbalance));
        }
        for (k, (g, &p)) in net.generators.iter().zip(pg).enumerate() {
            if p < g.pmin - tol || p > g.pmax + tol {
                return Err(format!("generator {} output {} outside [{}, {}]", k, p, g.pmin, g.pmax));
            }
        }
        for (e, f) in self.flows.flows(pg, demand).iter().enumerate() {
            if f.abs() > self.flows.limits[e] + tol {
                return Err(format!("branch {} flow {} exceeds {}", e, f, self.flows.limits[e]));
            }
        }
        Ok(())
    }
}

pub fn solve_dcopf(network: &Network, demand: &[f64]) -> Result<Dispatch, DcopfError> {
    DcopfSolver::new(network)?.solve(demand)
}
