//! Power-network data model and PTDF computation.
//!
//! Grid documents are JSON with MW quantities:
//!
//! ```json
//! { "base_mva": 100, "slack_bus": 1, "buses": [1, 2],
//!   "generators": [{"bus": 1, "cost": 10, "pmin": 0, "pmax": 100}],
//!   "branches": [{"from": 1, "to": 2, "susceptance": 10, "limit": 80}],
//!   "loads": [{"bus": 2, "nominal": 50}] }
//! ```
//!
//! Internally every power quantity is in p.u. on `base_mva`. Any number of
//! generators and loads may sit on one bus.

use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{BoxError, DemandBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid schema errors: {}", .0.join("; "))]
    SchemaError(Vec<String>),
    #[error("slack bus {0} is not a bus of the network")]
    InvalidSlack(u32),
    #[error("network is disconnected; unreachable buses from slack: {0:?}")]
    DisconnectedGraph(Vec<u32>),
    #[error("reduced susceptance matrix is singular")]
    SingularSystem,
}

fn default_base() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDoc {
    pub bus: u32,
    pub cost: f64,
    pub pmin: f64,
    pub pmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchDoc {
    pub from: u32,
    pub to: u32,
    pub susceptance: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadDoc {
    pub bus: u32,
    pub nominal: f64,
}

/// The on-disk grid schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDocument {
    #[serde(default = "default_base")]
    pub base_mva: f64,
    pub slack_bus: u32,
    pub buses: Vec<u32>,
    pub generators: Vec<GeneratorDoc>,
    pub branches: Vec<BranchDoc>,
    pub loads: Vec<LoadDoc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// Bus index (position in `Network::bus_ids`).
    pub bus: usize,
    /// Cost per MW.
    pub cost: f64,
    pub pmin: f64,
    pub pmax: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub nominal: f64,
}

/// A validated network. Power quantities are in p.u.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub bus_ids: Vec<u32>,
    pub slack: usize,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    pub loads: Vec<Load>,
    document: GridDocument,
}

pub fn load_network(text: &str) -> Result<Network, GridError> {
    let doc: GridDocument =
        serde_json::from_str(text).map_err(|e| GridError::SchemaError(vec![e.to_string()]))?;
    Network::from_document(doc)
}

/// Names of the grids compiled into the crate.
pub const BUNDLED_GRIDS: &[&str] = &["case2", "case3", "case5"];

/// Returns the document text of a bundled grid.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "case2" => Some(include_str!("../data/case2.json")),
        "case3" => Some(include_str!("../data/case3.json")),
        "case5" => Some(include_str!("../data/case5.json")),
        _ => None,
    }
}

impl Network {
    pub fn from_document(doc: GridDocument) -> Result<Self, GridError> {
        let mut errors = Vec::new();
        if !(doc.base_mva > 0.0) {
            errors.push(format!("base_mva must be positive, got {}", doc.base_mva));
        }
        if doc.buses.is_empty() {
            errors.push("no buses".to_string());
        }
        let mut index = HashMap::new();
        for (i, &b) in doc.buses.iter().enumerate() {
            if index.insert(b, i).is_some() {
                errors.push(format!("duplicate bus id {}", b));
            }
        }
        let bus_of = |what: String, b: u32, errors: &mut Vec<String>| -> usize {
            match index.get(&b) {
                Some(&i) => i,
                None => {
                    errors.push(format!("{} references unknown bus {}", what, b));
                    usize::MAX
                }
            }
        };
        let base = doc.base_mva;
        let mut generators = Vec::new();
        for (k, g) in doc.generators.iter().enumerate() {
            let bus = bus_of(format!("generator {}", k), g.bus, &mut errors);
            if !(g.pmin <= g.pmax) {
                errors.push(format!("generator {} at bus {} has pmin {} > pmax {}", k, g.bus, g.pmin, g.pmax));
            }
            if !g.cost.is_finite() {
                errors.push(format!("generator {} has non-finite cost", k));
            }
            generators.push(Generator { bus, cost: g.cost, pmin: g.pmin / base, pmax: g.pmax / base });
        }
        if doc.generators.is_empty() {
            errors.push("no generators".to_string());
        }
        let mut branches = Vec::new();
        for (k, br) in doc.branches.iter().enumerate() {
            let from = bus_of(format!("branch {}", k), br.from, &mut errors);
            let to = bus_of(format!("branch {}", k), br.to, &mut errors);
            if br.from == br.to {
                errors.push(format!("branch {} is a self-loop at bus {}", k, br.from));
            }
            if !(br.susceptance > 0.0) {
                errors.push(format!("branch {} has non-positive susceptance {}", k, br.susceptance));
            }
            if !(br.limit > 0.0) {
                errors.push(format!("branch {} has non-positive flow limit {}", k, br.limit));
            }
            branches.push(Branch { from, to, susceptance: br.susceptance, limit: br.limit / base });
        }
        let mut loads = Vec::new();
        for (k, l) in doc.loads.iter().enumerate() {
            let bus = bus_of(format!("load {}", k), l.bus, &mut errors);
            if !(l.nominal >= 0.0) {
                errors.push(format!("load {} has negative nominal demand {}", k, l.nominal));
            }
            loads.push(Load { bus, nominal: l.nominal / base });
        }
        if doc.loads.is_empty() {
            errors.push("no loads".to_string());
        }
        if !errors.is_empty() {
            return Err(GridError::SchemaError(errors));
        }
        let slack = *index.get(&doc.slack_bus).ok_or(GridError::InvalidSlack(doc.slack_bus))?;

        let n = doc.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut seen = HashSet::from([slack]);
        let mut queue = VecDeque::from([slack]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        if seen.len() != n {
            let missing = (0..n).filter(|i| !seen.contains(i)).map(|i| doc.buses[i]).collect();
            return Err(GridError::DisconnectedGraph(missing));
        }

        Ok(Self {
            base_mva: base,
            bus_ids: doc.buses.clone(),
            slack,
            generators,
            branches,
            loads,
            document: doc,
        })
    }

    pub fn document(&self) -> &GridDocument {
        &self.document
    }

    pub fn num_buses(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn num_loads(&self) -> usize {
        self.loads.len()
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn nominal_demand(&self) -> Vec<f64> {
        self.loads.iter().map(|l| l.nominal).collect()
    }

    pub fn pmin(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.pmin).collect()
    }

    pub fn pmax(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.pmax).collect()
    }

    /// The sampling box `[lo_frac, hi_frac] × nominal`.
    pub fn demand_box(&self, lo_frac: f64, hi_frac: f64) -> Result<DemandBox, BoxError> {
        DemandBox::scaled(&self.nominal_demand(), lo_frac, hi_frac)
    }

    /// Hex SHA-256 of the canonical JSON form of the source document.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(&self.document).expect("grid document serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Aggregates per-device injections into a bus-level vector.
    pub fn bus_injections(&self, pg: &[f64], pd: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.num_buses()];
        for (g, v) in self.generators.iter().zip(pg) {
            p[g.bus] += v;
        }
        for (l, v) in self.loads.iter().zip(pd) {
            p[l.bus] -= v;
        }
        p
    }
}

/// Branch-by-bus PTDF matrix with the slack bus absorbing injections.
#[derive(Debug, Clone, PartialEq)]
pub struct PtdfMatrix {
    pub matrix: Vec<Vec<f64>>,
    pub slack: usize,
}

impl PtdfMatrix {
    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        self.matrix.iter().map(|row| row.iter().zip(injections).map(|(a, p)| a * p).sum()).collect()
    }
}

fn reduced_index(slack: usize, bus: usize) -> Option<usize> {
    match bus.cmp(&slack) {
        std::cmp::Ordering::Less => Some(bus),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(bus - 1),
    }
}

/// Reduced bus susceptance matrix with the slack row and column deleted.
pub fn reduced_susceptance(network: &Network) -> DMatrix<f64> {
    let n = network.num_buses();
    let mut b = DMatrix::zeros(n - 1, n - 1);
    for br in &network.branches {
        let f = reduced_index(network.slack, br.from);
        let t = reduced_index(network.slack, br.to);
        if let Some(f) = f {
            b[(f, f)] += br.susceptance;
        }
        if let Some(t) = t {
            b[(t, t)] += br.susceptance;
        }
        if let (Some(f), Some(t)) = (f, t) {
            b[(f, t)] -= br.susceptance;
            b[(t, f)] -= br.susceptance;
        }
    }
    b
}

pub fn compute_ptdf(network: &Network) -> Result<PtdfMatrix, GridError> {
    let n = network.num_buses();
    let slack = network.slack;
    let mut matrix = vec![vec![0.0; n]; network.num_branches()];
    if n == 1 {
        return Ok(PtdfMatrix { matrix, slack });
    }
    let b = reduced_susceptance(network);
    let lu = b.lu();
    let scale = network.branches.iter().map(|b| b.susceptance).fold(0.0, f64::max);
    let det = lu.determinant();
    if !det.is_finite() || det.abs() <= 1e-12 * scale.powi((n - 1) as i32) {
        return Err(GridError::SingularSystem);
    }
    // B_r is symmetric, so row e of Φ solves B_r φ = b_e (e_from − e_to).
    for (e, br) in network.branches.iter().enumerate() {
        let mut rhs = DVector::zeros(n - 1);
        if let Some(f) = reduced_index(slack, br.from) {
            rhs[f] += br.susceptance;
        }
        if let Some(t) = reduced_index(slack, br.to) {
            rhs[t] -= br.susceptance;
        }
        let phi = lu.solve(&rhs).ok_or(GridError::SingularSystem)?;
        for bus in 0..n {
            if let Some(r) = reduced_index(slack, bus) {
                matrix[e][bus] = phi[r];
            }
        }
    }
    Ok(PtdfMatrix { matrix, slack })
}

/// Branch flows as affine maps of generator and load vectors:
/// `flows = gen · pg − load · pd`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub gen: Vec<Vec<f64>>,
    pub load: Vec<Vec<f64>>,
    pub limits: Vec<f64>,
}

impl FlowModel {
    pub fn new(network: &Network, ptdf: &PtdfMatrix) -> Self {
        let gen = ptdf
            .matrix
            .iter()
            .map(|row| network.generators.iter().map(|g| row[g.bus]).collect())
            .collect();
        let load = ptdf
            .matrix
            .iter()
            .map(|row| network.loads.iter().map(|l| row[l.bus]).collect())
            .collect();
        Self { gen, load, limits: network.branches.iter().map(|b| b.limit).collect() }
    }

    pub fn from_network(network: &Network) -> Result<Self, GridError> {
        Ok(Self::new(network, &compute_ptdf(network)?))
    }

    pub fn num_lines(&self) -> usize {
        self.limits.len()
    }

    pub fn flow(&self, line: usize, pg: &[f64], pd: &[f64]) -> f64 {
        let g: f64 = self.gen[line].iter().zip(pg).map(|(a, p)| a * p).sum();
        let d: f64 = self.load[line].iter().zip(pd).map(|(a, p)| a * p).sum();
        g - d
    }

    pub fn flows(&self, pg: &[f64], pd: &[f64]) -> Vec<f64> {
        (0..self.num_lines()).map(|e| self.flow(e, pg, pd)).collect()
    }
}
