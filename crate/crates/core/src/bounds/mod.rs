//! Pre-activation intervals for every ReLU of a [`ReluStack`] over the demand
//! box. Tighteners are registered by name and share one layer-by-layer
//! driver.

mod crown;
mod ibp;
mod obbt;

pub use crown::{crown_bounds, crown_layer, linear_bounds, upper_relaxation, AlphaConfig, LinearBoundExpr};
pub use ibp::{ibp, ibp_from_layer, interval_affine};
pub use obbt::{obbt_milp, Budget, ObbtBound, Side};

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BoxError, DemandBox};
use crate::nn::ReluStack;
use crate::verify::VerifyError;

/// Default OBBT budget per ReLU.
pub const DEFAULT_NEURON_BUDGET: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error(transparent)]
    EmptyBox(#[from] BoxError),
    #[error("input box has {got} dimensions, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("prior bounds missing for layer {0}")]
    MissingPriorBounds(usize),
    #[error("per-neuron budget must be positive")]
    BudgetZero,
    #[error("unknown bound-tightening method '{0}' (known: {1})")]
    UnknownMethod(String, String),
    #[error("bounds file: {0}")]
    Format(String),
    #[error(transparent)]
    Verify(#[from] Box<VerifyError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "none")]
    Unbounded,
    #[serde(rename = "ibp")]
    Ibp,
    #[serde(rename = "crown")]
    Crown,
    #[serde(rename = "obbt-milp")]
    ObbtMilp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Active,
    Inactive,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronBound {
    pub lo: f64,
    pub hi: f64,
    pub method: Method,
}

impl NeuronBound {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn stability(&self) -> Stability {
        if self.lo >= 0.0 {
            Stability::Active
        } else if self.hi <= 0.0 {
            Stability::Inactive
        } else {
            Stability::Unstable
        }
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Bounds of `relu` applied to the interval.
    pub fn post(&self) -> (f64, f64) {
        (self.lo.max(0.0), self.hi.max(0.0))
    }
}

/// One interval per neuron of every ReLU layer. Intervals only ever shrink.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsTable {
    pub layers: Vec<Vec<NeuronBound>>,
}

impl BoundsTable {
    /// Every neuron unbounded; the MILP encoder rejects such a table.
    pub fn unbounded(widths: &[usize]) -> Self {
        let free = NeuronBound { lo: f64::NEG_INFINITY, hi: f64::INFINITY, method: Method::Unbounded };
        Self { layers: widths.iter().map(|&w| vec![free; w]).collect() }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn get(&self, layer: usize, index: usize) -> &NeuronBound {
        &self.layers[layer][index]
    }

    /// Intersects with `[lo, hi]`; returns whether the interval shrank. An
    /// empty intersection (numerical noise between two sound bounds) keeps
    /// the current interval.
    pub fn refine(&mut self, layer: usize, index: usize, lo: f64, hi: f64, method: Method) -> bool {
        let cur = &mut self.layers[layer][index];
        let (nlo, nhi) = (cur.lo.max(lo), cur.hi.min(hi));
        if !(nlo <= nhi) || (nlo == cur.lo && nhi == cur.hi) {
            return false;
        }
        *cur = NeuronBound { lo: nlo, hi: nhi, method };
        true
    }

    pub fn num_unstable(&self) -> usize {
        self.layers.iter().flatten().filter(|b| b.stability() == Stability::Unstable).count()
    }

    pub fn total_width(&self) -> f64 {
        self.layers.iter().flatten().map(NeuronBound::width).sum()
    }

    pub fn post_bounds(&self, layer: usize) -> (Vec<f64>, Vec<f64>) {
        self.layers[layer].iter().map(NeuronBound::post).unzip()
    }

    pub fn to_file(&self, method: &str, budget: Option<Duration>, wall_time: f64) -> BoundsFile {
        BoundsFile {
            method: method.to_string(),
            per_neuron: self
                .layers
                .iter()
                .enumerate()
                .flat_map(|(layer, row)| {
                    row.iter().enumerate().map(move |(index, b)| NeuronRecord {
                        layer,
                        index,
                        lo: b.lo,
                        hi: b.hi,
                        flag: b.stability(),
                        source: b.method,
                    })
                })
                .collect(),
            budget: budget.map(|d| d.as_secs_f64()),
            wall_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronRecord {
    pub layer: usize,
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub flag: Stability,
    pub source: Method,
}

/// On-disk form of a [`BoundsTable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsFile {
    pub method: String,
    pub per_neuron: Vec<NeuronRecord>,
    /// Per-neuron budget in seconds, when one applied.
    pub budget: Option<f64>,
    pub wall_time: f64,
}

impl BoundsFile {
    /// Rebuilds the table for a network with the given layer widths.
    pub fn to_table(&self, widths: &[usize]) -> Result<BoundsTable, BoundsError> {
        let mut table = BoundsTable::unbounded(widths);
        let mut seen = 0;
        for r in &self.per_neuron {
            let slot = table
                .layers
                .get_mut(r.layer)
                .and_then(|l| l.get_mut(r.index))
                .ok_or_else(|| BoundsError::Format(format!("neuron ({}, {}) is not in the network", r.layer, r.index)))?;
            if !(r.lo <= r.hi) {
                return Err(BoundsError::Format(format!("neuron ({}, {}) has lo > hi", r.layer, r.index)));
            }
            *slot = NeuronBound { lo: r.lo, hi: r.hi, method: r.source };
            seen += 1;
        }
        let expected: usize = widths.iter().sum();
        if seen != expected {
            return Err(BoundsError::Format(format!("{} neuron records for {} neurons", seen, expected)));
        }
        Ok(table)
    }
}

pub(crate) fn check_box(stack: &ReluStack, domain: &DemandBox) -> Result<(), BoundsError> {
    DemandBox::new(domain.lower.clone(), domain.upper.clone())?;
    if domain.dim() != stack.input_dim() {
        return Err(BoundsError::ShapeMismatch { expected: stack.input_dim(), got: domain.dim() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightenOptions {
    pub per_neuron_budget: Budget,
    /// Leave neurons that IBP already classifies as stable to IBP.
    pub skip_stable: bool,
    pub alpha: AlphaConfig,
}

impl Default for TightenOptions {
    fn default() -> Self {
        Self {
            per_neuron_budget: Budget::time(DEFAULT_NEURON_BUDGET),
            skip_stable: true,
            alpha: AlphaConfig::default(),
        }
    }
}

/// A bound-tightening strategy. Given sound intervals for all earlier layers,
/// returns candidate intervals for every neuron of `layer`.
pub trait BoundTightener: Send + Sync {
    fn name(&self) -> &'static str;

    fn tag(&self) -> Method;

    fn tighten_layer(
        &self,
        stack: &ReluStack,
        domain: &DemandBox,
        table: &BoundsTable,
        layer: usize,
        options: &TightenOptions,
    ) -> Result<Vec<(f64, f64)>, BoundsError>;
}

struct IbpTightener;
struct CrownTightener;
struct ObbtTightener;

impl BoundTightener for IbpTightener {
    fn name(&self) -> &'static str {
        "ibp"
    }

    fn tag(&self) -> Method {
        Method::Ibp
    }

    fn tighten_layer(
        &self,
        stack: &ReluStack,
        domain: &DemandBox,
        table: &BoundsTable,
        layer: usize,
        _: &TightenOptions,
    ) -> Result<Vec<(f64, f64)>, BoundsError> {
        let (lo, hi) = if layer == 0 {
            (domain.lower.clone(), domain.upper.clone())
        } else {
            table.post_bounds(layer - 1)
        };
        Ok(interval_affine(&stack.layers[layer], &lo, &hi))
    }
}

impl BoundTightener for CrownTightener {
    fn name(&self) -> &'static str {
        "crown"
    }

    fn tag(&self) -> Method {
        Method::Crown
    }

    fn tighten_layer(
        &self,
        stack: &ReluStack,
        domain: &DemandBox,
        table: &BoundsTable,
        layer: usize,
        options: &TightenOptions,
    ) -> Result<Vec<(f64, f64)>, BoundsError> {
        let neurons: Vec<usize> = (0..stack.layers[layer].outputs()).collect();
        Ok(neurons
            .par_iter()
            .map(|&i| {
                let current = table.get(layer, i);
                if options.skip_stable && current.stability() != Stability::Unstable {
                    return (current.lo, current.hi);
                }
                crown_layer(stack, domain, table, layer, i, &options.alpha)
            })
            .collect())
    }
}

impl BoundTightener for ObbtTightener {
    fn name(&self) -> &'static str {
        "obbt-milp"
    }

    fn tag(&self) -> Method {
        Method::ObbtMilp
    }

    fn tighten_layer(
        &self,
        stack: &ReluStack,
        domain: &DemandBox,
        table: &BoundsTable,
        layer: usize,
        options: &TightenOptions,
    ) -> Result<Vec<(f64, f64)>, BoundsError> {
        let jobs: Vec<(usize, Side)> = (0..stack.layers[layer].outputs())
            .flat_map(|i| [(i, Side::Lower), (i, Side::Upper)])
            .filter(|(i, _)| !(options.skip_stable && table.get(layer, *i).stability() != Stability::Unstable))
            .collect();
        let found: Vec<ObbtBound> = jobs
            .par_iter()
            .map(|&(i, side)| obbt_milp(stack, domain, layer, i, side, &options.per_neuron_budget, table))
            .collect::<Result<_, _>>()?;
        let mut out: Vec<(f64, f64)> = table.layers[layer].iter().map(|b| (b.lo, b.hi)).collect();
        for ((i, side), b) in jobs.iter().zip(found) {
            match side {
                Side::Lower => out[*i].0 = b.value,
                Side::Upper => out[*i].1 = b.value,
            }
        }
        Ok(out)
    }
}

/// Tighteners by name.
pub struct TightenerRegistry {
    entries: BTreeMap<&'static str, Box<dyn BoundTightener>>,
}

impl Default for TightenerRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register(Box::new(IbpTightener));
        r.register(Box::new(CrownTightener));
        r.register(Box::new(ObbtTightener));
        r
    }
}

impl TightenerRegistry {
    pub fn register(&mut self, tightener: Box<dyn BoundTightener>) {
        self.entries.insert(tightener.name(), tightener);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    /// Looks up a tightener; `obbt` is accepted for `obbt-milp`.
    pub fn get(&self, name: &str) -> Result<&dyn BoundTightener, BoundsError> {
        let key = if name == "obbt" { "obbt-milp" } else { name };
        self.entries
            .get(key)
            .map(|b| b.as_ref())
            .ok_or_else(|| BoundsError::UnknownMethod(name.to_string(), self.names().join(", ")))
    }
}

/// Runs `method` layer by layer: each layer's candidate intervals are
/// intersected into the table, then IBP re-propagates the remaining layers.
pub fn tighten_all(
    stack: &ReluStack,
    domain: &DemandBox,
    method: &str,
    options: &TightenOptions,
) -> Result<BoundsTable, BoundsError> {
    let registry = TightenerRegistry::default();
    tighten_with(registry.get(method)?, stack, domain, options)
}

pub fn tighten_with(
    tightener: &dyn BoundTightener,
    stack: &ReluStack,
    domain: &DemandBox,
    options: &TightenOptions,
) -> Result<BoundsTable, BoundsError> {
    let mut table = ibp(stack, domain)?;
    if tightener.tag() == Method::Ibp {
        return Ok(table);
    }
    if options.per_neuron_budget.is_zero() {
        return Err(BoundsError::BudgetZero);
    }
    for layer in 0..stack.layers.len() {
        let started = Instant::now();
        let found = tightener.tighten_layer(stack, domain, &table, layer, options)?;
        let mut shrunk = 0;
        for (i, (lo, hi)) in found.into_iter().enumerate() {
            shrunk += table.refine(layer, i, lo, hi, tightener.tag()) as usize;
        }
        tracing::debug!(layer, shrunk, secs = started.elapsed().as_secs_f64(), method = tightener.name(), "layer tightened");
        ibp_from_layer(stack, &mut table, layer + 1);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn tiny() -> (ReluStack, DemandBox) {
        let stack = ReluStack {
            layers: vec![
                Layer { w: vec![vec![1.0, -1.0], vec![1.0, 1.0]], b: vec![0.0, -1.0] },
                Layer { w: vec![vec![1.0, -2.0]], b: vec![0.5] },
            ],
            readout: Layer { w: vec![vec![1.0]], b: vec![0.0] },
        };
        (stack, DemandBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap())
    }

    #[test]
    fn refine_only_shrinks() {
        let mut t = BoundsTable::unbounded(&[1]);
        assert!(t.refine(0, 0, -1.0, 2.0, Method::Ibp));
        assert!(!t.refine(0, 0, -3.0, 5.0, Method::Crown));
        assert_eq!(t.get(0, 0).method, Method::Ibp);
        assert!(t.refine(0, 0, -0.5, 5.0, Method::Crown));
        assert_eq!((t.get(0, 0).lo, t.get(0, 0).hi), (-0.5, 2.0));
        assert!(!t.refine(0, 0, 3.0, 4.0, Method::Crown));
    }

    #[test]
    fn registry_resolves_names() {
        let r = TightenerRegistry::default();
        assert_eq!(r.names(), vec!["crown", "ibp", "obbt-milp"]);
        assert_eq!(r.get("obbt").unwrap().name(), "obbt-milp");
        assert!(matches!(r.get("lp"), Err(BoundsError::UnknownMethod(..))));
    }

    #[test]
    fn ibp_method_equals_ibp() {
        let (stack, domain) = tiny();
        let a = tighten_all(&stack, &domain, "ibp", &TightenOptions::default()).unwrap();
        assert_eq!(a, ibp(&stack, &domain).unwrap());
    }

    #[test]
    fn methods_never_widen() {
        let (stack, domain) = tiny();
        let base = ibp(&stack, &domain).unwrap();
        let opts = TightenOptions { skip_stable: false, per_neuron_budget: Budget::unlimited(), ..Default::default() };
        for m in ["crown", "obbt"] {
            let t = tighten_all(&stack, &domain, m, &opts).unwrap();
            for (a, b) in t.layers.iter().flatten().zip(base.layers.iter().flatten()) {
                assert!(a.lo >= b.lo && a.hi <= b.hi, "{m}");
            }
        }
    }

    #[test]
    fn zero_budget_rejected() {
        let (stack, domain) = tiny();
        let opts = TightenOptions { per_neuron_budget: Budget::nodes(0), ..Default::default() };
        assert!(matches!(tighten_all(&stack, &domain, "obbt", &opts), Err(BoundsError::BudgetZero)));
    }

    #[test]
    fn file_round_trip() {
        let (stack, domain) = tiny();
        let t = ibp(&stack, &domain).unwrap();
        let file = t.to_file("ibp", None, 0.0);
        let json = serde_json::to_string(&file).unwrap();
        let back: BoundsFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_table(&stack.widths()).unwrap(), t);
        assert!(back.to_table(&[2, 2]).is_err());
    }
}
