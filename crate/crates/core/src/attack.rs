//! Projected gradient ascent on the proxy's constraint violation, started
//! from the worst dataset points. Results serve as warm-start incumbents.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::domain::DemandBox;
use crate::grid::FlowModel;
use crate::nn::{MlpModel, NnError};
use crate::verify::{Target, VerifyError};

pub const DEFAULT_STARTS: usize = 50;
pub const DEFAULT_ITERATIONS: usize = 200;
/// Step per dimension as a fraction of that dimension's box width.
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("dataset has no samples to seed the attack")]
    EmptyDataset,
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("box has {got} dimensions, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackObjective {
    #[serde(rename = "pb")]
    PowerBalance,
    #[serde(rename = "flow")]
    LineFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub objective: AttackObjective,
    /// Step size relative to the box width, per dimension.
    pub lambda: f64,
    pub iterations: usize,
    pub starts: usize,
    /// Copied into the report; the search itself is deterministic.
    pub seed: u64,
    /// Lines to attack individually; `None` means every line.
    #[serde(default)]
    pub lines: Option<Vec<usize>>,
}

impl AttackConfig {
    pub fn new(objective: AttackObjective) -> Self {
        Self {
            objective,
            lambda: DEFAULT_LAMBDA,
            iterations: DEFAULT_ITERATIONS,
            starts: DEFAULT_STARTS,
            seed: 0,
            lines: None,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(AttackError::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.starts == 0 {
            return Err(AttackError::InvalidConfig("starts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    /// Position in the dataset.
    pub index: usize,
    pub pd: Vec<f64>,
    pub value: f64,
}

/// Best point found for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAttack {
    pub target: String,
    pub best_value: f64,
    pub best_pd: Vec<f64>,
    pub dataset_best: f64,
    /// Violation per iteration for each start, initial point first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub objective: AttackObjective,
    pub seeds: Vec<Vec<f64>>,
    pub best_value: f64,
    pub best_pd: Vec<f64>,
    pub iters: usize,
    pub lambda: f64,
    pub seed: u64,
    pub dataset_best: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories: Vec<Vec<f64>>,
    /// Per-line results for line-flow attacks, indexed by line.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_line: Vec<TargetAttack>,
}

impl AttackResult {
    /// Warm start for a target: the per-line point for lines, else the best.
    pub fn warm_for(&self, target: &Target) -> Vec<f64> {
        match target {
            Target::Line { index, .. } => self
                .per_line
                .iter()
                .find(|t| t.target == target.name())
                .or_else(|| self.per_line.get(*index))
                .map_or_else(|| self.best_pd.clone(), |t| t.best_pd.clone()),
            Target::PowerBalance => self.best_pd.clone(),
        }
    }
}

/// The `k` samples with the largest violation, ties by dataset order.
pub fn select_seeds(dataset: &Dataset, model: &MlpModel, target: &Target, k: usize) -> Result<Vec<Seed>, AttackError> {
    select_worst(dataset, model, std::slice::from_ref(target), k)
}

/// Unclamped margin `|s| − offset` at `pd` and its input subgradient. The
/// margin keeps a gradient for lines that are not yet violated.
pub fn margin_gradient(model: &MlpModel, target: &Target, pd: &[f64]) -> Result<(f64, Vec<f64>), AttackError> {
    let (phat, trace) = model.forward(pd)?;
    let s = target.signed(pd, &phat);
    let sign = if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    };
    let (d_out, d_pd): (Vec<f64>, Vec<f64>) = match target {
        Target::PowerBalance => (vec![-sign; phat.len()], vec![sign; pd.len()]),
        Target::Line { gen, load, .. } => {
            (gen.iter().map(|a| sign * a).collect(), load.iter().map(|a| -sign * a).collect())
        }
    };
    let mut grad = model.vjp(pd, &trace, &d_out, None);
    for (g, d) in grad.iter_mut().zip(&d_pd) {
        *g += d;
    }
    Ok((s.abs() - target.offset(), grad))
}

/// One ascent step of size `step[j]` per dimension, projected onto the box.
pub fn pga_step(
    model: &MlpModel,
    pd: &[f64],
    target: &Target,
    step: &[f64],
    domain: &DemandBox,
) -> Result<Vec<f64>, AttackError> {
    let (_, grad) = margin_gradient(model, target, pd)?;
    let mut next: Vec<f64> = pd.iter().zip(&grad).zip(step).map(|((p, g), s)| p + s * g).collect();
    domain.project(&mut next);
    Ok(next)
}

/// The target with the largest margin at `pd`, lowest index on ties.
fn worst_target<'t>(model: &MlpModel, targets: &'t [Target], pd: &[f64]) -> Result<&'t Target, AttackError> {
    let phat = model.predict(pd)?;
    let mut best = &targets[0];
    let mut best_m = f64::NEG_INFINITY;
    for t in targets {
        let m = t.margin(pd, &phat);
        if m > best_m {
            best = t;
            best_m = m;
        }
    }
    Ok(best)
}

fn max_violation(model: &MlpModel, targets: &[Target], pd: &[f64]) -> Result<f64, AttackError> {
    let phat = model.predict(pd)?;
    Ok(targets.iter().map(|t| t.violation(pd, &phat)).fold(f64::NEG_INFINITY, f64::max))
}

/// One trajectory: best-so-far point and value, plus the value sequence.
/// `targets` holds one target, or several when following the worst one.
fn trajectory(
    model: &MlpModel,
    targets: &[Target],
    start: &[f64],
    step: &[f64],
    domain: &DemandBox,
    iterations: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>), AttackError> {
    let mut pd = start.to_vec();
    domain.project(&mut pd);
    let mut value = max_violation(model, targets, &pd)?;
    let mut best = (value, pd.clone());
    let mut values = Vec::with_capacity(iterations + 1);
    values.push(value);
    for _ in 0..iterations {
        let target = worst_target(model, targets, &pd)?;
        pd = pga_step(model, &pd, target, step, domain)?;
        value = max_violation(model, targets, &pd)?;
        values.push(value);
        if value > best.0 {
            best = (value, pd.clone());
        }
    }
    Ok((best.0, best.1, values))
}

fn attack_targets(
    model: &MlpModel,
    name: String,
    targets: &[Target],
    seeds: &[Seed],
    step: &[f64],
    domain: &DemandBox,
    iterations: usize,
) -> Result<TargetAttack, AttackError> {
    let runs = seeds
        .par_iter()
        .map(|s| trajectory(model, targets, &s.pd, step, domain, iterations))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset_best = seeds.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (value, pd, _) in &runs {
        if best.as_ref().is_none_or(|b| *value > b.0) {
            best = Some((*value, pd.clone()));
        }
    }
    let (best_value, best_pd) = best.expect("at least one start");
    Ok(TargetAttack {
        target: name,
        best_value,
        best_pd,
        dataset_best,
        trajectories: runs.into_iter().map(|r| r.2).collect(),
    })
}

/// Multi-start projected gradient ascent from the worst dataset points.
/// For line flows every selected line gets its own run, and one more run
/// follows whichever line is currently worst.
pub fn run_attack(
    model: &MlpModel,
    flows: &FlowModel,
    domain: &DemandBox,
    dataset: &Dataset,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    config.validate()?;
    if domain.dim() != model.arch.input {
        return Err(AttackError::ShapeMismatch { expected: model.arch.input, got: domain.dim() });
    }
    let step: Vec<f64> = (0..domain.dim()).map(|j| config.lambda * domain.width(j)).collect();
    let (targets, per_line) = match config.objective {
        AttackObjective::PowerBalance => (vec![Target::PowerBalance], Vec::new()),
        AttackObjective::LineFlow => {
            let lines: Vec<usize> = config.lines.clone().unwrap_or_else(|| (0..flows.num_lines()).collect());
            let targets = lines.iter().map(|&e| Target::line(flows, e)).collect::<Result<Vec<_>, _>>()?;
            let per_line = targets
                .iter()
                .map(|t| {
                    let seeds = select_seeds(dataset, model, t, config.starts)?;
                    let mut r = attack_targets(model, t.name(), std::slice::from_ref(t), &seeds, &step, domain, config.iterations)?;
                    r.trajectories.clear();
                    Ok(r)
                })
                .collect::<Result<Vec<_>, AttackError>>()?;
            (targets, per_line)
        }
    };
    if targets.is_empty() {
        return Err(AttackError::InvalidConfig("no lines selected".into()));
    }
    let seeds = select_worst(dataset, model, &targets, config.starts)?;
    let name = match config.objective {
        AttackObjective::PowerBalance => "pb".to_string(),
        AttackObjective::LineFlow => "flow".to_string(),
    };
    let joint = attack_targets(model, name, &targets, &seeds, &step, domain, config.iterations)?;
    let (mut best_value, mut best_pd) = (joint.best_value, joint.best_pd);
    for line in &per_line {
        if line.best_value > best_value {
            best_value = line.best_value;
            best_pd = line.best_pd.clone();
        }
    }
    Ok(AttackResult {
        objective: config.objective,
        seeds: seeds.into_iter().map(|s| s.pd).collect(),
        best_value,
        best_pd,
        iters: config.iterations,
        lambda: config.lambda,
        seed: config.seed,
        dataset_best: joint.dataset_best,
        trajectories: joint.trajectories,
        per_line,
    })
}

/// Seeds ranked by the worst violation over `targets`.
fn select_worst(dataset: &Dataset, model: &MlpModel, targets: &[Target], k: usize) -> Result<Vec<Seed>, AttackError> {
    if dataset.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    let mut scored = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(index, s)| Ok(Seed { index, pd: s.pd.clone(), value: max_violation(model, targets, &s.pd)? }))
        .collect::<Result<Vec<_>, AttackError>>()?;
    scored.sort_by(|a, b| b.value.total_cmp(&a.value));
    scored.truncate(k);
    Ok(scored)
}
