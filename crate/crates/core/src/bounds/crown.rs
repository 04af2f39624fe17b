//! Backward linear bound propagation with optimizable lower slopes.

use serde::{Deserialize, Serialize};

use super::{check_box, ibp_from_layer, BoundsError, BoundsTable, Method, Side, Stability};
use crate::domain::DemandBox;
use crate::nn::ReluStack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaConfig {
    /// Projected-gradient steps on each concretized bound.
    pub steps: usize,
    pub step_size: f64,
    /// Starting slopes per layer and neuron; the area heuristic when absent.
    #[serde(default)]
    pub initial: Option<Vec<Vec<f64>>>,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self { steps: 20, step_size: 0.1, initial: None }
    }
}

/// `coeffs · p^d + constant`, a sound `side` bound over the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBoundExpr {
    pub coeffs: Vec<f64>,
    pub constant: f64,
    pub side: Side,
}

impl LinearBoundExpr {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Worst case of the expression over the box on its side.
    pub fn concretize(&self, domain: &DemandBox) -> f64 {
        let pick_hi = self.side == Side::Upper;
        self.constant
            + self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let hi_corner = (*a >= 0.0) == pick_hi;
                    a * if hi_corner { domain.upper[i] } else { domain.lower[i] }
                })
                .sum::<f64>()
    }
}

/// Chord of `relu` over `[l, u]` with `l < 0 < u`: slope and intercept.
pub fn upper_relaxation(l: f64, u: f64) -> (f64, f64) {
    let s = u / (u - l);
    (s, -l * s)
}

#[derive(Debug, Clone, Copy)]
enum Relax {
    Active,
    Inactive,
    Unstable { s: f64, t: f64 },
}

fn relaxations(table: &BoundsTable, layer: usize) -> Result<Vec<Vec<Relax>>, BoundsError> {
    (0..layer)
        .map(|j| {
            table.layers[j]
                .iter()
                .map(|b| match b.stability() {
                    _ if !b.is_finite() => Err(BoundsError::MissingPriorBounds(j)),
                    Stability::Active => Ok(Relax::Active),
                    Stability::Inactive => Ok(Relax::Inactive),
                    Stability::Unstable => {
                        let (s, t) = upper_relaxation(b.lo, b.hi);
                        Ok(Relax::Unstable { s, t })
                    }
                })
                .collect()
        })
        .collect()
}

fn initial_alpha(table: &BoundsTable, layer: usize, config: &AlphaConfig) -> Vec<Vec<f64>> {
    (0..layer)
        .map(|j| {
            table.layers[j]
                .iter()
                .enumerate()
                .map(|(m, b)| match &config.initial {
                    Some(a) => a.get(j).and_then(|r| r.get(m)).copied().unwrap_or(0.0).clamp(0.0, 1.0),
                    None if b.hi >= -b.lo => 1.0,
                    None => 0.0,
                })
                .collect()
        })
        .collect()
}

/// Upper linear bound of `σ · Ẑ[layer][index]`, with the intermediate
/// coefficient vectors kept for the slope gradient.
struct Pass {
    /// `v[j]`: coefficients over `Z_j` before relaxing layer `j`.
    v: Vec<Vec<f64>>,
    input: Vec<f64>,
    constant: f64,
}

fn backward(stack: &ReluStack, relax: &[Vec<Relax>], layer: usize, index: usize, sigma: f64, alpha: &[Vec<f64>]) -> Pass {
    let target = &stack.layers[layer];
    let mut coef: Vec<f64> = target.w[index].iter().map(|w| sigma * w).collect();
    let mut constant = sigma * target.b[index];
    let mut v = vec![Vec::new(); layer];
    for j in (0..layer).rev() {
        let mut u = vec![0.0; coef.len()];
        for (m, c) in coef.iter().enumerate() {
            u[m] = match relax[j][m] {
                Relax::Active => *c,
                Relax::Inactive => 0.0,
                Relax::Unstable { s, t } if *c >= 0.0 => {
                    constant += c * t;
                    c * s
                }
                Relax::Unstable { .. } => c * alpha[j][m],
            };
        }
        constant += u.iter().zip(&stack.layers[j].b).map(|(a, b)| a * b).sum::<f64>();
        v[j] = std::mem::replace(&mut coef, stack.layers[j].apply_transpose(&u));
    }
    Pass { v, input: coef, constant }
}

fn concretize_upper(pass: &Pass, domain: &DemandBox) -> f64 {
    LinearBoundExpr { coeffs: pass.input.clone(), constant: pass.constant, side: Side::Upper }.concretize(domain)
}

/// Gradient of the concretized bound with respect to every slope.
fn alpha_gradient(stack: &ReluStack, relax: &[Vec<Relax>], pass: &Pass, alpha: &[Vec<f64>], domain: &DemandBox) -> Vec<Vec<f64>> {
    let layer = pass.v.len();
    let mut grad: Vec<Vec<f64>> = alpha.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut g: Vec<f64> = pass
        .input
        .iter()
        .enumerate()
        .map(|(i, a)| if *a >= 0.0 { domain.upper[i] } else { domain.lower[i] })
        .collect();
    for j in 0..layer {
        let lj = &stack.layers[j];
        let gu: Vec<f64> =
            lj.w.iter().zip(&lj.b).map(|(row, b)| b + row.iter().zip(&g).map(|(w, x)| w * x).sum::<f64>()).collect();
        g = pass.v[j]
            .iter()
            .enumerate()
            .map(|(m, c)| match relax[j][m] {
                Relax::Active => gu[m],
                Relax::Inactive => 0.0,
                Relax::Unstable { s, t } if *c >= 0.0 => gu[m] * s + t,
                Relax::Unstable { .. } => {
                    grad[j][m] = gu[m] * c;
                    gu[m] * alpha[j][m]
                }
            })
            .collect();
    }
    grad
}

/// Best upper bound on `σ · Ẑ[layer][index]` over the slope iterations.
fn optimized_upper(
    stack: &ReluStack,
    domain: &DemandBox,
    relax: &[Vec<Relax>],
    layer: usize,
    index: usize,
    sigma: f64,
    mut alpha: Vec<Vec<f64>>,
    config: &AlphaConfig,
) -> f64 {
    let mut pass = backward(stack, relax, layer, index, sigma, &alpha);
    let mut best = concretize_upper(&pass, domain);
    for _ in 0..config.steps {
        let grad = alpha_gradient(stack, relax, &pass, &alpha, domain);
        let scale = grad.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
        if scale == 0.0 {
            break;
        }
        for (a, g) in alpha.iter_mut().flatten().zip(grad.iter().flatten()) {
            *a = (*a - config.step_size * g / scale).clamp(0.0, 1.0);
        }
        pass = backward(stack, relax, layer, index, sigma, &alpha);
        best = best.min(concretize_upper(&pass, domain));
    }
    best
}

/// CROWN interval of one neuron, using `table` for every earlier layer.
pub fn crown_layer(
    stack: &ReluStack,
    domain: &DemandBox,
    table: &BoundsTable,
    layer: usize,
    index: usize,
    config: &AlphaConfig,
) -> (f64, f64) {
    let Ok(relax) = relaxations(table, layer) else {
        let b = table.get(layer, index);
        return (b.lo, b.hi);
    };
    let alpha = initial_alpha(table, layer, config);
    let hi = optimized_upper(stack, domain, &relax, layer, index, 1.0, alpha.clone(), config);
    let lo = -optimized_upper(stack, domain, &relax, layer, index, -1.0, alpha, config);
    (lo, hi)
}

/// Linear lower and upper bounds of one pre-activation in terms of the
/// demands, at the initial slopes.
pub fn linear_bounds(
    stack: &ReluStack,
    table: &BoundsTable,
    layer: usize,
    index: usize,
    config: &AlphaConfig,
) -> Result<(LinearBoundExpr, LinearBoundExpr), BoundsError> {
    let relax = relaxations(table, layer)?;
    let alpha = initial_alpha(table, layer, config);
    let up = backward(stack, &relax, layer, index, 1.0, &alpha);
    let down = backward(stack, &relax, layer, index, -1.0, &alpha);
    Ok((
        LinearBoundExpr { coeffs: down.input.iter().map(|a| -a).collect(), constant: -down.constant, side: Side::Lower },
        LinearBoundExpr { coeffs: up.input, constant: up.constant, side: Side::Upper },
    ))
}

/// Layer-by-layer CROWN over all neurons, intersected with `prior`.
pub fn crown_bounds(
    stack: &ReluStack,
    domain: &DemandBox,
    prior: &BoundsTable,
    config: &AlphaConfig,
) -> Result<BoundsTable, BoundsError> {
    check_box(stack, domain)?;
    if prior.widths() != stack.widths() {
        return Err(BoundsError::MissingPriorBounds(0));
    }
    if let Some(j) = prior.layers.iter().position(|l| l.iter().any(|b| !b.is_finite())) {
        return Err(BoundsError::MissingPriorBounds(j));
    }
    let mut table = prior.clone();
    for layer in 0..stack.layers.len() {
        for i in 0..stack.layers[layer].outputs() {
            let (lo, hi) = crown_layer(stack, domain, &table, layer, i, config);
            table.refine(layer, i, lo, hi, Method::Crown);
        }
        ibp_from_layer(stack, &mut table, layer + 1);
    }
    Ok(table)
}
