//! Big-M MILP encoding of a ReLU stack over the demand box.

use crate::bounds::{BoundsTable, Stability};
use crate::domain::DemandBox;
use crate::lp::{LpProblem, RowSense, Sense};
use crate::nn::ReluStack;

use super::{Objective, VerifyError};

/// What each constraint row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowTag {
    /// `Ẑ = W Z_prev + b`.
    Affine { layer: usize, index: usize },
    /// `Z ≤ Ẑ − l (1 − y)`.
    Relu1 { layer: usize, index: usize },
    /// `Z ≥ Ẑ`.
    Relu2 { layer: usize, index: usize },
    /// `Z ≤ u y`.
    Relu3 { layer: usize, index: usize },
}

/// How a post-activation appears in the LP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostVar {
    /// Stable inactive: the constant 0.
    Zero,
    /// Stable active: the pre-activation variable itself.
    Pre(usize),
    /// Unstable: its own variable, tied to a binary.
    Own(usize),
}

impl PostVar {
    fn var(self) -> Option<usize> {
        match self {
            PostVar::Zero => None,
            PostVar::Pre(v) | PostVar::Own(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binary {
    pub layer: usize,
    pub index: usize,
    pub var: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VarMap {
    pub demand: Vec<usize>,
    /// Pre-activation variable per encoded neuron.
    pub pre: Vec<Vec<usize>>,
    pub post: Vec<Vec<PostVar>>,
    /// One per unstable neuron, ordered by layer then index.
    pub binaries: Vec<Binary>,
}

/// An LP relaxation plus the binaries that make it exact. The objective is
/// maximized and offset by `constant`.
#[derive(Debug, Clone)]
pub struct MilpProblem<'a> {
    pub lp: LpProblem,
    pub map: VarMap,
    pub rows: Vec<RowTag>,
    pub constant: f64,
    pub objective: Objective,
    pub stack: &'a ReluStack,
    pub domain: DemandBox,
}

impl MilpProblem<'_> {
    pub fn num_binaries(&self) -> usize {
        self.map.binaries.len()
    }

    /// Demand part of an LP point, clamped into the box.
    pub fn demand_of(&self, primal: &[f64]) -> Vec<f64> {
        let mut pd: Vec<f64> = self.map.demand.iter().map(|&v| primal[v]).collect();
        self.domain.project(&mut pd);
        pd
    }

    /// Objective value of the true network at `pd`.
    pub fn evaluate(&self, pd: &[f64]) -> f64 {
        self.objective.evaluate(self.stack, pd)
    }
}

pub fn encode_milp<'a>(
    stack: &'a ReluStack,
    bounds: &BoundsTable,
    objective: &Objective,
    domain: &DemandBox,
) -> Result<MilpProblem<'a>, VerifyError> {
    if domain.dim() != stack.input_dim() {
        return Err(VerifyError::ShapeMismatch(format!(
            "box has {} dimensions, network expects {}",
            domain.dim(),
            stack.input_dim()
        )));
    }
    if bounds.widths() != stack.widths() {
        return Err(VerifyError::ShapeMismatch(format!(
            "bounds table has widths {:?}, network {:?}",
            bounds.widths(),
            stack.widths()
        )));
    }
    let (full_layers, target) = match objective {
        Objective::Affine { output, demand, .. } => {
            if output.len() != stack.readout.outputs() || demand.len() != domain.dim() {
                return Err(VerifyError::ShapeMismatch("objective coefficients".into()));
            }
            (stack.layers.len(), None)
        }
        Objective::PreActivation { layer, index, sign } => {
            if *layer >= stack.layers.len() || *index >= stack.layers[*layer].outputs() {
                return Err(VerifyError::ShapeMismatch(format!("no neuron ({}, {})", layer, index)));
            }
            (*layer, Some((*layer, *index, *sign)))
        }
    };

    let mut lp = LpProblem::new(Sense::Maximize);
    let mut map = VarMap::default();
    let mut rows = Vec::new();
    map.demand = (0..domain.dim()).map(|j| lp.add_var(domain.lower[j], domain.upper[j], 0.0)).collect();

    let prev_terms = |map: &VarMap, layer: usize, w: &[f64], zhat: usize| -> Vec<(usize, f64)> {
        let mut terms = vec![(zhat, 1.0)];
        if layer == 0 {
            terms.extend(map.demand.iter().zip(w).map(|(&v, &a)| (v, -a)));
        } else {
            terms.extend(map.post[layer - 1].iter().zip(w).filter_map(|(p, &a)| p.var().map(|v| (v, -a))));
        }
        terms
    };

    for layer in 0..full_layers {
        let lw = &stack.layers[layer];
        let mut pre = Vec::with_capacity(lw.outputs());
        let mut post = Vec::with_capacity(lw.outputs());
        for index in 0..lw.outputs() {
            let nb = bounds.get(layer, index);
            let (l, u) = (nb.lo, nb.hi);
            let stability = nb.stability();
            if stability == Stability::Unstable && !nb.is_finite() {
                return Err(VerifyError::UnboundedNeuron { layer, index });
            }
            let zhat = lp.add_var(l, u, 0.0);
            rows.push(RowTag::Affine { layer, index });
            lp.add_row(&prev_terms(&map, layer, &lw.w[index], zhat), RowSense::Eq, lw.b[index]);
            pre.push(zhat);
            post.push(match stability {
                Stability::Active => PostVar::Pre(zhat),
                Stability::Inactive => PostVar::Zero,
                Stability::Unstable => {
                    let z = lp.add_var(0.0, u, 0.0);
                    let y = lp.add_var(0.0, 1.0, 0.0);
                    lp.add_row(&[(z, 1.0), (zhat, -1.0), (y, -l)], RowSense::Le, -l);
                    rows.push(RowTag::Relu1 { layer, index });
                    lp.add_row(&[(z, 1.0), (zhat, -1.0)], RowSense::Ge, 0.0);
                    rows.push(RowTag::Relu2 { layer, index });
                    lp.add_row(&[(z, 1.0), (y, -u)], RowSense::Le, 0.0);
                    rows.push(RowTag::Relu3 { layer, index });
                    map.binaries.push(Binary { layer, index, var: y });
                    PostVar::Own(z)
                }
            });
        }
        map.pre.push(pre);
        map.post.push(post);
    }

    let mut constant = 0.0;
    match (objective, target) {
        (Objective::Affine { output, demand, constant: c }, _) => {
            for (&v, d) in map.demand.iter().zip(demand) {
                lp.objective[v] += d;
            }
            let last = map.post.last().expect("at least one layer");
            for (o, (row, r)) in stack.readout.w.iter().zip(&stack.readout.b).enumerate() {
                constant += output[o] * r;
                for (m, w) in row.iter().enumerate() {
                    if let Some(v) = last[m].var() {
                        lp.objective[v] += output[o] * w;
                    }
                }
            }
            constant += c;
        }
        (_, Some((layer, index, sign))) => {
            let nb = bounds.get(layer, index);
            let zhat = lp.add_var(nb.lo, nb.hi, sign);
            rows.push(RowTag::Affine { layer, index });
            lp.add_row(&prev_terms(&map, layer, &stack.layers[layer].w[index], zhat), RowSense::Eq, stack.layers[layer].b[index]);
            map.pre.push(vec![zhat]);
        }
        _ => unreachable!("pre-activation objectives always carry a target"),
    }

    Ok(MilpProblem { lp, map, rows, constant, objective: objective.clone(), stack, domain: domain.clone() })
}
