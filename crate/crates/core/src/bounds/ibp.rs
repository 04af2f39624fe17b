//! Interval bound propagation.

use super::{check_box, BoundsError, BoundsTable, Method, NeuronBound};
use crate::domain::DemandBox;
use crate::nn::{Layer, ReluStack};

/// Image of the box `[lo, hi]` under `w x + b`, per output.
pub fn interval_affine(layer: &Layer, lo: &[f64], hi: &[f64]) -> Vec<(f64, f64)> {
    layer
        .w
        .iter()
        .zip(&layer.b)
        .map(|(row, b)| {
            let (mut l, mut u) = (*b, *b);
            for ((w, xl), xu) in row.iter().zip(lo).zip(hi) {
                if *w >= 0.0 {
                    l += w * xl;
                    u += w * xu;
                } else {
                    l += w * xu;
                    u += w * xl;
                }
            }
            (l, u)
        })
        .collect()
}

pub fn ibp(stack: &ReluStack, domain: &DemandBox) -> Result<BoundsTable, BoundsError> {
    check_box(stack, domain)?;
    let mut table = BoundsTable::unbounded(&stack.widths());
    let first = interval_affine(&stack.layers[0], &domain.lower, &domain.upper);
    for (i, (lo, hi)) in first.into_iter().enumerate() {
        table.layers[0][i] = NeuronBound { lo, hi, method: Method::Ibp };
    }
    ibp_from_layer(stack, &mut table, 1);
    Ok(table)
}

/// Re-propagates intervals into layers `start..`, intersecting with what the
/// table already holds.
pub fn ibp_from_layer(stack: &ReluStack, table: &mut BoundsTable, start: usize) {
    for layer in start.max(1)..stack.layers.len() {
        let (lo, hi) = table.post_bounds(layer - 1);
        let found = interval_affine(&stack.layers[layer], &lo, &hi);
        for (i, (l, u)) in found.into_iter().enumerate() {
            if table.layers[layer][i].method == Method::Unbounded {
                table.layers[layer][i] = NeuronBound { lo: l, hi: u, method: Method::Ibp };
            } else {
                table.refine(layer, i, l, u, Method::Ibp);
            }
        }
    }
}
