//! Soundness and ordering of the bound tighteners on random networks.

mod common;

use std::time::Duration;

use common::{instance, random_stack, unit_box};
use opf_verify::bounds::{
    crown_bounds, ibp, linear_bounds, obbt_milp, tighten_all, AlphaConfig, BoundsTable, Budget, Side, TightenOptions,
};
use opf_verify::dataset::lhs_sample;
use opf_verify::domain::DemandBox;
use opf_verify::nn::{Layer, ReluStack};
use opf_verify::verify::{pattern_enumeration_oracle, Objective};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn exact_options() -> TightenOptions {
    TightenOptions { per_neuron_budget: Budget::unlimited(), skip_stable: false, ..Default::default() }
}

fn assert_contains(table: &BoundsTable, stack: &ReluStack, points: &[Vec<f64>], what: &str) {
    for x in points {
        let (_, trace) = stack.forward(x);
        for (l, layer) in trace.pre.iter().enumerate() {
            for (i, v) in layer.iter().enumerate() {
                let b = table.get(l, i);
                let tol = 1e-9 * v.abs().max(1.0);
                assert!(b.lo - tol <= *v && *v <= b.hi + tol, "{what}: ({l},{i}) {v} outside [{}, {}]", b.lo, b.hi);
            }
        }
    }
}

#[test]
fn every_method_contains_sampled_activations() {
    for k in 0..6 {
        let inst = instance(k, 12);
        let points = lhs_sample(1000, &inst.domain, 7 + k).unwrap();
        for method in ["ibp", "crown", "obbt-milp"] {
            let table = tighten_all(&inst.stack, &inst.domain, method, &exact_options()).unwrap();
            assert_contains(&table, &inst.stack, &points, method);
        }
    }
}

#[test]
fn linear_relaxations_hold_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let stack = random_stack(&mut rng, &[3, 5, 4]);
        let domain = unit_box(3);
        let table = ibp(&stack, &domain).unwrap();
        let points = lhs_sample(1000, &domain, 3).unwrap();
        for layer in 0..stack.layers.len() {
            for index in 0..stack.layers[layer].outputs() {
                let (lower, upper) = linear_bounds(&stack, &table, layer, index, &AlphaConfig::default()).unwrap();
                for x in &points {
                    let v = stack.forward(x).1.pre[layer][index];
                    assert!(lower.evaluate(x) <= v + 1e-9 && v <= upper.evaluate(x) + 1e-9);
                }
            }
        }
    }
}

#[test]
fn dominance_chain_per_neuron() {
    for k in 0..9 {
        let inst = instance(k, 12);
        let opts = exact_options();
        let i = tighten_all(&inst.stack, &inst.domain, "ibp", &opts).unwrap();
        let c = tighten_all(&inst.stack, &inst.domain, "crown", &opts).unwrap();
        let o = tighten_all(&inst.stack, &inst.domain, "obbt-milp", &opts).unwrap();
        for (l, layer) in i.layers.iter().enumerate() {
            for n in 0..layer.len() {
                let (wi, wc, wo) = (i.get(l, n).width(), c.get(l, n).width(), o.get(l, n).width());
                assert!(wc <= wi + 1e-8, "crown wider than ibp at ({l},{n}): {wc} > {wi}");
                assert!(wo <= wc + 1e-8, "obbt wider than crown at ({l},{n}): {wo} > {wc}");
            }
        }
    }
}

#[test]
fn crown_between_ibp_and_exact_on_two_layer_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let stack = random_stack(&mut rng, &[2, 4, 3]);
        let domain = unit_box(2);
        let prior = ibp(&stack, &domain).unwrap();
        let crown = crown_bounds(&stack, &domain, &prior, &AlphaConfig::default()).unwrap();
        for index in 0..3 {
            let exact = exact_preactivation(&stack, &domain, 1, index);
            let b = crown.get(1, index);
            let p = prior.get(1, index);
            assert!(p.lo - 1e-9 <= b.lo && b.hi <= p.hi + 1e-9);
            assert!(b.lo <= exact.0 + 1e-9 && exact.1 <= b.hi + 1e-9);
        }
    }
}

/// Exact range of `Ẑ[layer][index]` via the pattern oracle on the truncated net.
fn exact_preactivation(stack: &ReluStack, domain: &DemandBox, layer: usize, index: usize) -> (f64, f64) {
    let l = &stack.layers[layer];
    let truncated = ReluStack {
        layers: stack.layers[..layer].to_vec(),
        readout: Layer { w: vec![l.w[index].clone()], b: vec![l.b[index]] },
    };
    let zero = vec![0.0; domain.dim()];
    let objectives = [1.0, -1.0].map(|s| Objective::Affine { output: vec![s], demand: zero.clone(), constant: 0.0 });
    let r = pattern_enumeration_oracle(&truncated, domain, &objectives).unwrap();
    (-r[1].value, r[0].value)
}

#[test]
fn obbt_matches_pattern_oracle() {
    for k in 0..6 {
        let inst = instance(k, 12);
        let prior = ibp(&inst.stack, &inst.domain).unwrap();
        for layer in 1..inst.stack.layers.len() {
            for index in 0..inst.stack.layers[layer].outputs() {
                let (lo, hi) = exact_preactivation(&inst.stack, &inst.domain, layer, index);
                let up = obbt_milp(&inst.stack, &inst.domain, layer, index, Side::Upper, &Budget::unlimited(), &prior).unwrap();
                let dn = obbt_milp(&inst.stack, &inst.domain, layer, index, Side::Lower, &Budget::unlimited(), &prior).unwrap();
                assert!(up.optimal && dn.optimal);
                assert!((up.value - hi).abs() < 1e-6, "upper {} vs {}", up.value, hi);
                assert!((dn.value - lo).abs() < 1e-6, "lower {} vs {}", dn.value, lo);
            }
        }
    }
}

#[test]
fn larger_node_budgets_never_loosen() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let stack = random_stack(&mut rng, &[3, 6, 6, 4]);
        let domain = unit_box(3);
        let prior = ibp(&stack, &domain).unwrap();
        let mut last = f64::INFINITY;
        for nodes in [1, 2, 4, 8, 16, 64] {
            let b = obbt_milp(&stack, &domain, 2, 0, Side::Upper, &Budget::nodes(nodes), &prior).unwrap();
            assert!(b.value <= last + 1e-12, "{nodes} nodes: {} after {}", b.value, last);
            last = b.value;
        }
    }
}

#[test]
fn zero_time_budget_rejected_by_tighten() {
    let inst = instance(0, 12);
    let opts = TightenOptions { per_neuron_budget: Budget::time(Duration::ZERO), ..Default::default() };
    assert!(tighten_all(&inst.stack, &inst.domain, "obbt", &opts).is_err());
    assert!(tighten_all(&inst.stack, &inst.domain, "ibp", &opts).is_ok());
}
