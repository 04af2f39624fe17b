//! The MILP verifier against pattern enumeration, witness replay and the
//! anytime contract.

mod common;

use common::{instance, random_stack, unit_box};
use opf_verify::bounds::{ibp, tighten_all, TightenOptions};
use opf_verify::dataset::lhs_sample;
use opf_verify::lp::solve_lp;
use opf_verify::verify::{
    branch_and_bound, encode_milp, oracle_target, verify_all_lines, verify_target, BnbLimits, Objective, Status, Target,
    VerifyOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn fixed_pattern_lp_replays_the_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let stack = random_stack(&mut rng, &[3, 5, 5]);
        let domain = unit_box(3);
        let table = ibp(&stack, &domain).unwrap();
        let obj = Objective::Affine { output: vec![1.0], demand: vec![0.5, -0.25, 0.0], constant: 0.1 };
        let p = encode_milp(&stack, &table, &obj, &domain).unwrap();
        for x in lhs_sample(50, &domain, 1).unwrap() {
            let (_, trace) = stack.forward(&x);
            let mut lp = p.lp.clone();
            for (&v, &xi) in p.map.demand.iter().zip(&x) {
                lp.var_lower[v] = xi;
                lp.var_upper[v] = xi;
            }
            for b in &p.map.binaries {
                let on = if trace.pre[b.layer][b.index] > 0.0 { 1.0 } else { 0.0 };
                lp.var_lower[b.var] = on;
                lp.var_upper[b.var] = on;
            }
            let sol = solve_lp(&lp, None).unwrap();
            assert!(sol.is_optimal());
            assert!((sol.objective + p.constant - obj.evaluate(&stack, &x)).abs() < 1e-9);
        }
    }
}

fn targets(inst: &common::Instance) -> Vec<Target> {
    let mut t = vec![Target::PowerBalance];
    t.extend((0..inst.flows.num_lines()).map(|e| Target::line(&inst.flows, e).unwrap()));
    t
}

#[test]
fn optima_equal_pattern_enumeration() {
    for k in 0..12 {
        let inst = instance(k, 12);
        let table = tighten_all(&inst.stack, &inst.domain, "crown", &TightenOptions::default()).unwrap();
        for target in targets(&inst) {
            let r = verify_target(&inst.stack, &table, &inst.domain, &target, None, &VerifyOptions::default()).unwrap();
            let oracle = oracle_target(&inst.stack, &inst.domain, &target).unwrap();
            assert_eq!(r.status, Status::ProvedOptimal);
            assert!((r.primal - oracle.value).abs() < 1e-6, "{} {}: {} vs {}", inst.grid, target.name(), r.primal, oracle.value);
            assert!((target.violation_of(&inst.stack, &r.witness_pd) - r.primal).abs() < 1e-6);
            assert!(inst.domain.contains(&r.witness_pd));
        }
    }
}

#[test]
fn node_budgets_keep_primal_below_dual() {
    for k in 0..6 {
        let inst = instance(k, 12);
        let table = ibp(&inst.stack, &inst.domain).unwrap();
        for target in targets(&inst) {
            for nodes in [1, 2, 3, 5, 8] {
                let options = VerifyOptions {
                    limits: BnbLimits { max_nodes: Some(nodes), ..Default::default() },
                    ..Default::default()
                };
                let r = verify_target(&inst.stack, &table, &inst.domain, &target, None, &options).unwrap();
                assert!(r.primal <= r.dual + 1e-9);
                assert!((target.violation_of(&inst.stack, &r.witness_pd) - r.primal).abs() < 1e-6);
                for side in r.sides.iter().filter_map(|s| s.outcome.as_ref()) {
                    assert!(side.log.windows(2).all(|w| w[1].dual <= w[0].dual));
                    assert!(side.log.iter().all(|l| l.primal <= l.dual + 1e-9));
                }
            }
        }
    }
}

#[test]
fn warm_start_never_costs_nodes() {
    for k in 0..9 {
        let inst = instance(k, 12);
        let table = ibp(&inst.stack, &inst.domain).unwrap();
        let objective = &Target::PowerBalance.signed_objectives(inst.stack.readout.outputs(), inst.domain.dim())[0];
        let p = encode_milp(&inst.stack, &table, objective, &inst.domain).unwrap();
        let cold = branch_and_bound(&p, None, &BnbLimits::default()).unwrap();
        let warm = branch_and_bound(&p, Some(&cold.witness), &BnbLimits::default()).unwrap();
        assert!(warm.nodes <= cold.nodes);
        assert_eq!(warm.warm_value, Some(cold.primal));
        assert!((warm.primal - cold.primal).abs() < 1e-9);
    }
}

#[test]
fn all_lines_reports_the_worst() {
    let inst = instance(2, 12);
    let table = ibp(&inst.stack, &inst.domain).unwrap();
    let r = verify_all_lines(&inst.stack, &inst.flows, &table, &inst.domain, &|_| None, &VerifyOptions::default()).unwrap();
    assert_eq!(r.per_line.len(), inst.flows.num_lines());
    let worst = r.per_line.iter().map(|l| l.primal).fold(0.0, f64::max);
    assert_eq!(r.primal, worst);
    assert!(r.per_line.iter().all(|l| l.primal >= 0.0));
}
