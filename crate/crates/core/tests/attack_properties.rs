//! Input gradients of the attack objective and the dataset / PGA / optimum
//! ordering.

mod common;

use common::{input_fd_check, instance, FdCheck};
use opf_verify::attack::{run_attack, AttackConfig, AttackObjective};
use opf_verify::dataset::lhs_sample;
use opf_verify::verify::{oracle_target, Target};

#[test]
fn input_gradient_matches_central_differences() {
    let mut check = FdCheck::default();
    for k in 0..9 {
        let inst = instance(k, 12);
        let mut targets = vec![Target::PowerBalance];
        targets.extend((0..inst.flows.num_lines()).map(|e| Target::line(&inst.flows, e).unwrap()));
        for x in lhs_sample(20, &inst.domain, k).unwrap() {
            for t in &targets {
                input_fd_check(&inst.model, t, &x, &mut check);
            }
        }
    }
    assert!(check.worst_rel < 1e-4, "relative error {}", check.worst_rel);
    assert!(check.checked > 10 * check.skipped, "{check:?}");
}

#[test]
fn dataset_le_pga_le_optimum() {
    for k in 0..9 {
        let inst = instance(k, 12);
        for (objective, target) in [
            (AttackObjective::PowerBalance, Target::PowerBalance),
            (AttackObjective::LineFlow, Target::line(&inst.flows, 0).unwrap()),
        ] {
            let mut config = AttackConfig::new(objective);
            config.lines = Some(vec![0]);
            let r = run_attack(&inst.model, &inst.flows, &inst.domain, &inst.dataset, &config).unwrap();
            let oracle = oracle_target(&inst.stack, &inst.domain, &target).unwrap();
            assert!(r.dataset_best <= r.best_value);
            assert!(r.best_value <= oracle.value + 1e-9, "{} > {}", r.best_value, oracle.value);
            assert!(inst.domain.contains(&r.best_pd));
            assert!((target.violation_of(&inst.stack, &r.best_pd) - r.best_value).abs() < 1e-9);
        }
    }
}
