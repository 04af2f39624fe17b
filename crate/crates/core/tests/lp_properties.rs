//! Randomized checks of the simplex kernel against brute-force vertex
//! enumeration, plus duality and complementary-slackness properties.

mod common;

use common::{random_lp, vertex_enumeration};
use opf_verify::lp::{solve_lp, LpStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_vertex_enumeration_on_random_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240521);
    let mut optimal = 0;
    for case in 0..200 {
        let lp = random_lp(&mut rng);
        let sol = solve_lp(&lp, None).unwrap();
        let oracle = vertex_enumeration(&lp);
        match oracle {
            Some(v) => {
                assert_eq!(sol.status, LpStatus::Optimal, "case {case}: oracle found {v}");
                assert!((sol.objective - v).abs() <= 1e-6, "case {case}: {} vs {}", sol.objective, v);
                optimal += 1;
            }
            None => {
                assert_eq!(sol.status, LpStatus::Infeasible, "case {case}");
                assert!(sol.primal.is_empty());
            }
        }
    }
    assert!(optimal > 100, "too few feasible cases: {optimal}");
}

#[test]
fn optimal_solutions_satisfy_duality_and_complementarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let lp = random_lp(&mut rng);
        let sol = solve_lp(&lp, None).unwrap();
        if !sol.is_optimal() {
            continue;
        }
        assert!(lp.max_violation(&sol.primal) <= 1e-8);
        let obj = lp.objective_value(&sol.primal);
        assert!((obj - sol.objective).abs() <= 1e-9);
        let scale = 1.0 + sol.objective.abs();
        assert!((sol.dual_objective(&lp) - sol.objective).abs() <= 1e-7 * scale);
        for (i, row) in lp.rows.iter().enumerate() {
            let lhs: f64 = row.iter().zip(&sol.primal).map(|(a, x)| a * x).sum();
            let slack = lp.rhs[i] - lhs;
            assert!((sol.duals[i] * slack).abs() <= 1e-7, "row {i}: y={} slack={}", sol.duals[i], slack);
        }
    }
}

#[test]
fn warm_start_agrees_with_cold_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let mut lp = random_lp(&mut rng);
        let first = solve_lp(&lp, None).unwrap();
        let j = rng.gen_range(0..lp.num_vars());
        let mid = 0.5 * (lp.var_lower[j] + lp.var_upper[j]);
        if rng.gen_bool(0.5) {
            lp.var_upper[j] = mid;
        } else {
            lp.var_lower[j] = mid;
        }
        let warm = solve_lp(&lp, first.basis.as_ref()).unwrap();
        let cold = solve_lp(&lp, None).unwrap();
        assert_eq!(warm.status, cold.status);
        if cold.is_optimal() {
            assert!((warm.objective - cold.objective).abs() <= 1e-7);
        }
    }
}
