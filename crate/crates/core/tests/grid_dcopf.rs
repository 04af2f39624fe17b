#![allow(clippy::needless_range_loop)]

use opf_verify::dcopf::{solve_dcopf, DcopfSolver};
use opf_verify::grid::{compute_ptdf, load_network, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Five buses, a mesh with one radial spur, three generators.
const TEST_GRID: &str = r#"{
  "base_mva": 100, "slack_bus": 2, "buses": [1, 2, 3, 4, 5],
  "generators": [{"bus": 1, "cost": 12, "pmin": 0, "pmax": 80},
                 {"bus": 3, "cost": 20, "pmin": 10, "pmax": 90},
                 {"bus": 5, "cost": 35, "pmin": 0, "pmax": 100}],
  "branches": [{"from": 1, "to": 2, "susceptance": 8, "limit": 60},
               {"from": 2, "to": 3, "susceptance": 12, "limit": 70},
               {"from": 3, "to": 1, "susceptance": 5, "limit": 50},
               {"from": 3, "to": 4, "susceptance": 10, "limit": 90},
               {"from": 4, "to": 5, "susceptance": 9, "limit": 70}],
  "loads": [{"bus": 2, "nominal": 70}, {"bus": 4, "nominal": 60}, {"bus": 5, "nominal": 30}]
}"#;

fn test_grid() -> Network {
    load_network(TEST_GRID).unwrap()
}

/// Bus angles with the slack pinned at zero, by dense elimination on the
/// full nodal system (independent of the reduced-matrix PTDF route).
fn solve_angles(net: &Network, injections: &[f64]) -> Vec<f64> {
    let n = net.num_buses();
    let mut a = vec![vec![0.0; n]; n];
    for br in &net.branches {
        a[br.from][br.from] += br.susceptance;
        a[br.to][br.to] += br.susceptance;
        a[br.from][br.to] -= br.susceptance;
        a[br.to][br.from] -= br.susceptance;
    }
    let mut b = injections.to_vec();
    for k in 0..n {
        a[net.slack][k] = 0.0;
    }
    a[net.slack][net.slack] = 1.0;
    b[net.slack] = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in 0..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

#[test]
fn flows_conserve_injections() {
    let net = test_grid();
    let ptdf = compute_ptdf(&net).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let mut p: Vec<f64> = (0..net.num_buses()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let total: f64 = p.iter().sum();
        p[net.slack] -= total;
        let flows = ptdf.flows(&p);
        let mut net_out = vec![0.0; net.num_buses()];
        for (br, f) in net.branches.iter().zip(&flows) {
            net_out[br.from] += f;
            net_out[br.to] -= f;
        }
        for bus in 0..net.num_buses() {
            assert!((net_out[bus] - p[bus]).abs() < 1e-8, "bus {bus}: {} vs {}", net_out[bus], p[bus]);
        }
    }
}

#[test]
fn ptdf_rows_match_direct_solve() {
    let net = test_grid();
    let ptdf = compute_ptdf(&net).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let e = rng.gen_range(0..net.num_branches());
        let n = rng.gen_range(0..net.num_buses());
        let mut inj = vec![0.0; net.num_buses()];
        inj[n] += 1.0;
        inj[net.slack] -= 1.0;
        let theta = solve_angles(&net, &inj);
        let br = &net.branches[e];
        let flow = br.susceptance * (theta[br.from] - theta[br.to]);
        assert!((ptdf.matrix[e][n] - flow).abs() < 1e-9, "e={e} n={n}");
    }
    for row in &ptdf.matrix {
        assert_eq!(row[net.slack], 0.0);
    }
}

#[test]
fn radial_network_ptdf_entries_are_unit() {
    let doc = r#"{"slack_bus": 1, "buses": [1, 2, 3, 4],
        "generators": [{"bus": 1, "cost": 1, "pmin": 0, "pmax": 1}],
        "branches": [{"from": 1, "to": 2, "susceptance": 3, "limit": 1},
                     {"from": 2, "to": 3, "susceptance": 7, "limit": 1},
                     {"from": 2, "to": 4, "susceptance": 2, "limit": 1}],
        "loads": [{"bus": 3, "nominal": 1}]}"#;
    let ptdf = compute_ptdf(&load_network(doc).unwrap()).unwrap();
    for v in ptdf.matrix.iter().flatten() {
        assert!([-1.0, 0.0, 1.0].iter().any(|u| (v - u).abs() < 1e-12), "{v}");
    }
}

#[test]
fn dcopf_beats_grid_search() {
    let net = test_grid();
    let solver = DcopfSolver::new(&net).unwrap();
    let flows = solver.flow_model();
    let nominal = net.nominal_demand();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    let mut compared = 0usize;
    while checked < 100 {
        let pd: Vec<f64> = nominal.iter().map(|p| p * rng.gen_range(0.6..1.0)).collect();
        let Ok(d) = solver.solve(&pd) else { continue };
        solver.check(&pd, &d.pg, 1e-8).unwrap();
        let total: f64 = pd.iter().sum();
        let gens = &net.generators;
        for i in 0..=16 {
            for j in 0..=18 {
                let p0 = 0.05 * i as f64;
                let p1 = 0.05 * j as f64;
                let p2 = total - p0 - p1;
                let pg = [p0, p1, p2];
                let within = gens.iter().zip(&pg).all(|(g, p)| *p >= g.pmin - 1e-12 && *p <= g.pmax + 1e-12);
                if !within {
                    continue;
                }
                let ok = flows.flows(&pg, &pd).iter().zip(&flows.limits).all(|(f, l)| f.abs() <= *l + 1e-12);
                if !ok {
                    continue;
                }
                let cost: f64 = gens.iter().zip(&pg).map(|(g, p)| g.cost * p).sum();
                assert!(d.cost <= cost + 1e-9, "LP {} > grid point {}", d.cost, cost);
                compared += 1;
            }
        }
        checked += 1;
    }
    assert!(compared > 1000, "only {compared} feasible grid points");
}

#[test]
fn balance_dual_nonnegative_and_cost_monotone() {
    let net = test_grid();
    let solver = DcopfSolver::new(&net).unwrap();
    let base: Vec<f64> = net.nominal_demand().iter().map(|p| 0.7 * p).collect();
    let lo = solver.solve(&base).unwrap();
    let bumped: Vec<f64> = base.iter().map(|p| p * 1.1).collect();
    let hi = solver.solve(&bumped).unwrap();
    assert!(lo.balance_dual >= 0.0 && hi.balance_dual >= 0.0);
    assert!(hi.cost >= lo.cost);
}

#[test]
fn over_capacity_infeasible() {
    let net = test_grid();
    let cap: f64 = net.pmax().iter().sum();
    let share = 1.1 * cap / 3.0;
    assert!(solve_dcopf(&net, &[share, share, share]).is_err());
}
