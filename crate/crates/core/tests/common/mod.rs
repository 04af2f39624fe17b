#![allow(dead_code, clippy::needless_range_loop)]

use opf_verify::bounds::ibp;
use opf_verify::dataset::{generate_dataset, Dataset};
use opf_verify::domain::DemandBox;
use opf_verify::attack::margin_gradient;
use opf_verify::grid::{bundled, load_network, FlowModel, Network};
use opf_verify::lp::{LpProblem, RowSense, Sense};
use opf_verify::nn::{backward, batch_loss, train, Layer, MlpModel, ReluStack, TrainConfig};
use opf_verify::verify::Target;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRIDS: [&str; 3] = ["case2", "case3", "case5"];

pub fn network(name: &str) -> Network {
    load_network(bundled(name).expect("bundled grid")).unwrap()
}

/// A grid, a briefly trained proxy and the sample set it saw.
pub struct Instance {
    pub grid: &'static str,
    pub network: Network,
    pub flows: FlowModel,
    pub domain: DemandBox,
    pub dataset: Dataset,
    pub model: MlpModel,
    pub stack: ReluStack,
    pub unstable: usize,
}

/// Fewest unstable ReLUs an instance may have, so that search has to branch.
pub const MIN_UNSTABLE: usize = 3;

/// Instance `k`: grids rotate, architectures are at most 2 × 6, and draws
/// whose IBP leaves fewer than `MIN_UNSTABLE` or more than `max_unstable`
/// ReLUs unstable are redrawn.
pub fn instance(k: u64, max_unstable: usize) -> Instance {
    let grid = GRIDS[(k % 3) as usize];
    let network = network(grid);
    let flows = FlowModel::from_network(&network).unwrap();
    let domain = network.demand_box(0.6, 1.0).unwrap();
    let dataset = generate_dataset(&network, 40, 1000 + k).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(k);
    loop {
        let depth = rng.gen_range(1..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(2..=6)).collect();
        let init = MlpModel::for_network(&network, &hidden, rng.gen()).unwrap();
        let config = TrainConfig { max_epochs: rng.gen_range(5..60), learning_rate: 0.01, seed: rng.gen(), ..Default::default() };
        let (model, _) = train(&init, &dataset, &config).unwrap();
        let stack = model.relu_stack();
        let unstable = ibp(&stack, &domain).unwrap().num_unstable();
        if (MIN_UNSTABLE..=max_unstable).contains(&unstable) {
            return Instance { grid, network, flows, domain, dataset, model, stack, unstable };
        }
    }
}

/// A random ReLU stack with `dims[0]` inputs and scalar readout.
pub fn random_stack(rng: &mut ChaCha8Rng, dims: &[usize]) -> ReluStack {
    let mut layer = |i: usize, o: usize| Layer {
        w: (0..o).map(|_| (0..i).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        b: (0..o).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    };
    let layers = dims.windows(2).map(|d| layer(d[0], d[1])).collect();
    let readout = layer(*dims.last().unwrap(), 1);
    ReluStack { layers, readout }
}

pub fn unit_box(n: usize) -> DemandBox {
    DemandBox::new(vec![-1.0; n], vec![1.0; n]).unwrap()
}

/// Solves a square system by Gaussian elimination; None if singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Best objective over all vertices of a bounded polytope, or None if no
/// vertex is feasible.
pub fn vertex_enumeration(lp: &LpProblem) -> Option<f64> {
    let n = lp.num_vars();
    // Hyperplanes: rows first, then finite bounds.
    let mut planes: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for (i, row) in lp.rows.iter().enumerate() {
        planes.push((row.clone(), lp.rhs[i], lp.row_senses[i] == RowSense::Eq));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lp.var_lower[j], false));
        planes.push((e, lp.var_upper[j], false));
    }
    let mut best: Option<f64> = None;
    for combo in combinations(planes.len(), n) {
        let eq_missing = planes.iter().enumerate().any(|(i, p)| p.2 && !combo.contains(&i));
        if eq_missing {
            continue;
        }
        let a = combo.iter().map(|&i| planes[i].0.clone()).collect();
        let b = combo.iter().map(|&i| planes[i].1).collect();
        let Some(x) = solve_square(a, b) else { continue };
        if lp.max_violation(&x) > 1e-7 {
            continue;
        }
        let v = lp.objective_value(&x);
        best = Some(match (best, lp.sense) {
            (None, _) => v,
            (Some(b), Sense::Maximize) => b.max(v),
            (Some(b), Sense::Minimize) => b.min(v),
        });
    }
    best
}

pub fn random_lp(rng: &mut ChaCha8Rng) -> LpProblem {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(0..=6);
    let sense = if rng.gen_bool(0.5) { Sense::Maximize } else { Sense::Minimize };
    let mut lp = LpProblem::new(sense);
    for _ in 0..n {
        let lo = rng.gen_range(-3.0..1.0);
        let hi = lo + rng.gen_range(0.5..4.0);
        lp.add_var(lo, hi, rng.gen_range(-5.0..5.0));
    }
    for _ in 0..m {
        let mut terms = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.8) {
                terms.push((j, rng.gen_range(-3.0..3.0)));
            }
        }
        let sense = match rng.gen_range(0..10) {
            0 => RowSense::Eq,
            1..=5 => RowSense::Le,
            _ => RowSense::Ge,
        };
        lp.add_row(&terms, sense, rng.gen_range(-2.0..4.0));
    }
    lp
}

/// Signs of every pre-activation and residual: the loss is affine in the
/// parameters while this pattern is unchanged.
pub fn pattern(model: &MlpModel, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<i8> {
    let mut out = Vec::new();
    for (x, y) in xs.iter().zip(ys) {
        let (p, trace) = model.forward(x).unwrap();
        out.extend(trace.pre.iter().flatten().map(|v| v.signum() as i8));
        out.extend(p.iter().zip(y).map(|(a, b)| (a - b).signum() as i8));
    }
    out
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (MlpModel, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let input = rng.gen_range(1..=4);
    let depth = rng.gen_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=6)).collect();
    let output = rng.gen_range(1..=3);
    let lo: Vec<f64> = (0..output).map(|_| rng.gen_range(-3.0..-1.0)).collect();
    let hi: Vec<f64> = (0..output).map(|_| rng.gen_range(1.0..3.0)).collect();
    let mut model = MlpModel::new(input, &hidden, lo, hi, rng.gen()).unwrap();
    for layer in &mut model.layers {
        for b in layer.b.iter_mut() {
            *b += rng.gen_range(-0.5..0.5);
        }
    }
    let n = rng.gen_range(1..=8);
    let xs = (0..n).map(|_| (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ys = (0..n).map(|_| (0..output).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    (model, xs, ys)
}

/// Central-difference comparison tally; cases where the step crosses a kink
/// are skipped.
#[derive(Debug, Default)]
pub struct FdCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel: f64,
}

impl FdCheck {
    fn record(&mut self, analytic: f64, fd: f64) {
        let scale = analytic.abs().max(fd.abs());
        let err = (analytic - fd).abs();
        // Gradients that are zero up to round-off have no meaningful relative error.
        let rel = if err < 1e-9 { 0.0 } else { err / scale };
        self.worst_rel = self.worst_rel.max(rel);
        self.checked += 1;
    }
}

/// Loss gradient of every parameter against central differences.
pub fn param_fd_check(model: &MlpModel, xs: &[Vec<f64>], ys: &[Vec<f64>], check: &mut FdCheck) {
    let h = 1e-5;
    let grads = backward(model, xs, ys).unwrap();
    let base = pattern(model, xs, ys);
    for l in 0..model.layers.len() {
        for k in 0..grads[l].values().count() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                *m.layers[l].values_mut().nth(k).unwrap() += delta;
                (batch_loss(&m, xs, ys).unwrap(), pattern(&m, xs, ys))
            };
            let ((up, pu), (down, pd)) = (eval(h), eval(-h));
            if pu != base || pd != base {
                check.skipped += 1;
                continue;
            }
            check.record(*grads[l].values().nth(k).unwrap(), (up - down) / (2.0 * h));
        }
    }
}

/// Input gradient of a target's margin against central differences.
pub fn input_fd_check(model: &MlpModel, target: &Target, x: &[f64], check: &mut FdCheck) {
    let h = 1e-6;
    let signs = |p: &[f64]| {
        let (phat, t) = model.forward(p).unwrap();
        let mut s: Vec<i8> = t.pre.iter().flatten().map(|v| v.signum() as i8).collect();
        s.push(target.signed(p, &phat).signum() as i8);
        (target.margin(p, &phat), s)
    };
    let (_, base) = signs(x);
    let (_, grad) = margin_gradient(model, target, x).unwrap();
    for j in 0..x.len() {
        let shifted = |d: f64| {
            let mut p = x.to_vec();
            p[j] += d;
            signs(&p)
        };
        let ((up, su), (down, sd)) = (shifted(h), shifted(-h));
        if su != base || sd != base {
            check.skipped += 1;
            continue;
        }
        check.record(grad[j], (up - down) / (2.0 * h));
    }
}
