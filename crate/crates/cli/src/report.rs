//! Result tables assembled from stored artifacts. Cells are copied or
//! normalized from files on disk; nothing is re-solved here.

use std::fs;
use std::path::Path;

use anyhow::Result;
use opf_verify::attack::AttackResult;
use opf_verify::grid::FlowModel;
use opf_verify::verify::{Status, VerifyResult};
use serde::Serialize;

use crate::config::Workdir;
use crate::stages::{load_domain, load_grid, read_json, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub case: String,
    /// `None` where the artifact is missing or the value does not apply.
    pub values: Vec<Option<f64>>,
    /// Cells taken from a run that stopped on its budget; such a dual is a
    /// valid upper bound but not the optimum.
    pub exhausted: Vec<bool>,
}

type Cells = Vec<(Option<f64>, bool)>;

fn exhausted(r: &VerifyResult) -> bool {
    r.status != Status::ProvedOptimal
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub note: String,
}

/// Bounds methods in column order, with their table headings.
const METHODS: [(&str, &str); 3] = [("ibp", "IBP"), ("obbt-milp", "MILP"), ("crown", "CROWN")];

/// Everything a case contributes to the tables.
struct Case {
    name: String,
    buses: usize,
    loads: usize,
    gens: usize,
    lines: usize,
    /// Maximum total load in MW.
    pmax_mw: f64,
    /// Maximum total load in p.u.
    max_total: f64,
    capacities: Vec<f64>,
    train: Option<TrainReport>,
    attack_pb: Option<AttackResult>,
    attack_flow: Option<AttackResult>,
    /// Verification results per bounds method, in `METHODS` order.
    verify_pb: Vec<Option<VerifyResult>>,
    verify_lines: Vec<Option<VerifyResult>>,
}

fn optional<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn line_index(name: &str) -> Option<usize> {
    name.strip_prefix("line-")?.parse().ok()
}

impl Case {
    fn load(dir: &Workdir) -> Result<Self> {
        let network = load_grid(dir)?;
        let domain = load_domain(dir, &network)?;
        let flows = FlowModel::from_network(&network)?;
        let name = fs::canonicalize(&dir.0)
            .ok()
            .and_then(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_else(|| dir.0.display().to_string());
        let verify = |target: &str| -> Result<Vec<Option<VerifyResult>>> {
            METHODS.iter().map(|(m, _)| optional(&dir.verify(target, m))).collect()
        };
        Ok(Case {
            name,
            buses: network.num_buses(),
            loads: network.num_loads(),
            gens: network.num_generators(),
            lines: network.num_branches(),
            pmax_mw: domain.max_total() * network.base_mva,
            max_total: domain.max_total(),
            capacities: flows.limits.clone(),
            train: optional(&dir.train_report())?,
            attack_pb: optional(&dir.attack("pb"))?,
            attack_flow: optional(&dir.attack("flow"))?,
            verify_pb: verify("pb")?,
            verify_lines: verify("all-lines")?,
        })
    }

    fn pb_pct(&self, v: f64) -> f64 {
        100.0 * v / self.max_total
    }

    /// Largest per-line value relative to that line's capacity.
    fn line_pct<'a>(&self, values: impl Iterator<Item = (usize, f64)> + 'a) -> Option<f64> {
        values
            .filter(|(e, _)| *e < self.capacities.len())
            .map(|(e, v)| 100.0 * v / self.capacities[e])
            .reduce(f64::max)
    }

    fn lines_of(&self, r: &VerifyResult, pick: fn(&VerifyResult) -> f64) -> Option<f64> {
        self.line_pct(r.per_line.iter().filter_map(|l| Some((line_index(&l.target)?, pick(l)))))
    }

    fn best_primal(results: &[Option<VerifyResult>], value: impl Fn(&VerifyResult) -> Option<f64>) -> Option<f64> {
        results.iter().flatten().filter_map(value).reduce(f64::max)
    }

    /// Tightest dual over methods, flagged when its run did not converge.
    fn best_dual(results: &[Option<VerifyResult>], value: impl Fn(&VerifyResult) -> Option<f64>) -> (Option<f64>, bool) {
        results
            .iter()
            .flatten()
            .filter_map(|r| Some((value(r)?, exhausted(r))))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map_or((None, false), |(v, e)| (Some(v), e))
    }

    fn pb_row(&self) -> Cells {
        vec![
            (self.attack_pb.as_ref().map(|a| self.pb_pct(a.dataset_best)), false),
            (self.attack_pb.as_ref().map(|a| self.pb_pct(a.best_value)), false),
            (Self::best_primal(&self.verify_pb, |r| Some(self.pb_pct(r.primal))), false),
            Self::best_dual(&self.verify_pb, |r| Some(self.pb_pct(r.dual))),
        ]
    }

    fn flow_row(&self) -> Cells {
        let attack = |pick: fn(&opf_verify::attack::TargetAttack) -> f64| {
            self.attack_flow
                .as_ref()
                .and_then(|a| self.line_pct(a.per_line.iter().filter_map(|t| Some((line_index(&t.target)?, pick(t))))))
        };
        vec![
            (attack(|t| t.dataset_best), false),
            (attack(|t| t.best_value), false),
            (Self::best_primal(&self.verify_lines, |r| self.lines_of(r, |l| l.primal)), false),
            Self::best_dual(&self.verify_lines, |r| self.lines_of(r, |l| l.dual)),
        ]
    }
}

pub fn build_tables(dirs: &[Workdir]) -> Result<Vec<Table>> {
    let cases = dirs.iter().map(Case::load).collect::<Result<Vec<_>>>()?;
    let rows = |f: &dyn Fn(&Case) -> Cells| -> Vec<Row> {
        cases
            .iter()
            .map(|c| {
                let (values, exhausted) = f(c).into_iter().unzip();
                Row { case: c.name.clone(), values, exhausted }
            })
            .collect()
    };
    let plain = |v: Vec<Option<f64>>| -> Cells { v.into_iter().map(|x| (x, false)).collect() };
    let cols = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let method_cols = || {
        let mut c: Vec<String> = METHODS.iter().map(|(_, h)| h.to_string()).collect();
        c.push("Primal".into());
        c
    };
    let dual_row = |results: &[Option<VerifyResult>], pct: &dyn Fn(&VerifyResult, bool) -> Option<f64>| {
        let mut v: Cells = results
            .iter()
            .map(|r| r.as_ref().map_or((None, false), |r| (pct(r, false), exhausted(r))))
            .collect();
        v.push((results.iter().flatten().filter_map(|r| pct(r, true)).reduce(f64::max), false));
        v
    };
    let time_row = |results: &[Option<VerifyResult>]| -> Vec<Option<f64>> {
        results.iter().map(|r| r.as_ref().filter(|r| !exhausted(r)).map(|r| r.wall_time)).collect()
    };
    Ok(vec![
        Table {
            title: "Table I: test case characteristics".into(),
            columns: cols(&["Nb", "Nd", "Ng", "Nl", "Pmax"]),
            rows: rows(&|c| {
                plain([c.buses, c.loads, c.gens, c.lines].iter().map(|&n| Some(n as f64)).chain([Some(c.pmax_mw)]).collect())
            }),
            note: "Pmax: maximum total active load, in MW.".into(),
        },
        Table {
            title: "Table II: average neural network performance".into(),
            columns: cols(&["Nk", "L0 test", "vPB avg", "vl avg"]),
            rows: rows(&|c| plain(match &c.train {
                Some(t) => vec![
                    t.hidden.first().map(|&n| n as f64),
                    Some(t.test_l0_pct),
                    Some(t.v_pb_avg_pct),
                    Some(t.v_l_avg_pct),
                ],
                None => vec![None; 4],
            })),
            note: "L0 and vPB in % of the max loading; vl in % of line capacity.".into(),
        },
        Table {
            title: "Table III: worst-case power balance violation".into(),
            columns: cols(&["Dataset", "PGA", "Primal", "Dual"]),
            rows: rows(&|c| c.pb_row()),
            note: "All values are in % w.r.t. the max loading. * run stopped on its budget.".into(),
        },
        Table {
            title: "Table IV: worst-case line flow violation".into(),
            columns: cols(&["Dataset", "PGA", "Primal", "Dual"]),
            rows: rows(&|c| c.flow_row()),
            note: "All values are in % w.r.t. the line capacity. * run stopped on its budget.".into(),
        },
        Table {
            title: "Table V: power balance dual bound by bound-tightening technique".into(),
            columns: method_cols(),
            rows: rows(&|c| {
                dual_row(&c.verify_pb, &|r, primal| Some(c.pb_pct(if primal { r.primal } else { r.dual })))
            }),
            note: "All values are in % w.r.t. the max loading. * run stopped on its budget.".into(),
        },
        Table {
            title: "Table VI: line flow dual bound by bound-tightening technique".into(),
            columns: method_cols(),
            rows: rows(&|c| {
                dual_row(&c.verify_lines, &|r, primal| {
                    if primal {
                        c.lines_of(r, |l| l.primal)
                    } else {
                        c.lines_of(r, |l| l.dual)
                    }
                })
            }),
            note: "All values are in % w.r.t. the line capacity. * run stopped on its budget.".into(),
        },
        Table {
            title: "Table VII: verification time of converged runs".into(),
            columns: METHODS
                .iter()
                .flat_map(|(_, h)| [format!("{h} vPB"), format!("{h} vl")])
                .collect(),
            rows: rows(&|c| {
                let (pb, lines) = (time_row(&c.verify_pb), time_row(&c.verify_lines));
                plain(pb.into_iter().zip(lines).flat_map(|(a, b)| [a, b]).collect())
            }),
            note: "Seconds; - where the run did not prove optimality or is missing.".into(),
        },
    ])
}

fn cell(v: Option<f64>, exhausted: bool) -> String {
    let text = match v {
        None => return "-".into(),
        Some(x) if x.fract() == 0.0 && x.abs() < 1e9 => format!("{}", x as i64),
        Some(x) => format!("{x:.2}"),
    };
    if exhausted {
        text + "*"
    } else {
        text
    }
}

pub fn render_table(table: &Table) -> String {
    let mut header = vec!["Case".to_string()];
    header.extend(table.columns.iter().cloned());
    let body: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| std::iter::once(r.case.clone()).chain(r.values.iter().zip(&r.exhausted).map(|(v, e)| cell(*v, *e))).collect())
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
    let mut out = format!("{}\n{}\n{}\n{}\n", table.title, rule, line(&header), rule);
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out.push_str(&rule);
    out.push('\n');
    out.push_str(&table.note);
    out.push('\n');
    out
}

pub fn render_all(tables: &[Table]) -> String {
    tables.iter().map(render_table).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_cells_render_as_dash() {
        let t = Table {
            title: "T".into(),
            columns: vec!["A".into(), "Bee".into()],
            rows: vec![Row { case: "case5".into(), values: vec![Some(1.234), None], exhausted: vec![false; 2] }],
            note: "n".into(),
        };
        let text = render_table(&t);
        assert!(text.contains("case5  1.23    -"), "{text}");
        assert!(text.ends_with("n\n"));
    }

    #[test]
    fn integers_print_without_decimals() {
        assert_eq!(cell(Some(5.0), false), "5");
        assert_eq!(cell(Some(14.386), false), "14.39");
        assert_eq!(cell(Some(123.541), true), "123.54*");
    }

    #[test]
    fn line_names_parse() {
        assert_eq!(line_index("line-12"), Some(12));
        assert_eq!(line_index("pb"), None);
    }
}
