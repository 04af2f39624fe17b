//! Fixed-layout text dump of an [`LpProblem`] for golden-file tests.
//!
//! Layout: a header line, the objective row, one line per constraint row
//! (coefficients, sense, rhs), then one line per variable bound. Every number
//! is printed as `{:>13.6e}`; infinite bounds print as `inf` / `-inf`.

use std::fmt::Write;

use super::{LpProblem, Sense};

fn num(out: &mut String, v: f64) {
    if v == f64::INFINITY {
        let _ = write!(out, " {:>13}", "inf");
    } else if v == f64::NEG_INFINITY {
        let _ = write!(out, " {:>13}", "-inf");
    } else {
        let _ = write!(out, " {:>13.6e}", v);
    }
}

impl LpProblem {
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        let _ = writeln!(out, "LP {} vars={} rows={}", sense, self.num_vars(), self.num_rows());
        out.push_str("obj  ");
        for &c in &self.objective {
            num(&mut out, c);
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "r{:<4}", i);
            for &a in row {
                num(&mut out, a);
            }
            let _ = write!(out, " {:>2}", self.row_senses[i].symbol());
            num(&mut out, self.rhs[i]);
            out.push('\n');
        }
        for j in 0..self.num_vars() {
            let _ = write!(out, "x{:<4}", j);
            num(&mut out, self.var_lower[j]);
            num(&mut out, self.var_upper[j]);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use crate::lp::{LpProblem, RowSense, Sense};

    #[test]
    fn dump_matches_golden() {
        let mut lp = LpProblem::new(Sense::Maximize);
        let x = lp.add_var(0.0, f64::INFINITY, 3.0);
        let y = lp.add_var(f64::NEG_INFINITY, 2.5, 2.0);
        lp.add_row(&[(x, 1.0), (y, 1.0)], RowSense::Le, 4.0);
        lp.add_row(&[(x, 1.0), (y, -3.0)], RowSense::Eq, -6.0);
        let golden = include_str!("../../tests/data/lp_dump.golden");
        assert_eq!(lp.dump(), golden);
    }
}
