//! Latin hypercube demand sampling, DC-OPF labeling, and the line-delimited
//! dataset file.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcopf::{DcopfError, DcopfSolver};
use crate::domain::{BoxError, DemandBox};
use crate::grid::Network;

/// Fractions of nominal load spanned by the sampling box.
pub const LOAD_RANGE: (f64, f64) = (0.6, 1.0);
pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    EmptyBox(#[from] BoxError),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("all {0} sampled demands were infeasible")]
    AllInfeasible(usize),
    #[error(transparent)]
    Dcopf(#[from] DcopfError),
    #[error("dataset file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub pd: Vec<f64>,
    pub pg: Vec<f64>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    #[serde(rename = "box")]
    pub domain: DemandBox,
    pub seed: u64,
    pub network_hash: String,
    pub requested: usize,
    /// LHS indices whose DC-OPF was infeasible.
    pub dropped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

/// One point per equal-width stratum in every dimension, with the strata
/// paired by independent random permutations.
pub fn lhs_sample(n: usize, domain: &DemandBox, seed: u64) -> Result<Vec<Vec<f64>>, DatasetError> {
    if n == 0 {
        return Err(DatasetError::NoSamples);
    }
    DemandBox::new(domain.lower.clone(), domain.upper.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; domain.dim()]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..domain.dim() {
        perm.shuffle(&mut rng);
        let (lo, width) = (domain.lower[d], domain.width(d));
        for (i, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.gen();
            let x = lo + width * (stratum as f64 + u) / n as f64;
            points[i][d] = x.min(domain.upper[d]);
        }
    }
    Ok(points)
}

/// Split sizes: `round(0.7 n)` train, `round(0.1 n)` val, the rest test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.7 * n as f64).round() as usize;
    let val = ((0.1 * n as f64).round() as usize).min(n - train);
    (train, val, n - train - val)
}

pub fn generate_dataset(network: &Network, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    let domain = network.demand_box(LOAD_RANGE.0, LOAD_RANGE.1)?;
    generate_dataset_in(network, &domain, n, seed)
}

pub fn generate_dataset_in(
    network: &Network,
    domain: &DemandBox,
    n: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    let points = lhs_sample(n, domain, seed)?;
    let solver = DcopfSolver::new(network)?;
    let labels: Vec<Result<Vec<f64>, DcopfError>> =
        points.par_iter().map(|pd| solver.solve(pd).map(|d| d.pg)).collect();
    let mut kept = Vec::with_capacity(n);
    let mut dropped = Vec::new();
    for (i, (pd, label)) in points.into_iter().zip(labels).enumerate() {
        match label {
            Ok(pg) => kept.push((pd, pg)),
            Err(DcopfError::Infeasible(rows)) => {
                tracing::warn!(sample = i, rows = ?rows, "dropping infeasible demand sample");
                dropped.push(i);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if kept.is_empty() {
        return Err(DatasetError::AllInfeasible(n));
    }
    let mut order: Vec<usize> = (0..kept.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let (train, val, _) = split_sizes(kept.len());
    let mut split = vec![Split::Test; kept.len()];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let samples = kept.into_iter().zip(split).map(|((pd, pg), split)| Sample { pd, pg, split }).collect();
    Ok(Dataset {
        header: DatasetHeader {
            domain: domain.clone(),
            seed,
            network_hash: network.content_hash(),
            requested: n,
            dropped,
        },
        samples,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == which)
    }

    pub fn count(&self, which: Split) -> usize {
        self.split(which).count()
    }

    /// `(inputs, labels)` of one split.
    pub fn arrays(&self, which: Split) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.split(which).map(|s| (s.pd.clone(), s.pg.clone())).unzip()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), DatasetError> {
        serde_json::to_writer(&mut out, &self.header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut out, s).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, DatasetError> {
        let mut header = None;
        let mut samples = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| DatasetError::Format { line: i + 1, message: e.to_string() };
            if header.is_none() {
                header = Some(serde_json::from_str::<DatasetHeader>(&line).map_err(bad)?);
            } else {
                samples.push(serde_json::from_str::<Sample>(&line).map_err(bad)?);
            }
        }
        let header = header.ok_or(DatasetError::Format { line: 1, message: "missing header record".into() })?;
        Ok(Self { header, samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_network;

    fn two_bus() -> Network {
        load_network(
            r#"{"base_mva": 1, "slack_bus": 1, "buses": [1, 2],
                "generators": [{"bus": 1, "cost": 1, "pmin": 0, "pmax": 1},
                               {"bus": 2, "cost": 2, "pmin": 0, "pmax": 1}],
                "branches": [{"from": 1, "to": 2, "susceptance": 1, "limit": 0.5}],
                "loads": [{"bus": 2, "nominal": 1}]}"#,
        )
        .unwrap()
    }

    fn strata_histogram(points: &[Vec<f64>], domain: &DemandBox, d: usize) -> Vec<usize> {
        let n = points.len();
        let mut hist = vec![0; n];
        for p in points {
            let t = (p[d] - domain.lower[d]) / domain.width(d);
            hist[((t * n as f64).floor() as usize).min(n - 1)] += 1;
        }
        hist
    }

    #[test]
    fn four_strata_on_unit_interval() {
        let domain = DemandBox::new(vec![0.0], vec![1.0]).unwrap();
        let pts = lhs_sample(4, &domain, 1).unwrap();
        assert_eq!(strata_histogram(&pts, &domain, 0), vec![1, 1, 1, 1]);
    }

    #[test]
    fn single_point_inside_box() {
        let domain = DemandBox::new(vec![2.0, -1.0], vec![3.0, 1.0]).unwrap();
        let pts = lhs_sample(1, &domain, 9).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(domain.contains(&pts[0]));
    }

    #[test]
    fn hundred_points_fill_every_stratum() {
        let domain = DemandBox::new(vec![0.6, 1.2, 0.0], vec![1.0, 2.0, 5.0]).unwrap();
        let pts = lhs_sample(100, &domain, 42).unwrap();
        for d in 0..3 {
            assert!(strata_histogram(&pts, &domain, d).iter().all(|&c| c == 1), "dim {d}");
        }
    }

    #[test]
    fn inverted_box_and_zero_count_rejected() {
        let bad = DemandBox { lower: vec![1.0], upper: vec![0.0] };
        assert!(matches!(lhs_sample(3, &bad, 0), Err(DatasetError::EmptyBox(_))));
        let ok = DemandBox::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(lhs_sample(0, &ok, 0), Err(DatasetError::NoSamples)));
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(10), (7, 1, 2));
        assert_eq!(split_sizes(1000), (700, 100, 200));
        assert_eq!(split_sizes(1), (1, 0, 0));
    }

    #[test]
    fn two_bus_dataset_splits_seven_one_two() {
        let net = two_bus();
        let ds = generate_dataset(&net, 10, 3).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!((ds.count(Split::Train), ds.count(Split::Val), ds.count(Split::Test)), (7, 1, 2));
        let solver = DcopfSolver::new(&net).unwrap();
        for s in &ds.samples {
            assert!(ds.header.domain.contains(&s.pd));
            solver.check(&s.pd, &s.pg, 1e-8).unwrap();
        }
    }

    #[test]
    fn fixed_seed_is_byte_identical_and_round_trips() {
        let net = two_bus();
        let a = generate_dataset(&net, 25, 11).unwrap().to_jsonl();
        let b = generate_dataset(&net, 25, 11).unwrap().to_jsonl();
        assert_eq!(a, b);
        let back = Dataset::read_jsonl(a.as_bytes()).unwrap();
        assert_eq!(back.to_jsonl(), a);
        assert_ne!(a, generate_dataset(&net, 25, 12).unwrap().to_jsonl());
    }

    #[test]
    fn infeasible_samples_are_dropped() {
        let net = two_bus();
        // Demands above 1.5 exceed the import limit plus local capacity.
        let domain = DemandBox::new(vec![1.0], vec![2.0]).unwrap();
        let ds = generate_dataset_in(&net, &domain, 20, 5).unwrap();
        assert_eq!(ds.header.dropped.len(), 10);
        assert_eq!(ds.len(), 10);
        let hopeless = DemandBox::new(vec![1.6], vec![2.0]).unwrap();
        assert!(matches!(generate_dataset_in(&net, &hopeless, 5, 5), Err(DatasetError::AllInfeasible(5))));
    }
}
