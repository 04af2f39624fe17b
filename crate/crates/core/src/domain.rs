//! The demand box `[lower, upper]` that every stage works over.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("empty box: dimension {dim} has lower {lower} > upper {upper}")]
    EmptyBox { dim: usize, lower: f64, upper: f64 },
    #[error("box dimension mismatch: lower has {lower}, upper has {upper}")]
    DimensionMismatch { lower: usize, upper: usize },
}

/// Axis-aligned box of per-load demands (p.u.).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DemandBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, BoxError> {
        if lower.len() != upper.len() {
            return Err(BoxError::DimensionMismatch { lower: lower.len(), upper: upper.len() });
        }
        if let Some((dim, (&l, &u))) =
            lower.iter().zip(&upper).enumerate().find(|(_, (l, u))| !(l <= u))
        {
            return Err(BoxError::EmptyBox { dim, lower: l, upper: u });
        }
        Ok(Self { lower, upper })
    }

    /// `[lo_frac, hi_frac] × nominal`, per load.
    pub fn scaled(nominal: &[f64], lo_frac: f64, hi_frac: f64) -> Result<Self, BoxError> {
        Self::new(
            nominal.iter().map(|p| lo_frac * p).collect(),
            nominal.iter().map(|p| hi_frac * p).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, v)| self.lower[i] <= *v && *v <= self.upper[i])
    }

    /// Elementwise clamp into the box.
    pub fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.max(self.lower[i]).min(self.upper[i]);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Sum of the upper corner, i.e. the maximum total load.
    pub fn max_total(&self) -> f64 {
        self.upper.iter().sum()
    }
}
