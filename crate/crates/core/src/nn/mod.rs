//! Feedforward ReLU proxy mapping demands to dispatch, with the output clip
//! expressed as two extra ReLU layers.

mod train;

pub use train::{
    adam_step, backward, batch_loss, loss_l0, train, train_arrays, AdamState, TrainConfig, TrainHistory,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Network;

pub const DEFAULT_HIDDEN: [usize; 3] = [50, 50, 50];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Format(String),
}

/// Affine map `x ↦ w x + b`, `w` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: vec![vec![0.0; inputs]; outputs], b: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.b.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w.iter().zip(&self.b).map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()).collect()
    }

    /// `wᵀ g`.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs()];
        for (row, gi) in self.w.iter().zip(g) {
            if *gi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += w * gi;
                }
            }
        }
        out
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().flatten().chain(&self.b)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().flatten().chain(self.b.iter_mut())
    }

    /// Row-sum infinity norm.
    pub fn norm_inf(&self) -> f64 {
        self.w.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub train_seed: u64,
}

/// `layers` holds the `K` hidden layers followed by the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub arch: Arch,
    pub clip: Clip,
    pub layers: Vec<Layer>,
    pub seed: u64,
    #[serde(default)]
    pub train_meta: Option<TrainMeta>,
}

/// Pre- and post-activations of every ReLU layer: the `K` hidden layers,
/// then the two clip layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

/// The model as a uniform chain `Z_k = relu(W_k Z_{k-1} + b_k)` followed by a
/// final affine read-out without activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluStack {
    pub layers: Vec<Layer>,
    pub readout: Layer,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

impl ReluStack {
    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::outputs).collect()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, ForwardTrace) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut z = x.to_vec();
        for layer in &self.layers {
            let zh = layer.apply(&z);
            z = relu(&zh);
            pre.push(zh);
            post.push(z.clone());
        }
        (self.readout.apply(&z), ForwardTrace { pre, post })
    }
}

fn xavier(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Layer {
    let a = (6.0 / (inputs + outputs) as f64).sqrt();
    Layer {
        w: (0..outputs).map(|_| (0..inputs).map(|_| rng.gen_range(-a..=a)).collect()).collect(),
        b: vec![0.0; outputs],
    }
}

impl MlpModel {
    /// Xavier-uniform weights; zero hidden biases and output biases at the
    /// clip midpoint, so no output starts inside a flat clip region.
    pub fn new(input: usize, hidden: &[usize], clip_lo: Vec<f64>, clip_hi: Vec<f64>, seed: u64) -> Result<Self, NnError> {
        let output = clip_lo.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut layers: Vec<Layer> = dims.windows(2).map(|d| xavier(&mut rng, d[0], d[1])).collect();
        if let Some(last) = layers.last_mut() {
            if last.b.len() == clip_lo.len() && clip_hi.len() == clip_lo.len() {
                last.b = clip_lo.iter().zip(&clip_hi).map(|(l, h)| 0.5 * (l + h)).collect();
            }
        }
        let model = Self {
            arch: Arch { input, hidden: hidden.to_vec(), output },
            clip: Clip { lo: clip_lo, hi: clip_hi },
            layers,
            seed,
            train_meta: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Inputs are the network's loads, outputs its generators, clipped to
    /// generator limits.
    pub fn for_network(network: &Network, hidden: &[usize], seed: u64) -> Result<Self, NnError> {
        Self::new(network.num_loads(), hidden, network.pmin(), network.pmax(), seed)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::ShapeMismatch(m));
        let Arch { input, hidden, output } = &self.arch;
        if self.layers.len() != hidden.len() + 1 {
            return bad(format!("{} layers for {} hidden widths", self.layers.len(), hidden.len()));
        }
        let mut dims = vec![*input];
        dims.extend(hidden);
        dims.push(*output);
        for (k, (layer, d)) in self.layers.iter().zip(dims.windows(2)).enumerate() {
            if layer.b.len() != d[1] || layer.w.len() != d[1] || layer.w.iter().any(|r| r.len() != d[0]) {
                return bad(format!("layer {} is not {}x{}", k, d[1], d[0]));
            }
        }
        if self.clip.lo.len() != *output || self.clip.hi.len() != *output {
            return bad(format!("clip limits do not have {} entries", output));
        }
        for (i, (lo, hi)) in self.clip.lo.iter().zip(&self.clip.hi).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(NnError::Format(format!("clip limits of output {} are [{}, {}]", i, lo, hi)));
            }
        }
        Ok(())
    }

    pub fn num_hidden(&self) -> usize {
        self.arch.hidden.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.outputs() * (l.inputs() + 1)).sum()
    }

    pub fn relu_stack(&self) -> ReluStack {
        let k = self.num_hidden();
        let n = self.arch.output;
        let mut layers = self.layers[..k].to_vec();
        let out = &self.layers[k];
        layers.push(Layer {
            w: out.w.clone(),
            b: out.b.iter().zip(&self.clip.lo).map(|(b, lo)| b - lo).collect(),
        });
        let neg_eye: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { -1.0 } else { 0.0 }).collect()).collect();
        layers.push(Layer { w: neg_eye.clone(), b: self.clip.hi.iter().zip(&self.clip.lo).map(|(h, l)| h - l).collect() });
        ReluStack { layers, readout: Layer { w: neg_eye, b: self.clip.hi.clone() } }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.arch.input {
            return Err(NnError::ShapeMismatch(format!("input has {} entries, model expects {}", x.len(), self.arch.input)));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace), NnError> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(x)?.0)
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> (Vec<f64>, ForwardTrace) {
        let k = self.num_hidden();
        let mut pre = Vec::with_capacity(k + 2);
        let mut post = Vec::with_capacity(k + 2);
        let mut z = x.to_vec();
        for layer in &self.layers[..k] {
            let zh = layer.apply(&z);
            z = relu(&zh);
            pre.push(zh);
            post.push(z.clone());
        }
        let (lo, hi) = (&self.clip.lo, &self.clip.hi);
        let c1: Vec<f64> = self.layers[k].apply(&z).iter().zip(lo).map(|(a, l)| a - l).collect();
        let z1 = relu(&c1);
        let c2: Vec<f64> = z1.iter().zip(lo.iter().zip(hi)).map(|(z, (l, h))| h - l - z).collect();
        let z2 = relu(&c2);
        let out: Vec<f64> = hi.iter().zip(&z2).map(|(h, z)| h - z).collect();
        pre.extend([c1, c2]);
        post.extend([z1, z2]);
        (out, ForwardTrace { pre, post })
    }

    /// Vector-Jacobian product of the forward map at `x`: returns `Jᵀ d_out`
    /// and, when `grads` is given, accumulates `scale ·` parameter gradients.
    /// The ReLU derivative at 0 is taken as 0.
    pub fn vjp(
        &self,
        x: &[f64],
        trace: &ForwardTrace,
        d_out: &[f64],
        mut grads: Option<(&mut [Layer], f64)>,
    ) -> Vec<f64> {
        let k = self.num_hidden();
        let gate = |g: &[f64], pre: &[f64]| -> Vec<f64> {
            g.iter().zip(pre).map(|(g, p)| if *p > 0.0 { *g } else { 0.0 }).collect()
        };
        // out = hi − z2; c2 = (hi − lo) − z1.
        let d_c2 = gate(&d_out.iter().map(|g| -g).collect::<Vec<_>>(), &trace.pre[k + 1]);
        let mut delta = gate(&d_c2.iter().map(|g| -g).collect::<Vec<_>>(), &trace.pre[k]);
        for l in (0..=k).rev() {
            let input = if l == 0 { x } else { &trace.post[l - 1] };
            if let Some((g, scale)) = grads.as_mut() {
                let gl = &mut g[l];
                for (i, d) in delta.iter().enumerate() {
                    if *d != 0.0 {
                        gl.b[i] += *scale * d;
                        for (w, a) in gl.w[i].iter_mut().zip(input) {
                            *w += *scale * d * a;
                        }
                    }
                }
            }
            let back = self.layers[l].apply_transpose(&delta);
            delta = if l == 0 { back } else { gate(&back, &trace.pre[l - 1]) };
        }
        delta
    }

    pub fn zero_grads(&self) -> Vec<Layer> {
        self.layers.iter().map(|l| Layer::zeros(l.inputs(), l.outputs())).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let model: Self = serde_json::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}
