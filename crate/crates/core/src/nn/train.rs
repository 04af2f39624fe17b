//! Mean-L1 loss, backpropagation, Adam, and early-stopped training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Layer, MlpModel, NnError, TrainMeta};
use crate::dataset::{Dataset, Split};

/// Samples per parallel work unit; partial sums are reduced in chunk order.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 0 means the initial parameters were never beaten.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Layer>,
    pub v: Vec<Layer>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self { m: model.zero_grads(), v: model.zero_grads(), t: 0 }
    }
}

fn check_pairs(predictions: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<(), NnError> {
    if predictions.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if predictions.len() != labels.len() {
        return Err(NnError::ShapeMismatch(format!("{} predictions, {} labels", predictions.len(), labels.len())));
    }
    if let Some(i) = predictions.iter().zip(labels).position(|(p, l)| p.len() != l.len()) {
        return Err(NnError::ShapeMismatch(format!("sample {} has mismatched lengths", i)));
    }
    Ok(())
}

/// Mean over samples of `‖label − prediction‖₁`.
pub fn loss_l0(predictions: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64, NnError> {
    check_pairs(predictions, labels)?;
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| p.iter().zip(l).map(|(a, b)| (b - a).abs()).sum::<f64>())
        .sum();
    Ok(total / predictions.len() as f64)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(acc: &mut [Layer], other: &[Layer]) {
    for (a, o) in acc.iter_mut().zip(other) {
        for (x, y) in a.values_mut().zip(o.values()) {
            *x += y;
        }
    }
}

fn check_batch(model: &MlpModel, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<(), NnError> {
    if xs.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if xs.len() != ys.len() {
        return Err(NnError::ShapeMismatch(format!("{} inputs, {} labels", xs.len(), ys.len())));
    }
    for (x, y) in xs.iter().zip(ys) {
        if x.len() != model.arch.input || y.len() != model.arch.output {
            return Err(NnError::ShapeMismatch(format!(
                "sample of shape {}→{}, model is {}→{}",
                x.len(),
                y.len(),
                model.arch.input,
                model.arch.output
            )));
        }
    }
    Ok(())
}

/// Loss and gradient over a batch; deterministic regardless of thread count.
pub(crate) fn loss_and_grad(model: &MlpModel, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> (f64, Vec<Layer>) {
    let scale = 1.0 / xs.len() as f64;
    let partials: Vec<(f64, Vec<Layer>)> = xs
        .par_chunks(CHUNK)
        .zip(ys.par_chunks(CHUNK))
        .map(|(cx, cy)| {
            let mut grads = model.zero_grads();
            let mut loss = 0.0;
            for (x, y) in cx.iter().zip(cy) {
                let (out, trace) = model.forward_unchecked(x);
                loss += out.iter().zip(y).map(|(p, l)| (l - p).abs()).sum::<f64>();
                let d_out: Vec<f64> = out.iter().zip(y).map(|(p, l)| sign(p - l)).collect();
                model.vjp(x, &trace, &d_out, Some((&mut grads, scale)));
            }
            (loss, grads)
        })
        .collect();
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        add_into(&mut grads, g);
    }
    (loss * scale, grads)
}

/// Gradient of the mean-L1 loss with respect to every weight and bias.
pub fn backward(model: &MlpModel, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Vec<Layer>, NnError> {
    check_batch(model, xs, ys)?;
    Ok(loss_and_grad(model, xs, ys).1)
}

pub fn batch_loss(model: &MlpModel, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64, NnError> {
    check_batch(model, xs, ys)?;
    let preds: Vec<Vec<f64>> = xs.par_iter().map(|x| model.forward_unchecked(x).0).collect();
    loss_l0(&preds, ys)
}

/// Adam with bias correction.
pub fn adam_step(params: &mut [Layer], grads: &[Layer], state: &mut AdamState, config: &TrainConfig) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        for (((p, g), m), v) in p.values_mut().zip(g.values()).zip(m.values_mut()).zip(v.values_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
}

pub fn train(model: &MlpModel, dataset: &Dataset, config: &TrainConfig) -> Result<(MlpModel, TrainHistory), NnError> {
    let (tx, ty) = dataset.arrays(Split::Train);
    let (vx, vy) = dataset.arrays(Split::Val);
    train_arrays(model, &tx, &ty, &vx, &vy, config)
}

/// Minibatch Adam; keeps the parameters with the lowest validation loss and
/// stops after `patience` epochs without strict improvement.
pub fn train_arrays(
    model: &MlpModel,
    train_x: &[Vec<f64>],
    train_y: &[Vec<f64>],
    val_x: &[Vec<f64>],
    val_y: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<(MlpModel, TrainHistory), NnError> {
    config.validate()?;
    if train_x.is_empty() {
        return Err(NnError::EmptySplit("train"));
    }
    if val_x.is_empty() {
        return Err(NnError::EmptySplit("val"));
    }
    check_batch(model, train_x, train_y)?;
    check_batch(model, val_x, val_y)?;

    let mut current = model.clone();
    let mut state = AdamState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial_val = batch_loss(&current, val_x, val_y)?;
    let mut best = (initial_val, 0usize, current.layers.clone());
    let mut history = TrainHistory {
        initial_val_loss: initial_val,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut waited = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let bx: Vec<Vec<f64>> = batch.iter().map(|&i| train_x[i].clone()).collect();
            let by: Vec<Vec<f64>> = batch.iter().map(|&i| train_y[i].clone()).collect();
            let (_, grads) = loss_and_grad(&current, &bx, &by);
            adam_step(&mut current.layers, &grads, &mut state, config);
        }
        let tl = batch_loss(&current, train_x, train_y)?;
        let vl = batch_loss(&current, val_x, val_y)?;
        history.train_loss.push(tl);
        history.val_loss.push(vl);
        if vl < best.0 {
            best = (vl, epoch, current.layers.clone());
            waited = 0;
        } else {
            waited += 1;
            if waited >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    let mut trained = model.clone();
    trained.layers = best.2;
    history.best_epoch = best.1;
    trained.train_meta = Some(TrainMeta {
        epochs: history.val_loss.len(),
        best_epoch: best.1,
        best_val_loss: best.0,
        initial_val_loss: initial_val,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        patience: config.patience,
        train_seed: config.seed,
    });
    Ok((trained, history))
}
