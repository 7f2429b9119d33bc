//! Desk-scale differentiable binary classifiers with hand-written
//! gradients, SGD/Adam update rules, and weighted classification metrics.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::search_space::{Configuration, OptimizerKind};
use crate::SeededRng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Model architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Logistic,
    Mlp { hidden_units: usize },
}

impl ModelKind {
    pub fn param_len(&self, input_dim: usize) -> usize {
        match self {
            ModelKind::Logistic => input_dim + 1,
            ModelKind::Mlp { hidden_units: h } => h * input_dim + h + h + 1,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Logistic => write!(f, "logistic"),
            ModelKind::Mlp { hidden_units } => write!(f, "mlp{hidden_units}"),
        }
    }
}

/// Flat model parameters plus the layout needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn same_layout(&self, other: &ParameterVector) -> bool {
        self.kind == other.kind
            && self.input_dim == other.input_dim
            && self.values.len() == other.values.len()
    }
}

/// Per-call optimizer state; Adam keeps bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; n_params], vec![0.0; n_params]),
        };
        Self {
            kind,
            step_count: 0,
            first_moment: m,
            second_moment: v,
        }
    }
}

/// Accuracy plus support-weighted precision/recall/F1 and the raw confusion
/// matrix (rows: actual class, columns: predicted class).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: [[u64; 2]; 2],
}

/// Initializes parameters: weights ~ N(0, 1/fan_in), biases zero.
pub fn init_model(kind: ModelKind, input_dim: usize, rng: &mut SeededRng) -> ParameterVector {
    let mut values = vec![0.0; kind.param_len(input_dim)];
    match kind {
        ModelKind::Logistic => {
            let dist = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("valid scale");
            for v in values[..input_dim].iter_mut() {
                *v = dist.sample(rng);
            }
        }
        ModelKind::Mlp { hidden_units: h } => {
            let w1 = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("valid scale");
            let w2 = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("valid scale");
            for v in values[..h * input_dim].iter_mut() {
                *v = w1.sample(rng);
            }
            // b1 stays zero; w2 follows after [W1 | b1].
            let w2_start = h * input_dim + h;
            for v in values[w2_start..w2_start + h].iter_mut() {
                *v = w2.sample(rng);
            }
        }
    }
    ParameterVector {
        kind,
        input_dim,
        values,
    }
}

/// Raw logit of the model on one sample.
pub fn logit(params: &ParameterVector, x: &[f64]) -> f64 {
    let d = params.input_dim;
    let p = &params.values;
    match params.kind {
        ModelKind::Logistic => p[..d].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + p[d],
        ModelKind::Mlp { hidden_units: h } => {
            let b1 = h * d;
            let w2 = b1 + h;
            let b2 = w2 + h;
            let mut z = p[b2];
            for j in 0..h {
                let s: f64 =
                    p[j * d..(j + 1) * d].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
                        + p[b1 + j];
                z += p[w2 + j] * s.tanh();
            }
            z
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy with logits.
fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Mean BCE loss and its gradient over the rows of `data` selected by `idx`.
pub fn loss_and_gradient(
    params: &ParameterVector,
    data: &Dataset,
    idx: &[usize],
) -> Result<(f64, ParameterVector)> {
    assert!(!idx.is_empty(), "batch must be non-empty");
    let d = params.input_dim;
    let n = idx.len() as f64;
    let mut grad = vec![0.0; params.values.len()];
    let mut loss = 0.0;

    for &i in idx {
        let x = &data.features[i];
        let y = data.labels[i] as f64;
        let z = logit(params, x);
        if !z.is_finite() {
            let magnitude = params.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return Err(Error::NonFiniteActivation { magnitude });
        }
        loss += bce_with_logits(z, y);
        let dz = (sigmoid(z) - y) / n;

        match params.kind {
            ModelKind::Logistic => {
                for (g, xi) in grad[..d].iter_mut().zip(x) {
                    *g += dz * xi;
                }
                grad[d] += dz;
            }
            ModelKind::Mlp { hidden_units: h } => {
                let p = &params.values;
                let b1 = h * d;
                let w2 = b1 + h;
                let b2 = w2 + h;
                grad[b2] += dz;
                for j in 0..h {
                    let s: f64 = p[j * d..(j + 1) * d]
                        .iter()
                        .zip(x)
                        .map(|(w, xi)| w * xi)
                        .sum::<f64>()
                        + p[b1 + j];
                    let a = s.tanh();
                    grad[w2 + j] += dz * a;
                    let ds = dz * p[w2 + j] * (1.0 - a * a);
                    for (g, xi) in grad[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += ds * xi;
                    }
                    grad[b1 + j] += ds;
                }
            }
        }
    }

    Ok((
        loss / n,
        ParameterVector {
            kind: params.kind,
            input_dim: d,
            values: grad,
        },
    ))
}

/// Mean BCE loss only.
pub fn mean_loss(params: &ParameterVector, data: &Dataset) -> Result<f64> {
    let mut loss = 0.0;
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let z = logit(params, x);
        if !z.is_finite() {
            let magnitude = params.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return Err(Error::NonFiniteActivation { magnitude });
        }
        loss += bce_with_logits(z, y as f64);
    }
    Ok(loss / data.len() as f64)
}

/// Applies one optimizer update in place.
pub fn optimizer_step(
    params: &mut ParameterVector,
    grad: &ParameterVector,
    state: &mut OptimizerState,
    lr: f64,
) {
    assert!(params.same_layout(grad), "parameter/gradient layout mismatch");
    state.step_count += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.values.iter_mut().zip(&grad.values) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => {
            let t = state.step_count as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            for ((p, g), (m, v)) in params
                .values
                .iter_mut()
                .zip(&grad.values)
                .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Runs `epochs` passes of mini-batch training with a fresh optimizer state.
/// Each epoch shuffles the row order with the supplied RNG and steps once per
/// mini-batch of `config.batch_size` rows (the last batch may be smaller).
pub fn train_epochs(
    mut params: ParameterVector,
    data: &Dataset,
    config: &Configuration,
    epochs: usize,
    rng: &mut SeededRng,
) -> Result<ParameterVector> {
    let mut state = OptimizerState::new(config.optimizer, params.values.len());
    let mut idx: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        idx.shuffle(rng);
        for batch in idx.chunks(config.batch_size) {
            let (_, grad) = loss_and_gradient(&params, data, batch)?;
            optimizer_step(&mut params, &grad, &mut state, config.learning_rate);
        }
    }
    Ok(params)
}

/// Support-weighted precision/recall/F1 and accuracy from a confusion
/// matrix; zero-denominator per-class terms contribute 0.
pub fn metrics_from_confusion(confusion: [[u64; 2]; 2]) -> MetricsReport {
    let total: u64 = confusion.iter().flatten().sum();
    let n = total as f64;
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    for class in 0..2 {
        let support = (confusion[class][0] + confusion[class][1]) as f64;
        let tp = confusion[class][class] as f64;
        let predicted = (confusion[0][class] + confusion[1][class]) as f64;
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if support > 0.0 { tp / support } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let w = support / n;
        precision += w * p;
        recall += w * r;
        f1 += w * f;
    }
    let accuracy = (confusion[0][0] + confusion[1][1]) as f64 / n;
    MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        confusion,
    }
}

/// Classifies every row (probability threshold 0.5) and reports metrics.
pub fn evaluate(params: &ParameterVector, data: &Dataset) -> MetricsReport {
    assert!(!data.is_empty(), "evaluation set must be non-empty");
    let mut confusion = [[0u64; 2]; 2];
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let pred = usize::from(logit(params, x) >= 0.0);
        confusion[y as usize][pred] += 1;
    }
    metrics_from_confusion(confusion)
}
