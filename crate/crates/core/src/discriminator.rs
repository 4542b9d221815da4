//! The lightweight discriminator: a frozen one-hidden-layer tanh encoder with
//! a trainable LoRA adapter on its weight matrix and a trainable linear
//! classifier head.
//!
//! The trainable surface is exactly what the federation exchanges: the LoRA
//! pair (A, B) and the classifier (w_cls, b_cls). Gradients are derived by
//! hand and checked against central finite differences in the test suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{DiscriminationSet, LabeledExample};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::derive_seed;

/// Low-rank adapter: `delta_w() = (alpha / rank) * B * A`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    /// `rank x feature_dim`, Gaussian at init.
    pub a: Matrix,
    /// `hidden_dim x rank`, zero at init so a fresh adapter is a no-op.
    pub b: Matrix,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// The effective dense update `scaling * B * A`.
    pub fn delta_w(&self) -> Matrix {
        self.b
            .matmul(&self.a)
            .expect("adapter shapes are checked at construction")
            .scale(self.scaling())
    }
}

/// Frozen base encoder plus trainable adapter and classifier head.
#[derive(Clone, Debug)]
pub struct DiscriminatorModel {
    /// Frozen base weight, `hidden_dim x feature_dim`.
    pub w0: Matrix,
    /// Frozen base bias, length `hidden_dim`.
    pub b0: Vec<f64>,
    pub adapter: Option<LoraAdapter>,
    /// Classifier weight, length `hidden_dim`.
    pub w_cls: Vec<f64>,
    pub b_cls: f64,
}

impl DiscriminatorModel {
    pub fn hidden_dim(&self) -> usize {
        self.w0.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w0.cols()
    }
}

/// How positive examples are weighted in the loss: a fixed factor, or
/// `#negatives / #positives` computed per training set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassWeight {
    Fixed(f64),
    Auto,
}

impl Serialize for ClassWeight {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ClassWeight::Fixed(w) => serializer.serialize_f64(*w),
            ClassWeight::Auto => serializer.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for ClassWeight {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(w) => Ok(ClassWeight::Fixed(w)),
            Raw::Text(s) if s == "auto" => Ok(ClassWeight::Auto),
            Raw::Text(other) => Err(serde::de::Error::custom(format!(
                "positive_class_weight must be a number or \"auto\", got {other:?}"
            ))),
        }
    }
}

impl Default for ClassWeight {
    fn default() -> Self {
        ClassWeight::Fixed(1.0)
    }
}

/// Local training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub positive_class_weight: ClassWeight,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            positive_class_weight: ClassWeight::default(),
            shuffle_seed: 0,
        }
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, variance: f64) -> Matrix {
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sampled entries are finite")
}

/// Simulated pretrained base: `W0 ~ N(0, 1/n)`, `w_cls ~ N(0, 1/m)`, zero
/// biases, no adapter attached.
pub fn init_model(feature_dim: usize, hidden_dim: usize, seed: u64) -> DiscriminatorModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = gaussian_matrix(&mut rng, hidden_dim, feature_dim, 1.0 / feature_dim as f64);
    let normal = Normal::new(0.0, (1.0 / hidden_dim as f64).sqrt()).expect("finite std");
    let w_cls = (0..hidden_dim).map(|_| normal.sample(&mut rng)).collect();
    DiscriminatorModel {
        w0,
        b0: vec![0.0; hidden_dim],
        adapter: None,
        w_cls,
        b_cls: 0.0,
    }
}

/// Fresh adapter: `A ~ N(0, 1/r)`, `B = 0`, so the initial update is a no-op
/// and a client starts each round exactly at the received global state.
pub fn init_lora(
    rank: usize,
    alpha: f64,
    feature_dim: usize,
    hidden_dim: usize,
    seed: u64,
) -> Result<LoraAdapter> {
    if rank < 1 || rank > feature_dim.min(hidden_dim) {
        return Err(Error::Config(format!(
            "rank {rank} out of range 1..={}",
            feature_dim.min(hidden_dim)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian_matrix(&mut rng, rank, feature_dim, 1.0 / rank as f64);
    Ok(LoraAdapter {
        a,
        b: Matrix::zeros(hidden_dim, rank),
        rank,
        alpha,
    })
}

/// Intermediates of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `sigma(logit)`, in (0, 1).
    pub score: f64,
    pub logit: f64,
    /// `tanh(preactivation)`.
    pub hidden: Vec<f64>,
    pub preactivation: Vec<f64>,
    /// `A * h` when an adapter is attached.
    pub adapter_projection: Option<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scores one feature vector: `a = (W0 + s*B*A) h + b0`, `u = tanh(a)`,
/// `p = sigma(w_cls . u + b_cls)`.
pub fn forward(model: &DiscriminatorModel, features: &[f64]) -> Result<Forward> {
    if features.len() != model.feature_dim() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left_rows: model.hidden_dim(),
            left_cols: model.feature_dim(),
            right_rows: features.len(),
            right_cols: 1,
        });
    }
    let mut preactivation = model.w0.matvec(features)?;
    let adapter_projection = match &model.adapter {
        Some(adapter) => {
            let proj = adapter.a.matvec(features)?;
            let lifted = adapter.b.matvec(&proj)?;
            let s = adapter.scaling();
            for (acc, v) in preactivation.iter_mut().zip(&lifted) {
                *acc += s * v;
            }
            Some(proj)
        }
        None => None,
    };
    for (acc, b) in preactivation.iter_mut().zip(&model.b0) {
        *acc += b;
    }
    let hidden: Vec<f64> = preactivation.iter().map(|a| a.tanh()).collect();
    let logit = dot(&model.w_cls, &hidden) + model.b_cls;
    Ok(Forward {
        score: sigmoid(logit),
        logit,
        hidden,
        preactivation,
        adapter_projection,
    })
}

const BCE_EPS: f64 = 1e-12;

/// Binary cross-entropy of a score against a 0/1 label, with the score
/// clamped to `[1e-12, 1 - 1e-12]` so saturated logits stay finite.
pub fn bce_loss(score: f64, label: u8) -> f64 {
    let p = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Gradients of the mean weighted BCE over a batch, for the trainable
/// parameters only.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub a: Matrix,
    pub b: Matrix,
    pub w_cls: Vec<f64>,
    pub b_cls: f64,
}

/// Mean weighted BCE of a batch; the forward-only route used by training
/// reports and by the finite-difference checks.
pub fn batch_loss(
    model: &DiscriminatorModel,
    batch: &[&LabeledExample],
    pos_weight: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        let out = forward(model, &ex.features)?;
        let w = if ex.label == 1 { pos_weight } else { 1.0 };
        total += w * bce_loss(out.score, ex.label);
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradients of the mean weighted BCE over a batch.
///
/// Per example with residual `g = w * (p - z)`:
/// `dw_cls = g*u`, `db_cls = g`, `delta = (g*w_cls) .* (1 - u^2)`,
/// `dB = s * delta (A h)^T`, `dA = s * (B^T delta) h^T`. The frozen base
/// receives no gradient. Returns the gradients and the mean batch loss.
pub fn backward(
    model: &DiscriminatorModel,
    batch: &[&LabeledExample],
    pos_weight: f64,
) -> Result<(Gradients, f64)> {
    let adapter = model
        .adapter
        .as_ref()
        .ok_or_else(|| Error::Training("backward requires an attached adapter".into()))?;
    if batch.is_empty() {
        return Err(Error::Training("backward requires a non-empty batch".into()));
    }
    let m = model.hidden_dim();
    let rank = adapter.rank;
    let s = adapter.scaling();

    let mut grads = Gradients {
        a: Matrix::zeros(rank, model.feature_dim()),
        b: Matrix::zeros(m, rank),
        w_cls: vec![0.0; m],
        b_cls: 0.0,
    };
    let mut loss = 0.0;

    for ex in batch {
        let out = forward(model, &ex.features)?;
        let weight = if ex.label == 1 { pos_weight } else { 1.0 };
        loss += weight * bce_loss(out.score, ex.label);
        let g = weight * (out.score - ex.label as f64);

        for (acc, u) in grads.w_cls.iter_mut().zip(&out.hidden) {
            *acc += g * u;
        }
        grads.b_cls += g;

        let delta: Vec<f64> = model
            .w_cls
            .iter()
            .zip(&out.hidden)
            .map(|(w, u)| g * w * (1.0 - u * u))
            .collect();

        let proj = out
            .adapter_projection
            .as_ref()
            .expect("adapter attached implies projection cached");
        for (i, &d) in delta.iter().enumerate() {
            for (j, &p) in proj.iter().enumerate() {
                let v = grads.b.get(i, j) + s * d * p;
                grads.b.set(i, j, v);
            }
        }

        // B^T delta, then the outer product with h.
        let mut bt_delta = vec![0.0; rank];
        for (i, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (j, acc) in bt_delta.iter_mut().enumerate() {
                *acc += adapter.b.get(i, j) * d;
            }
        }
        for (j, &bd) in bt_delta.iter().enumerate() {
            if bd == 0.0 {
                continue;
            }
            for (k, &h) in ex.features.iter().enumerate() {
                let v = grads.a.get(j, k) + s * bd * h;
                grads.a.set(j, k, v);
            }
        }
    }

    let inv = 1.0 / batch.len() as f64;
    grads.a = grads.a.scale(inv);
    grads.b = grads.b.scale(inv);
    for w in &mut grads.w_cls {
        *w *= inv;
    }
    grads.b_cls *= inv;
    Ok((grads, loss * inv))
}

/// Momentum buffers for the trainable parameters.
#[derive(Clone, Debug)]
pub struct Velocity {
    pub a: Matrix,
    pub b: Matrix,
    pub w_cls: Vec<f64>,
    pub b_cls: f64,
}

impl Velocity {
    pub fn zeros_like(model: &DiscriminatorModel) -> Result<Velocity> {
        let adapter = model
            .adapter
            .as_ref()
            .ok_or_else(|| Error::Training("velocity requires an attached adapter".into()))?;
        Ok(Velocity {
            a: Matrix::zeros(adapter.rank, model.feature_dim()),
            b: Matrix::zeros(model.hidden_dim(), adapter.rank),
            w_cls: vec![0.0; model.hidden_dim()],
            b_cls: 0.0,
        })
    }
}

/// Classical momentum step on A, B, w_cls, b_cls:
/// `v <- momentum*v - lr*grad; param <- param + v`.
pub fn sgd_step(
    model: &mut DiscriminatorModel,
    grads: &Gradients,
    cfg: &TrainConfig,
    velocity: &mut Velocity,
) -> Result<()> {
    let adapter = model
        .adapter
        .as_mut()
        .ok_or_else(|| Error::Training("sgd_step requires an attached adapter".into()))?;
    let lr = cfg.learning_rate;
    let mu = cfg.momentum;

    let step_matrix = |param: &mut Matrix, vel: &mut Matrix, grad: &Matrix| {
        for i in 0..param.rows() {
            for j in 0..param.cols() {
                let v = mu * vel.get(i, j) - lr * grad.get(i, j);
                vel.set(i, j, v);
                param.set(i, j, param.get(i, j) + v);
            }
        }
    };
    step_matrix(&mut adapter.a, &mut velocity.a, &grads.a);
    step_matrix(&mut adapter.b, &mut velocity.b, &grads.b);
    for ((w, v), g) in model
        .w_cls
        .iter_mut()
        .zip(&mut velocity.w_cls)
        .zip(&grads.w_cls)
    {
        *v = mu * *v - lr * g;
        *w += *v;
    }
    velocity.b_cls = mu * velocity.b_cls - lr * grads.b_cls;
    model.b_cls += velocity.b_cls;
    Ok(())
}

/// The trainable state a client sends back after local training.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub adapter: LoraAdapter,
    pub w_cls: Vec<f64>,
    pub b_cls: f64,
    /// Mean weighted loss per epoch, measured as batches are visited.
    pub epoch_losses: Vec<f64>,
}

fn resolve_pos_weight(data: &DiscriminationSet, cfg: &TrainConfig) -> f64 {
    match cfg.positive_class_weight {
        ClassWeight::Fixed(w) => w,
        ClassWeight::Auto => {
            let pos = data.positives();
            let neg = data.len() - pos;
            if pos == 0 || neg == 0 {
                1.0
            } else {
                neg as f64 / pos as f64
            }
        }
    }
}

/// Runs `epochs` passes of shuffled mini-batch SGD over the local set,
/// updating the adapter and classifier in place. The frozen base is never
/// touched. Epoch `e` shuffles with `shuffle_seed ^ e`.
pub fn train_local(
    model: &mut DiscriminatorModel,
    data: &DiscriminationSet,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if model.adapter.is_none() {
        return Err(Error::Training("model has no adapter attached".into()));
    }
    if data.feature_dim != model.feature_dim() {
        return Err(Error::Training(format!(
            "training set width {} does not match model feature dim {}",
            data.feature_dim,
            model.feature_dim()
        )));
    }

    let pos_weight = resolve_pos_weight(data, cfg);
    let mut velocity = Velocity::zeros_like(model)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed ^ epoch as u64);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &data.examples[i]).collect();
            let (grads, mean_loss) = backward(model, &batch, pos_weight)?;
            loss_sum += mean_loss * batch.len() as f64;
            sgd_step(model, &grads, cfg, &mut velocity)?;
        }
        epoch_losses.push(loss_sum / data.len() as f64);
    }

    let adapter = model.adapter.clone().expect("adapter checked above");
    Ok(TrainReport {
        adapter,
        w_cls: model.w_cls.clone(),
        b_cls: model.b_cls,
        epoch_losses,
    })
}

/// Folds an adapter into a base weight: `W0 + scaling * B * A`.
pub fn merge_adapter(w0: &Matrix, adapter: &LoraAdapter) -> Result<Matrix> {
    let delta = adapter.b.matmul(&adapter.a)?;
    if delta.rows() != w0.rows() || delta.cols() != w0.cols() {
        return Err(Error::ShapeMismatch {
            op: "merge_adapter",
            left_rows: w0.rows(),
            left_cols: w0.cols(),
            right_rows: delta.rows(),
            right_cols: delta.cols(),
        });
    }
    crate::linalg::axpy(w0, &delta, adapter.scaling())
}

/// Derives the per-round adapter-init seed for a client.
pub fn adapter_seed(client_seed: u64, round: usize) -> u64 {
    derive_seed(client_seed, 0x10 + round as u64)
}

/// Derives the per-round shuffle seed for a client.
pub fn shuffle_seed(client_seed: u64, round: usize) -> u64 {
    derive_seed(client_seed, 0x1000 + round as u64)
}
