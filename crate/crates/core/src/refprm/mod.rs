//! Desk-scale differentiable step scorer: a linear model with two heads.
//!
//! The preference head scores a step as `(pref_w - ref_w) . phi(step)` — the
//! log-ratio against a frozen reference — and trains on sibling preference
//! pairs with the loss `-ln sigmoid(beta * (delta+ - delta-))`. The
//! classification head is a 5-way softmax over the value classes trained
//! with cross-entropy. Gradients are hand-derived and checked against
//! central finite differences; training is plain full-batch gradient descent
//! so runs are bit-reproducible.

pub mod features;

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::labeling::{ClassExample, PreferencePair};
use crate::prm::{ValueClass, ALL_CLASSES};

pub use features::{featurize, FEATURE_DIM};

pub const NUM_CLASSES: usize = 5;

#[derive(Debug, Error)]
pub enum RefPrmError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("training diverged at stage {stage} epoch {epoch}: recent losses {recent:?}")]
    Divergence {
        stage: u8,
        epoch: usize,
        recent: Vec<f64>,
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
}

/// All trainable state plus the frozen reference head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefModelParams {
    #[serde(rename = "F")]
    pub feature_dim: usize,
    /// Classifier weights, `NUM_CLASSES` rows of length `feature_dim`.
    pub theta: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Preference scoring head.
    pub pref_w: Vec<f64>,
    /// Frozen reference head; never updated after construction.
    pub ref_w: Vec<f64>,
    pub beta: f64,
}

impl RefModelParams {
    pub fn zeros(feature_dim: usize, beta: f64) -> Self {
        RefModelParams {
            feature_dim,
            theta: vec![vec![0.0; feature_dim]; NUM_CLASSES],
            bias: vec![0.0; NUM_CLASSES],
            pref_w: vec![0.0; feature_dim],
            ref_w: vec![0.0; feature_dim],
            beta,
        }
    }

    pub fn validate(&self) -> Result<(), RefPrmError> {
        if !(self.beta > 0.0) {
            return Err(RefPrmError::InvalidParams(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.theta.len() != NUM_CLASSES || self.bias.len() != NUM_CLASSES {
            return Err(RefPrmError::InvalidParams(
                "classifier must have exactly five rows".into(),
            ));
        }
        for row in &self.theta {
            check_dim(self.feature_dim, row.len())?;
        }
        check_dim(self.feature_dim, self.pref_w.len())?;
        check_dim(self.feature_dim, self.ref_w.len())?;
        Ok(())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), RefPrmError> {
    if expected == got {
        Ok(())
    } else {
        Err(RefPrmError::DimensionMismatch { expected, got })
    }
}

/// One preference pair, featurized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairItem {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

impl PairItem {
    pub fn from_pair(pair: &PreferencePair) -> Self {
        PairItem {
            pos: featurize(&pair.context, &pair.preferred),
            neg: featurize(&pair.context, &pair.dispreferred),
        }
    }
}

/// One classification example, featurized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassItem {
    pub x: Vec<f64>,
    pub label: ValueClass,
}

impl ClassItem {
    pub fn from_example(example: &ClassExample) -> Self {
        ClassItem {
            x: featurize(&example.context, &example.step),
            label: example.label,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The scaled argument of the sigmoid for one pair:
/// `beta * [(pref_w - ref_w).pos - (pref_w - ref_w).neg]`. Doubling `beta`
/// doubles this margin for fixed heads.
pub fn sdpo_margin(params: &RefModelParams, pos: &[f64], neg: &[f64]) -> Result<f64, RefPrmError> {
    check_dim(params.feature_dim, pos.len())?;
    check_dim(params.feature_dim, neg.len())?;
    let raw: f64 = (0..params.feature_dim)
        .map(|i| (params.pref_w[i] - params.ref_w[i]) * (pos[i] - neg[i]))
        .sum();
    Ok(params.beta * raw)
}

/// Mean `-ln sigmoid(margin)` over the batch. Zero deviation from the
/// reference gives exactly `ln 2` per pair.
pub fn sdpo_loss(params: &RefModelParams, batch: &[PairItem]) -> Result<f64, RefPrmError> {
    if batch.is_empty() {
        return Err(RefPrmError::EmptyBatch);
    }
    let mut total = 0.0;
    for item in batch {
        total += softplus(-sdpo_margin(params, &item.pos, &item.neg)?);
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of `sdpo_loss` w.r.t. `pref_w`:
/// mean of `-beta * sigmoid(-margin) * (pos - neg)`.
pub fn sdpo_grad(params: &RefModelParams, batch: &[PairItem]) -> Result<Vec<f64>, RefPrmError> {
    if batch.is_empty() {
        return Err(RefPrmError::EmptyBatch);
    }
    let mut grad = vec![0.0f64; params.feature_dim];
    for item in batch {
        let margin = sdpo_margin(params, &item.pos, &item.neg)?;
        let coeff = -params.beta * sigmoid(-margin);
        for i in 0..params.feature_dim {
            grad[i] += coeff * (item.pos[i] - item.neg[i]);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok(grad)
}

pub fn cls_logits(params: &RefModelParams, x: &[f64]) -> Result<[f64; NUM_CLASSES], RefPrmError> {
    check_dim(params.feature_dim, x.len())?;
    let mut logits = [0.0f64; NUM_CLASSES];
    for (c, logit) in logits.iter_mut().enumerate() {
        *logit = dot(&params.theta[c], x) + params.bias[c];
    }
    Ok(logits)
}

/// Numerically stable softmax over the five class logits.
pub fn cls_probs(params: &RefModelParams, x: &[f64]) -> Result<[f64; NUM_CLASSES], RefPrmError> {
    let logits = cls_logits(params, x)?;
    Ok(softmax(&logits))
}

fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0f64; NUM_CLASSES];
    let mut sum = 0.0;
    for (p, l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
        sum += *p;
    }
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

fn log_sum_exp(logits: &[f64; NUM_CLASSES]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy `-ln P(label | x)` over the batch.
pub fn cls_loss(params: &RefModelParams, batch: &[ClassItem]) -> Result<f64, RefPrmError> {
    if batch.is_empty() {
        return Err(RefPrmError::EmptyBatch);
    }
    let mut total = 0.0;
    for item in batch {
        let logits = cls_logits(params, &item.x)?;
        total += log_sum_exp(&logits) - logits[item.label.ordinal()];
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of `cls_loss`: `(softmax - onehot) ⊗ x` batch-averaged,
/// returned as (theta gradient rows, bias gradient).
#[allow(clippy::type_complexity)]
pub fn cls_grad(
    params: &RefModelParams,
    batch: &[ClassItem],
) -> Result<(Vec<Vec<f64>>, Vec<f64>), RefPrmError> {
    if batch.is_empty() {
        return Err(RefPrmError::EmptyBatch);
    }
    let mut theta_grad = vec![vec![0.0f64; params.feature_dim]; NUM_CLASSES];
    let mut bias_grad = vec![0.0f64; NUM_CLASSES];
    for item in batch {
        let probs = cls_probs(params, &item.x)?;
        for c in 0..NUM_CLASSES {
            let delta = probs[c] - f64::from(c == item.label.ordinal());
            bias_grad[c] += delta;
            for i in 0..params.feature_dim {
                theta_grad[c][i] += delta * item.x[i];
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for row in &mut theta_grad {
        for g in row.iter_mut() {
            *g *= scale;
        }
    }
    for g in &mut bias_grad {
        *g *= scale;
    }
    Ok((theta_grad, bias_grad))
}

/// Fraction of the batch whose argmax class matches the label (ties go to
/// the lowest ordinal).
pub fn cls_accuracy(params: &RefModelParams, batch: &[ClassItem]) -> Result<f64, RefPrmError> {
    if batch.is_empty() {
        return Err(RefPrmError::EmptyBatch);
    }
    let mut hits = 0usize;
    for item in batch {
        let probs = cls_probs(params, &item.x)?;
        let mut best = 0usize;
        for c in 1..NUM_CLASSES {
            if probs[c] > probs[best] {
                best = c;
            }
        }
        if ALL_CLASSES[best] == item.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub step_size: f64,
    pub epochs_per_stage: usize,
    pub beta: f64,
    /// A stage aborts after three consecutive epochs whose loss rises more
    /// than this above the previous epoch.
    pub divergence_tolerance: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            step_size: 0.1,
            epochs_per_stage: 200,
            beta: 1.0,
            divergence_tolerance: 1e-9,
        }
    }
}

/// One loss-curve sample; stage 1 is preference training, stage 2 is
/// classification. Epoch 0 records the pre-update loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub stage: u8,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: RefModelParams,
    pub curve: Vec<CurvePoint>,
}

impl TrainReport {
    pub fn final_loss(&self, stage: u8) -> Option<f64> {
        self.curve
            .iter()
            .filter(|p| p.stage == stage)
            .next_back()
            .map(|p| p.loss)
    }
}

/// Two-stage training from zero initialization: stage 1 fits `pref_w`
/// against the frozen reference on the pairs, stage 2 fits the classifier
/// on the class examples. Deterministic: full-batch descent in input order.
pub fn train(
    pairs: &[PairItem],
    classes: &[ClassItem],
    schedule: TrainSchedule,
) -> Result<TrainReport, RefPrmError> {
    if pairs.is_empty() || classes.is_empty() {
        return Err(RefPrmError::EmptyBatch);
    }
    let feature_dim = pairs[0].pos.len();
    let mut params = RefModelParams::zeros(feature_dim, schedule.beta);
    params.validate()?;
    let mut curve = Vec::new();

    let mut guard = DivergenceGuard::new(1, schedule.divergence_tolerance);
    curve.push(CurvePoint {
        epoch: 0,
        stage: 1,
        loss: guard.observe(0, sdpo_loss(&params, pairs)?)?,
    });
    for epoch in 1..=schedule.epochs_per_stage {
        let grad = sdpo_grad(&params, pairs)?;
        for (w, g) in params.pref_w.iter_mut().zip(&grad) {
            *w -= schedule.step_size * g;
        }
        curve.push(CurvePoint {
            epoch,
            stage: 1,
            loss: guard.observe(epoch, sdpo_loss(&params, pairs)?)?,
        });
    }

    let mut guard = DivergenceGuard::new(2, schedule.divergence_tolerance);
    curve.push(CurvePoint {
        epoch: 0,
        stage: 2,
        loss: guard.observe(0, cls_loss(&params, classes)?)?,
    });
    for epoch in 1..=schedule.epochs_per_stage {
        let (theta_grad, bias_grad) = cls_grad(&params, classes)?;
        for (row, grad_row) in params.theta.iter_mut().zip(&theta_grad) {
            for (w, g) in row.iter_mut().zip(grad_row) {
                *w -= schedule.step_size * g;
            }
        }
        for (b, g) in params.bias.iter_mut().zip(&bias_grad) {
            *b -= schedule.step_size * g;
        }
        curve.push(CurvePoint {
            epoch,
            stage: 2,
            loss: guard.observe(epoch, cls_loss(&params, classes)?)?,
        });
    }

    Ok(TrainReport { params, curve })
}

/// Aborts a stage once the loss rises for three consecutive epochs
/// (or stops being finite).
struct DivergenceGuard {
    stage: u8,
    tolerance: f64,
    previous: Option<f64>,
    rising: Vec<f64>,
}

impl DivergenceGuard {
    fn new(stage: u8, tolerance: f64) -> Self {
        DivergenceGuard {
            stage,
            tolerance,
            previous: None,
            rising: Vec::new(),
        }
    }

    fn observe(&mut self, epoch: usize, loss: f64) -> Result<f64, RefPrmError> {
        if !loss.is_finite() {
            return Err(RefPrmError::Divergence {
                stage: self.stage,
                epoch,
                recent: vec![loss],
            });
        }
        if let Some(prev) = self.previous {
            if loss > prev + self.tolerance {
                self.rising.push(loss);
                if self.rising.len() >= 3 {
                    return Err(RefPrmError::Divergence {
                        stage: self.stage,
                        epoch,
                        recent: self.rising.clone(),
                    });
                }
            } else {
                self.rising.clear();
            }
        }
        self.previous = Some(loss);
        Ok(loss)
    }
}

/// Flat JSON checkpoint; two saves of equal params are byte-identical.
pub fn save_checkpoint(params: &RefModelParams, path: &Path) -> Result<(), RefPrmError> {
    let json = serde_json::to_string(params).map_err(|e| RefPrmError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, json.as_bytes()).map_err(|source| RefPrmError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<RefModelParams, RefPrmError> {
    let text = fs::read_to_string(path).map_err(|source| RefPrmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let params: RefModelParams = serde_json::from_str(&text).map_err(|e| RefPrmError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    params.validate()?;
    Ok(params)
}

/// Loss curves as CSV with columns `epoch,stage,loss`.
pub fn write_loss_curve(curve: &[CurvePoint], path: &Path) -> Result<(), RefPrmError> {
    let io_err = |source| RefPrmError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(source),
        other => RefPrmError::Parse {
            path: path.display().to_string(),
            message: format!("{other:?}"),
        },
    })?;
    for point in curve {
        writer.serialize(point).map_err(|e| RefPrmError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(io_err)
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<CurvePoint>, RefPrmError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| RefPrmError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    reader
        .deserialize()
        .collect::<Result<Vec<CurvePoint>, _>>()
        .map_err(|e| RefPrmError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}
