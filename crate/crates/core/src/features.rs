//! Per-sample item features `[loss, entropy, density, label]` and the
//! per-stage phase descriptor `[e_T, l_smooth, acc_smooth]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::nn::Matrix;

pub const FEATURE_COUNT: usize = 4;

/// Columns with population std at or below this are treated as constant.
pub const CONSTANT_COLUMN_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct FeatureConfig {
    /// Include `S_ii` when averaging similarities.
    #[serde(default)]
    pub density_includes_self: bool,
}


/// Shannon entropy (nats) of each probability row; `0 ln 0 = 0`.
pub fn compute_entropy(probs: &Matrix) -> Vec<f64> {
    probs
        .iter_rows()
        .map(|row| {
            -row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect()
}

/// Mean raw dot-product similarity of each logit row with the rest of the
/// batch. A batch of one has no peers and gets density 0.
pub fn compute_density(logits: &Matrix, include_self: bool) -> Vec<f64> {
    let b = logits.rows();
    if b == 0 {
        return Vec::new();
    }
    let peers = if include_self { b } else { b - 1 };
    if peers == 0 {
        return vec![0.0; b];
    }
    let mut sims = vec![0.0; b * b];
    for i in 0..b {
        for j in i..b {
            let s: f64 = logits
                .row(i)
                .iter()
                .zip(logits.row(j))
                .map(|(a, c)| a * c)
                .sum();
            sims[i * b + j] = s;
            sims[j * b + i] = s;
        }
    }
    (0..b)
        .map(|i| {
            let total: f64 = (0..b)
                .filter(|&j| include_self || j != i)
                .map(|j| sims[i * b + j])
                .sum();
            total / peers as f64
        })
        .collect()
}

pub fn label_feature(y: usize, class_count: usize) -> f64 {
    y as f64 / (class_count - 1) as f64
}

/// In-place per-column z-scoring (population std). Constant columns become zero.
pub fn normalize_columns(m: &mut Matrix) {
    let (rows, cols) = (m.rows(), m.cols());
    if rows == 0 {
        return;
    }
    for c in 0..cols {
        let mean = (0..rows).map(|r| m.get(r, c)).sum::<f64>() / rows as f64;
        let var = (0..rows)
            .map(|r| {
                let d = m.get(r, c) - mean;
                d * d
            })
            .sum::<f64>()
            / rows as f64;
        let std = var.sqrt();
        for r in 0..rows {
            let v = if std > CONSTANT_COLUMN_EPS {
                (m.get(r, c) - mean) / std
            } else {
                0.0
            };
            m.set(r, c, v);
        }
    }
}

/// Raw `B x 4` feature matrix before normalization.
pub fn raw_features(
    losses: &[f64],
    probs: &Matrix,
    logits: &Matrix,
    labels: &[usize],
    class_count: usize,
    cfg: &FeatureConfig,
) -> Result<Matrix> {
    let b = losses.len();
    ensure_len("feature probs", b, probs.rows())?;
    ensure_len("feature logits", b, logits.rows())?;
    ensure_len("feature labels", b, labels.len())?;
    if class_count < 2 {
        return Err(Error::InvalidInput("label feature needs C >= 2".into()));
    }
    let entropy = compute_entropy(probs);
    let density = compute_density(logits, cfg.density_includes_self);
    let mut f = Matrix::zeros(b, FEATURE_COUNT);
    for i in 0..b {
        let row = f.row_mut(i);
        row[0] = losses[i];
        row[1] = entropy[i];
        row[2] = density[i];
        row[3] = label_feature(labels[i], class_count);
    }
    Ok(f)
}

/// Stacks the four raw features and z-scores each column within the batch.
pub fn assemble_features(
    losses: &[f64],
    probs: &Matrix,
    logits: &Matrix,
    labels: &[usize],
    class_count: usize,
    cfg: &FeatureConfig,
) -> Result<Matrix> {
    let mut f = raw_features(losses, probs, logits, labels, class_count, cfg)?;
    normalize_columns(&mut f);
    Ok(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub loss_beta: f64,
    pub acc_beta: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            loss_beta: 0.95,
            acc_beta: 0.8,
        }
    }
}

/// Training-phase state of the target network at a stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDescriptor {
    /// 1-based stage index.
    pub stage: usize,
    pub l_smooth: f64,
    pub acc_smooth: f64,
    pub loss_observed: bool,
    pub acc_observed: bool,
}

impl PhaseDescriptor {
    pub fn new(stage: usize) -> Self {
        Self {
            stage,
            l_smooth: 0.0,
            acc_smooth: 0.0,
            loss_observed: false,
            acc_observed: false,
        }
    }

    pub fn with_stage(&self, stage: usize) -> Self {
        Self {
            stage,
            ..self.clone()
        }
    }

    /// `[e_T, l_smooth, acc_smooth]`.
    pub fn vector(&self, table: &StageEmbedding) -> Result<Vec<f64>> {
        let mut v = table.lookup(self.stage)?.to_vec();
        v.push(self.l_smooth);
        v.push(self.acc_smooth);
        Ok(v)
    }
}

/// Exponential smoothing of the training loss (every step) and validation
/// accuracy (when measured). The first observation is taken as-is.
pub fn update_smoothed(
    prev: &PhaseDescriptor,
    batch_mean_loss: f64,
    new_val_acc: Option<f64>,
    cfg: &SmoothingConfig,
) -> PhaseDescriptor {
    let mut next = prev.clone();
    next.l_smooth = if prev.loss_observed {
        cfg.loss_beta * prev.l_smooth + (1.0 - cfg.loss_beta) * batch_mean_loss
    } else {
        batch_mean_loss
    };
    next.loss_observed = true;
    match new_val_acc {
        Some(acc) => smooth_accuracy(&next, acc, cfg),
        None => next,
    }
}

/// Folds a new validation accuracy into `acc_smooth`, leaving the loss untouched.
pub fn smooth_accuracy(prev: &PhaseDescriptor, acc: f64, cfg: &SmoothingConfig) -> PhaseDescriptor {
    let mut next = prev.clone();
    next.acc_smooth = if prev.acc_observed {
        cfg.acc_beta * prev.acc_smooth + (1.0 - cfg.acc_beta) * acc
    } else {
        acc
    };
    next.acc_observed = true;
    next
}

/// Trainable `T_max x d` table mapping a stage index to its embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEmbedding {
    pub stages: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl StageEmbedding {
    pub const INIT_STD: f64 = 0.01;

    pub fn new<R: Rng + ?Sized>(stages: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, Self::INIT_STD).unwrap();
        let values = (0..stages * dim).map(|_| normal.sample(rng)).collect();
        Self {
            stages,
            dim,
            values,
        }
    }

    pub fn row_range(&self, stage: usize) -> Result<std::ops::Range<usize>> {
        if stage == 0 || stage > self.stages {
            return Err(Error::InvalidInput(format!(
                "stage {stage} outside 1..={}",
                self.stages
            )));
        }
        let start = (stage - 1) * self.dim;
        Ok(start..start + self.dim)
    }

    pub fn lookup(&self, stage: usize) -> Result<&[f64]> {
        Ok(&self.values[self.row_range(stage)?])
    }
}
