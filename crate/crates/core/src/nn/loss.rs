use super::Matrix;
use crate::error::{ensure_len, Error, Result};

/// Per-sample cross-entropy losses together with the softmax probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxOutput {
    pub losses: Vec<f64>,
    pub probs: Matrix,
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Max-subtracted softmax and `-log p[label]` for every row.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<SoftmaxOutput> {
    ensure_len("labels", logits.rows(), labels.len())?;
    check_labels(labels, logits.cols())?;
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    let mut losses = Vec::with_capacity(logits.rows());
    for (r, &y) in labels.iter().enumerate() {
        let z = logits.row(r);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pr = probs.row_mut(r);
        let mut sum = 0.0;
        for (p, &zi) in pr.iter_mut().zip(z) {
            *p = (zi - m).exp();
            sum += *p;
        }
        for p in pr.iter_mut() {
            *p /= sum;
        }
        losses.push(m + sum.ln() - z[y]);
    }
    Ok(SoftmaxOutput { losses, probs })
}

/// Focal loss `-(1 - p_t)^gamma * ln p_t` per sample, and its gradient with
/// respect to the logits (unscaled, one row per sample).
pub fn focal_loss_and_grad(
    logits: &Matrix,
    labels: &[usize],
    gamma: f64,
) -> Result<(Vec<f64>, Matrix)> {
    let sm = softmax_cross_entropy(logits, labels)?;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut losses = Vec::with_capacity(labels.len());
    for (r, &y) in labels.iter().enumerate() {
        let p = sm.probs.row(r);
        let pt = p[y];
        let ce = sm.losses[r];
        let q = 1.0 - pt;
        let modulator = q.powf(gamma);
        losses.push(modulator * ce);
        // d/dz_j [-(1-p)^g ln p] = [(1-p)^g - g (1-p)^(g-1) p ln p] * (p_j - delta_jy),
        // with ln p = -ce.
        let slope = if q > 0.0 {
            gamma * q.powf(gamma - 1.0) * pt * ce
        } else {
            0.0
        };
        let factor = modulator + slope;
        let gr = grad.row_mut(r);
        for (j, g) in gr.iter_mut().enumerate() {
            let onehot = if j == y { 1.0 } else { 0.0 };
            *g = factor * (p[j] - onehot);
        }
    }
    Ok((losses, grad))
}
