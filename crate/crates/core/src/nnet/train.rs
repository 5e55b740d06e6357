//! Cross-entropy training with plain SGD, gradient clipping, and a
//! finite-difference gradient checker.

use ndarray::Array2;

use super::SequenceModel;
use crate::error::{contract_err, numerical_err, Result};

/// Training hyperparameters. The optimizer is plain SGD over full batch
/// gradients with global-norm clipping.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Batch size in utterances.
    pub batch_size: usize,
    pub seed: u64,
    /// Gradient L2-norm clip; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 1,
            seed: 42,
            clip_norm: 5.0,
        }
    }
}

/// Mean cross-entropy of per-frame posteriors against 0/1 labels. The
/// probability of the true class is clamped to >= 1e-12 before the log.
pub fn cross_entropy(posteriors: &Array2<f64>, labels: &[u8]) -> Result<f64> {
    if posteriors.nrows() != labels.len() {
        return contract_err(format!(
            "{} posterior rows but {} labels",
            posteriors.nrows(),
            labels.len()
        ));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (row, &y) in posteriors.rows().into_iter().zip(labels) {
        let p = row[y as usize].max(1e-12);
        sum += -p.ln();
    }
    Ok(sum / labels.len() as f64)
}

/// One full-gradient SGD step over a batch of labeled sequences. Returns the
/// mean per-frame loss at the pre-update parameters.
pub fn train_step(
    model: &mut SequenceModel,
    batch: &[(&Array2<f64>, &[u8])],
    config: &TrainConfig,
) -> Result<f64> {
    let (mut grad, loss_sum, frames) = model.grad_sum(batch)?;
    if frames == 0 {
        return Ok(0.0);
    }
    let scale = 1.0 / frames as f64;
    let loss = loss_sum * scale;
    if !loss.is_finite() {
        return numerical_err(format!("training diverged: loss = {loss}"));
    }
    for g in grad.iter_mut() {
        *g *= scale;
    }

    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm.is_finite() && norm > config.clip_norm {
        let k = config.clip_norm / norm;
        for g in grad.iter_mut() {
            *g *= k;
        }
    } else if !norm.is_finite() {
        return numerical_err("training diverged: non-finite gradient");
    }

    let mut params = model.params_flat();
    for (p, g) in params.iter_mut().zip(&grad) {
        *p -= config.learning_rate * g;
    }
    model.set_params_flat(&params)?;
    Ok(loss)
}

/// Mean loss of a model on a batch without updating it.
pub fn batch_loss(model: &SequenceModel, batch: &[(&Array2<f64>, &[u8])]) -> Result<f64> {
    let mut sum = 0.0;
    let mut frames = 0usize;
    for (feats, labels) in batch {
        let post = model.forward(feats)?;
        sum += cross_entropy(&post, labels)? * labels.len() as f64;
        frames += labels.len();
    }
    if frames == 0 {
        return Ok(0.0);
    }
    Ok(sum / frames as f64)
}

/// Compare every analytic partial derivative against a central finite
/// difference and return the maximum relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    model: &SequenceModel,
    batch: &[(&Array2<f64>, &[u8])],
    eps: f64,
) -> Result<f64> {
    let (grad, _, frames) = model.grad_sum(batch)?;
    if frames == 0 {
        return Ok(0.0);
    }
    let scale = 1.0 / frames as f64;
    let params = model.params_flat();
    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    for k in 0..params.len() {
        let mut theta = params.clone();
        theta[k] = params[k] + eps;
        probe.set_params_flat(&theta)?;
        let up = batch_loss(&probe, batch)?;
        theta[k] = params[k] - eps;
        probe.set_params_flat(&theta)?;
        let down = batch_loss(&probe, batch)?;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grad[k] * scale;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
