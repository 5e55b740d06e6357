//! Binary frame classifiers (MLP and LSTM) with exact analytic gradients,
//! cross-entropy training, and speaker-conditioned input assembly.

mod lstm;
mod mlp;
mod train;

pub use lstm::{LstmLayer, LstmModel, LstmState};
pub use mlp::MlpModel;
pub use train::{cross_entropy, grad_check, train_step, TrainConfig};

use ndarray::Array2;

use crate::error::{contract_err, Result};
use crate::feats::FeatureMatrix;
use crate::speaker::IVector;

/// Numerically stable 2-class softmax.
pub(crate) fn softmax2(z0: f64, z1: f64) -> [f64; 2] {
    let m = z0.max(z1);
    let e0 = (z0 - m).exp();
    let e1 = (z1 - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Concatenate a fixed speaker embedding to every frame: row t becomes
/// `[x_t, ivec]`, so D' = D + d.
pub fn attach_speaker(feats: &FeatureMatrix, ivec: &IVector) -> FeatureMatrix {
    let (t, d) = (feats.num_frames(), feats.dim());
    let dv = ivec.values.len();
    let mut data = Array2::zeros((t, d + dv));
    for ti in 0..t {
        for j in 0..d {
            data[[ti, j]] = feats.data[[ti, j]];
        }
        for j in 0..dv {
            data[[ti, d + j]] = ivec.values[j];
        }
    }
    FeatureMatrix {
        data,
        frame_shift_ms: feats.frame_shift_ms,
        frame_length_ms: feats.frame_length_ms,
    }
}

/// A frame classifier of either architecture, behind one training and
/// inference surface.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceModel {
    Mlp(MlpModel),
    Lstm(LstmModel),
}

impl SequenceModel {
    pub fn input_dim(&self) -> usize {
        match self {
            SequenceModel::Mlp(m) => m.input_dim(),
            SequenceModel::Lstm(m) => m.input_dim(),
        }
    }

    /// Per-frame class posteriors, one `(p_nonspeech, p_speech)` row per
    /// input frame.
    pub fn forward(&self, feats: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            SequenceModel::Mlp(m) => m.forward(feats),
            SequenceModel::Lstm(m) => m.forward(feats),
        }
    }

    /// Speech posteriors only.
    pub fn speech_posteriors(&self, feats: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.forward(feats)?.column(1).to_vec())
    }

    pub fn param_count(&self) -> usize {
        match self {
            SequenceModel::Mlp(m) => m.param_count(),
            SequenceModel::Lstm(m) => m.param_count(),
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            SequenceModel::Mlp(m) => m.params_flat(),
            SequenceModel::Lstm(m) => m.params_flat(),
        }
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return contract_err(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            ));
        }
        match self {
            SequenceModel::Mlp(m) => m.set_params_flat(params),
            SequenceModel::Lstm(m) => m.set_params_flat(params),
        }
        Ok(())
    }

    /// Gradient of the summed cross-entropy over a batch, flat in parameter
    /// order, together with the summed loss and total frame count.
    pub(crate) fn grad_sum(&self, batch: &[(&Array2<f64>, &[u8])]) -> Result<(Vec<f64>, f64, usize)> {
        match self {
            SequenceModel::Mlp(m) => m.grad_sum(batch),
            SequenceModel::Lstm(m) => m.grad_sum(batch),
        }
    }
}
