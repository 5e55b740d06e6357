//! Speaker modeling: diagonal-covariance GMM-UBM, total-variability
//! i-vector extraction, and PLDA / cosine scoring back-ends.

mod gmm;
mod plda;
mod tv;

pub use gmm::{bw_stats, pool_stats, train_ubm, BwStats, GmmUbm, UbmFit};
pub use plda::{cosine_score, length_normalize, plda_score, train_plda, PldaModel};
pub use tv::{extract_ivector, train_tv, TvFit, TvMatrix};

use ndarray::Array1;

/// Fixed-length speaker embedding: the posterior mean of the latent factor
/// in the total-variability model.
#[derive(Debug, Clone, PartialEq)]
pub struct IVector {
    pub values: Array1<f64>,
    pub normalized: bool,
}

impl IVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
