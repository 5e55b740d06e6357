//! Feed-forward frame classifier: tanh hidden layers, 2-class softmax output.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::softmax2;
use crate::error::{contract_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Weight (out x in) and bias per layer; the last layer has 2 outputs.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpModel {
    /// Build a classifier with the given hidden widths. Weights are uniform
    /// in +-1/sqrt(fan_in), biases zero.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &width in hidden.iter().chain(std::iter::once(&2)) {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let w = Array2::from_shape_fn((width, fan_in), |_| {
                (rng.random::<f64>() * 2.0 - 1.0) * bound
            });
            layers.push((w, Array1::zeros(width)));
            fan_in = width;
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.ncols()
    }

    /// Posteriors for a single frame.
    pub fn forward_row(&self, row: ArrayView1<f64>) -> Result<[f64; 2]> {
        if row.len() != self.input_dim() {
            return contract_err(format!(
                "input dim {} does not match first layer {}",
                row.len(),
                self.input_dim()
            ));
        }
        let mut a = row.to_owned();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let z = w.dot(&a) + b;
            a = if i + 1 == self.layers.len() {
                z
            } else {
                z.mapv(f64::tanh)
            };
        }
        Ok(softmax2(a[0], a[1]))
    }

    /// Posteriors for every frame, T x 2.
    pub fn forward(&self, feats: &Array2<f64>) -> Result<Array2<f64>> {
        let (acts, logits) = self.forward_cached(feats)?;
        drop(acts);
        let mut out = Array2::zeros((logits.nrows(), 2));
        for (t, row) in logits.rows().into_iter().enumerate() {
            let p = softmax2(row[0], row[1]);
            out[[t, 0]] = p[0];
            out[[t, 1]] = p[1];
        }
        Ok(out)
    }

    /// Forward pass keeping hidden activations (input included as entry 0).
    fn forward_cached(&self, feats: &Array2<f64>) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        if feats.ncols() != self.input_dim() {
            return contract_err(format!(
                "input dim {} does not match first layer {}",
                feats.ncols(),
                self.input_dim()
            ));
        }
        let mut acts = vec![feats.to_owned()];
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let z = acts.last().unwrap().dot(&w.t()) + b;
            if i + 1 == self.layers.len() {
                return Ok((acts, z));
            }
            acts.push(z.mapv(f64::tanh));
        }
        unreachable!("model always has an output layer")
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.len())))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        let mut it = params.iter();
        for (w, b) in &mut self.layers {
            for v in w.iter_mut() {
                *v = *it.next().unwrap();
            }
            for v in b.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        debug_assert!(it.next().is_none());
    }

    /// Gradient of the summed cross-entropy over a batch of labeled frame
    /// matrices, plus the summed loss and total frame count.
    pub(super) fn grad_sum(
        &self,
        batch: &[(&Array2<f64>, &[u8])],
    ) -> Result<(Vec<f64>, f64, usize)> {
        let mut grad = self.zeros_like();
        let mut loss_sum = 0.0;
        let mut frames = 0usize;
        for (feats, labels) in batch {
            if feats.nrows() != labels.len() {
                return contract_err(format!(
                    "{} frames but {} labels",
                    feats.nrows(),
                    labels.len()
                ));
            }
            if feats.nrows() == 0 {
                continue;
            }
            let (acts, logits) = self.forward_cached(feats)?;
            let t = logits.nrows();
            frames += t;

            // d(sum CE)/d(logits) = softmax - onehot, per frame.
            let mut delta = Array2::zeros((t, 2));
            for ti in 0..t {
                let p = softmax2(logits[[ti, 0]], logits[[ti, 1]]);
                let y = labels[ti] as usize;
                loss_sum += -(p[y].max(1e-12)).ln();
                delta[[ti, 0]] = p[0] - f64::from(u8::from(y == 0));
                delta[[ti, 1]] = p[1] - f64::from(u8::from(y == 1));
            }

            for layer in (0..self.layers.len()).rev() {
                let input = &acts[layer];
                let (gw, gb) = &mut grad.layers[layer];
                *gw += &delta.t().dot(input);
                *gb += &delta.sum_axis(Axis(0));
                if layer > 0 {
                    let da = delta.dot(&self.layers[layer].0);
                    // Through tanh of the layer below.
                    delta = da * acts[layer].mapv(|a| 1.0 - a * a);
                }
            }
        }
        Ok((grad.params_flat(), loss_sum, frames))
    }
}
