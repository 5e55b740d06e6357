//! Stacked LSTM frame classifier with full backpropagation through time.
//!
//! Gate equations per layer, with x the layer input and h/c the recurrent
//! state:
//!
//! ```text
//! i = sigmoid(Wxi x + Whi h + bi)      input gate
//! f = sigmoid(Wxf x + Whf h + bf)      forget gate
//! o = sigmoid(Wxo x + Who h + bo)      output gate
//! g = tanh   (Wxg x + Whg h + bg)      cell candidate
//! c' = f * c + i * g
//! h' = o * tanh(c')
//! ```
//!
//! The top layer's hidden state feeds a 2-class softmax output layer.
//! Initial hidden and cell states are zero, so posteriors at frame t depend
//! only on frames 0..=t.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::softmax2;
use crate::error::{contract_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w_xi: Array2<f64>,
    pub w_hi: Array2<f64>,
    pub b_i: Array1<f64>,
    pub w_xf: Array2<f64>,
    pub w_hf: Array2<f64>,
    pub b_f: Array1<f64>,
    pub w_xo: Array2<f64>,
    pub w_ho: Array2<f64>,
    pub b_o: Array1<f64>,
    pub w_xg: Array2<f64>,
    pub w_hg: Array2<f64>,
    pub b_g: Array1<f64>,
}

impl LstmLayer {
    fn new(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut mat = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols.max(1) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        };
        let w_xi = mat(hidden, input_dim);
        let w_hi = mat(hidden, hidden);
        let w_xf = mat(hidden, input_dim);
        let w_hf = mat(hidden, hidden);
        let w_xo = mat(hidden, input_dim);
        let w_ho = mat(hidden, hidden);
        let w_xg = mat(hidden, input_dim);
        let w_hg = mat(hidden, hidden);
        Self {
            w_xi,
            w_hi,
            b_i: Array1::zeros(hidden),
            w_xf,
            w_hf,
            // Forget gate starts open for training stability.
            b_f: Array1::ones(hidden),
            w_xo,
            w_ho,
            b_o: Array1::zeros(hidden),
            w_xg,
            w_hg,
            b_g: Array1::zeros(hidden),
        }
    }

    fn zeros_like(&self) -> Self {
        let z2 = |m: &Array2<f64>| Array2::zeros(m.dim());
        let z1 = |v: &Array1<f64>| Array1::zeros(v.len());
        Self {
            w_xi: z2(&self.w_xi),
            w_hi: z2(&self.w_hi),
            b_i: z1(&self.b_i),
            w_xf: z2(&self.w_xf),
            w_hf: z2(&self.w_hf),
            b_f: z1(&self.b_f),
            w_xo: z2(&self.w_xo),
            w_ho: z2(&self.w_ho),
            b_o: z1(&self.b_o),
            w_xg: z2(&self.w_xg),
            w_hg: z2(&self.w_hg),
            b_g: z1(&self.b_g),
        }
    }

    fn hidden(&self) -> usize {
        self.b_i.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub layers: Vec<LstmLayer>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

/// Recurrent state, one hidden/cell pair per layer.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<Array1<f64>>,
    pub c: Vec<Array1<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-frame, per-layer values kept for backpropagation.
struct StepCache {
    x: Array1<f64>,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    i: Array1<f64>,
    f: Array1<f64>,
    o: Array1<f64>,
    g: Array1<f64>,
    tanh_c: Array1<f64>,
}

impl LstmModel {
    /// Build a stacked LSTM. Weights uniform in +-1/sqrt(fan_in), biases
    /// zero except the forget gate at 1.0.
    pub fn new(input_dim: usize, hidden: usize, num_layers: usize, seed: u64) -> Self {
        assert!(num_layers >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(num_layers);
        let mut dim = input_dim;
        for _ in 0..num_layers {
            layers.push(LstmLayer::new(dim, hidden, &mut rng));
            dim = hidden;
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_out =
            Array2::from_shape_fn((2, hidden), |_| (rng.random::<f64>() * 2.0 - 1.0) * bound);
        Self {
            layers,
            w_out,
            b_out: Array1::zeros(2),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w_xi.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn init_state(&self) -> LstmState {
        LstmState {
            h: self.layers.iter().map(|l| Array1::zeros(l.hidden())).collect(),
            c: self.layers.iter().map(|l| Array1::zeros(l.hidden())).collect(),
        }
    }

    /// Advance one frame, returning class posteriors.
    pub fn step(&self, state: &mut LstmState, row: ArrayView1<f64>) -> Result<[f64; 2]> {
        if row.len() != self.input_dim() {
            return contract_err(format!(
                "input dim {} does not match model input {}",
                row.len(),
                self.input_dim()
            ));
        }
        let mut x = row.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let (h, c) = (&state.h[l], &state.c[l]);
            let i = (layer.w_xi.dot(&x) + layer.w_hi.dot(h) + &layer.b_i).mapv(sigmoid);
            let f = (layer.w_xf.dot(&x) + layer.w_hf.dot(h) + &layer.b_f).mapv(sigmoid);
            let o = (layer.w_xo.dot(&x) + layer.w_ho.dot(h) + &layer.b_o).mapv(sigmoid);
            let g = (layer.w_xg.dot(&x) + layer.w_hg.dot(h) + &layer.b_g).mapv(f64::tanh);
            let c_new = &f * c + &i * &g;
            let h_new = &o * &c_new.mapv(f64::tanh);
            state.c[l] = c_new;
            state.h[l] = h_new.clone();
            x = h_new;
        }
        let z = self.w_out.dot(&x) + &self.b_out;
        Ok(softmax2(z[0], z[1]))
    }

    /// Posteriors for a whole sequence from zero initial state, T x 2.
    pub fn forward(&self, feats: &Array2<f64>) -> Result<Array2<f64>> {
        let mut state = self.init_state();
        let mut out = Array2::zeros((feats.nrows(), 2));
        for (t, row) in feats.rows().into_iter().enumerate() {
            let p = self.step(&mut state, row)?;
            out[[t, 0]] = p[0];
            out[[t, 1]] = p[1];
        }
        Ok(out)
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LstmLayer::zeros_like).collect(),
            w_out: Array2::zeros(self.w_out.dim()),
            b_out: Array1::zeros(self.b_out.len()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params_flat().len()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w_xi.iter());
            out.extend(l.w_hi.iter());
            out.extend(l.b_i.iter());
            out.extend(l.w_xf.iter());
            out.extend(l.w_hf.iter());
            out.extend(l.b_f.iter());
            out.extend(l.w_xo.iter());
            out.extend(l.w_ho.iter());
            out.extend(l.b_o.iter());
            out.extend(l.w_xg.iter());
            out.extend(l.w_hg.iter());
            out.extend(l.b_g.iter());
        }
        out.extend(self.w_out.iter());
        out.extend(self.b_out.iter());
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        let mut it = params.iter();
        for l in &mut self.layers {
            for arr in [
                &mut l.w_xi, &mut l.w_hi, // weights
            ] {
                for v in arr.iter_mut() {
                    *v = *it.next().unwrap();
                }
            }
            for v in l.b_i.iter_mut() {
                *v = *it.next().unwrap();
            }
            for arr in [&mut l.w_xf, &mut l.w_hf] {
                for v in arr.iter_mut() {
                    *v = *it.next().unwrap();
                }
            }
            for v in l.b_f.iter_mut() {
                *v = *it.next().unwrap();
            }
            for arr in [&mut l.w_xo, &mut l.w_ho] {
                for v in arr.iter_mut() {
                    *v = *it.next().unwrap();
                }
            }
            for v in l.b_o.iter_mut() {
                *v = *it.next().unwrap();
            }
            for arr in [&mut l.w_xg, &mut l.w_hg] {
                for v in arr.iter_mut() {
                    *v = *it.next().unwrap();
                }
            }
            for v in l.b_g.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        for v in self.w_out.iter_mut() {
            *v = *it.next().unwrap();
        }
        for v in self.b_out.iter_mut() {
            *v = *it.next().unwrap();
        }
        debug_assert!(it.next().is_none());
    }

    /// Forward pass keeping everything backpropagation needs.
    fn forward_full(&self, feats: &Array2<f64>) -> Result<(Vec<Vec<StepCache>>, Array2<f64>)> {
        if feats.ncols() != self.input_dim() {
            return contract_err(format!(
                "input dim {} does not match model input {}",
                feats.ncols(),
                self.input_dim()
            ));
        }
        let t_len = feats.nrows();
        let mut state = self.init_state();
        let mut caches: Vec<Vec<StepCache>> = Vec::with_capacity(t_len);
        let mut logits = Array2::zeros((t_len, 2));
        for t in 0..t_len {
            let mut x = feats.row(t).to_owned();
            let mut per_layer = Vec::with_capacity(self.layers.len());
            for (l, layer) in self.layers.iter().enumerate() {
                let h_prev = state.h[l].clone();
                let c_prev = state.c[l].clone();
                let i = (layer.w_xi.dot(&x) + layer.w_hi.dot(&h_prev) + &layer.b_i).mapv(sigmoid);
                let f = (layer.w_xf.dot(&x) + layer.w_hf.dot(&h_prev) + &layer.b_f).mapv(sigmoid);
                let o = (layer.w_xo.dot(&x) + layer.w_ho.dot(&h_prev) + &layer.b_o).mapv(sigmoid);
                let g =
                    (layer.w_xg.dot(&x) + layer.w_hg.dot(&h_prev) + &layer.b_g).mapv(f64::tanh);
                let c_new = &f * &c_prev + &i * &g;
                let tanh_c = c_new.mapv(f64::tanh);
                let h_new = &o * &tanh_c;
                per_layer.push(StepCache {
                    x: x.clone(),
                    h_prev,
                    c_prev,
                    i,
                    f,
                    o,
                    g,
                    tanh_c,
                });
                state.c[l] = c_new;
                state.h[l] = h_new.clone();
                x = h_new;
            }
            let z = self.w_out.dot(&x) + &self.b_out;
            logits[[t, 0]] = z[0];
            logits[[t, 1]] = z[1];
            caches.push(per_layer);
        }
        Ok((caches, logits))
    }

    /// Gradient of the summed cross-entropy over a batch of labeled
    /// sequences (full backpropagation through time, no truncation).
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
            let t_len = feats.nrows();
            if t_len == 0 {
                continue;
            }
            frames += t_len;
            let (caches, logits) = self.forward_full(feats)?;

            let n_layers = self.layers.len();
            let mut dh_next: Vec<Array1<f64>> =
                self.layers.iter().map(|l| Array1::zeros(l.hidden())).collect();
            let mut dc_next: Vec<Array1<f64>> =
                self.layers.iter().map(|l| Array1::zeros(l.hidden())).collect();

            for t in (0..t_len).rev() {
                let p = softmax2(logits[[t, 0]], logits[[t, 1]]);
                let y = labels[t] as usize;
                loss_sum += -(p[y].max(1e-12)).ln();
                let dlogits = Array1::from_vec(vec![
                    p[0] - f64::from(u8::from(y == 0)),
                    p[1] - f64::from(u8::from(y == 1)),
                ]);

                let h_top = {
                    let cache = &caches[t][n_layers - 1];
                    &cache.o * &cache.tanh_c
                };
                add_outer(&mut grad.w_out, &dlogits, &h_top);
                grad.b_out += &dlogits;

                // Gradient flowing into the layer above's input at time t.
                let mut dx_from_above = self.w_out.t().dot(&dlogits);

                for l in (0..n_layers).rev() {
                    let cache = &caches[t][l];
                    let layer = &self.layers[l];

                    let dh = &dh_next[l] + &dx_from_above;
                    let dtanh_c = cache.tanh_c.mapv(|v| 1.0 - v * v);
                    let dc = &dc_next[l] + &(&dh * &cache.o * &dtanh_c);

                    let do_ = &dh * &cache.tanh_c;
                    let di = &dc * &cache.g;
                    let df = &dc * &cache.c_prev;
                    let dg = &dc * &cache.i;

                    let da_i = &di * &cache.i.mapv(|v| v * (1.0 - v));
                    let da_f = &df * &cache.f.mapv(|v| v * (1.0 - v));
                    let da_o = &do_ * &cache.o.mapv(|v| v * (1.0 - v));
                    let da_g = &dg * &cache.g.mapv(|v| 1.0 - v * v);

                    let gl = &mut grad.layers[l];
                    add_outer(&mut gl.w_xi, &da_i, &cache.x);
                    add_outer(&mut gl.w_hi, &da_i, &cache.h_prev);
                    gl.b_i += &da_i;
                    add_outer(&mut gl.w_xf, &da_f, &cache.x);
                    add_outer(&mut gl.w_hf, &da_f, &cache.h_prev);
                    gl.b_f += &da_f;
                    add_outer(&mut gl.w_xo, &da_o, &cache.x);
                    add_outer(&mut gl.w_ho, &da_o, &cache.h_prev);
                    gl.b_o += &da_o;
                    add_outer(&mut gl.w_xg, &da_g, &cache.x);
                    add_outer(&mut gl.w_hg, &da_g, &cache.h_prev);
                    gl.b_g += &da_g;

                    dh_next[l] = layer.w_hi.t().dot(&da_i)
                        + layer.w_hf.t().dot(&da_f)
                        + layer.w_ho.t().dot(&da_o)
                        + layer.w_hg.t().dot(&da_g);
                    dc_next[l] = &dc * &cache.f;

                    if l > 0 {
                        dx_from_above = layer.w_xi.t().dot(&da_i)
                            + layer.w_xf.t().dot(&da_f)
                            + layer.w_xo.t().dot(&da_o)
                            + layer.w_xg.t().dot(&da_g);
                    }
                }
            }
        }
        Ok((grad.params_flat(), loss_sum, frames))
    }
}

/// acc += u v^T
fn add_outer(acc: &mut Array2<f64>, u: &Array1<f64>, v: &Array1<f64>) {
    for (i, &ui) in u.iter().enumerate() {
        let mut row = acc.row_mut(i);
        let row = row.as_slice_mut().expect("row-major layout");
        for (j, &vj) in v.iter().enumerate() {
            row[j] += ui * vj;
        }
    }
}
