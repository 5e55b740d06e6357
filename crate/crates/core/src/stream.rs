//! Frame-by-frame inference with bit-exact batch equivalence.
//!
//! The stream consumes raw feature frames one at a time and emits final 0/1
//! labels. Stages, in order: feature binning (mean of `n` adjacent frames),
//! optional context stacking (MLP only), speaker-embedding attachment,
//! classifier step, thresholding, prediction expansion, and centered-window
//! majority smoothing with delayed emission. The concatenation of emitted
//! labels equals offline batch inference on the same frames, bit for bit.

use std::collections::VecDeque;

use ndarray::{s, Array1, ArrayView1};

use crate::error::{contract_err, Result};
use crate::nnet::{LstmState, SequenceModel};
use crate::segmenter::smooth_lookahead;
use crate::speaker::IVector;

/// Streaming knobs; `context` applies only to MLP models.
#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub bin: usize,
    pub smooth_window: usize,
    pub theta: f64,
    pub context: usize,
}

/// Per-frame algorithmic latency: binning holds up to n-1 frames, the
/// centered smoothing window needs floor(W/2) future frames, and MLP
/// context stacking needs r future bins of n frames each.
pub fn algorithmic_latency_frames(bin: usize, smooth_window: usize, context: usize) -> usize {
    (bin - 1) + smooth_lookahead(smooth_window) + context * bin
}

enum ClassifierState {
    Mlp,
    Lstm(LstmState),
}

/// Mutable state of one audio stream. One instance per stream; a frozen
/// model may be shared by many streams.
pub struct StreamState<'a> {
    model: &'a SequenceModel,
    ivec: &'a IVector,
    cfg: StreamConfig,
    feat_dim: usize,

    classifier: ClassifierState,

    /// Frames awaiting the current bin (< bin of them).
    bin_buffer: Vec<Array1<f64>>,
    /// Bins still needed as context, keyed off `bins_start`.
    bins: VecDeque<(Array1<f64>, usize)>,
    bins_start: usize,
    bins_total: usize,
    bins_classified: usize,

    /// Raw (pre-smoothing) labels still needed by future windows.
    raw_labels: VecDeque<u8>,
    raw_start: usize,
    total_raw: usize,
    next_emit: usize,

    consumed: usize,
    emitted: usize,
}

impl<'a> StreamState<'a> {
    pub fn new(
        model: &'a SequenceModel,
        ivec: &'a IVector,
        feat_dim: usize,
        cfg: StreamConfig,
    ) -> Result<Self> {
        assert!(cfg.bin >= 1 && cfg.smooth_window >= 1);
        let context = match model {
            SequenceModel::Mlp(_) => cfg.context,
            SequenceModel::Lstm(_) => 0,
        };
        let expected = feat_dim * (2 * context + 1) + ivec.values.len();
        if expected != model.input_dim() {
            return contract_err(format!(
                "model expects input dim {}, stream provides {feat_dim} features x {} context \
                 slots + {}-dim embedding = {expected}",
                model.input_dim(),
                2 * context + 1,
                ivec.values.len()
            ));
        }
        let classifier = match model {
            SequenceModel::Mlp(_) => ClassifierState::Mlp,
            SequenceModel::Lstm(m) => ClassifierState::Lstm(m.init_state()),
        };
        Ok(Self {
            model,
            ivec,
            cfg: StreamConfig { context, ..cfg },
            feat_dim,
            classifier,
            bin_buffer: Vec::new(),
            bins: VecDeque::new(),
            bins_start: 0,
            bins_total: 0,
            bins_classified: 0,
            raw_labels: VecDeque::new(),
            raw_start: 0,
            total_raw: 0,
            next_emit: 0,
            consumed: 0,
            emitted: 0,
        })
    }

    /// Total per-frame latency of this stream's configuration.
    pub fn latency_frames(&self) -> usize {
        algorithmic_latency_frames(self.cfg.bin, self.cfg.smooth_window, self.cfg.context)
    }

    pub fn consumed_frames(&self) -> usize {
        self.consumed
    }

    pub fn emitted_frames(&self) -> usize {
        self.emitted
    }

    /// Feed one raw feature frame; returns labels that became final.
    pub fn push(&mut self, frame: ArrayView1<f64>) -> Result<Vec<u8>> {
        if frame.len() != self.feat_dim {
            return contract_err(format!(
                "expected {}-dimensional frames, got {}",
                self.feat_dim,
                frame.len()
            ));
        }
        self.consumed += 1;
        self.bin_buffer.push(frame.to_owned());
        if self.bin_buffer.len() == self.cfg.bin {
            self.flush_bin();
            self.classify_available(false)?;
        }
        let out = self.emit_ready(false);
        debug_assert!(self.consumed - self.emitted <= self.latency_frames() + self.cfg.bin);
        Ok(out)
    }

    /// Flush the partial bin and all lookahead at end of stream.
    pub fn finish(&mut self) -> Result<Vec<u8>> {
        if !self.bin_buffer.is_empty() {
            self.flush_bin();
        }
        self.classify_available(true)?;
        let out = self.emit_ready(true);
        debug_assert_eq!(self.emitted, self.consumed);
        Ok(out)
    }

    fn flush_bin(&mut self) {
        let members = self.bin_buffer.len();
        let mut acc = Array1::zeros(self.feat_dim);
        for f in &self.bin_buffer {
            acc += f;
        }
        self.bin_buffer.clear();
        self.bins.push_back((acc / members as f64, members));
        self.bins_total += 1;
    }

    /// Classify every bin whose right context is available (or everything,
    /// when flushing). Window indices clamp to the produced bins, matching
    /// offline edge replication.
    fn classify_available(&mut self, flush: bool) -> Result<()> {
        let r = self.cfg.context;
        while self.bins_classified < self.bins_total {
            let b = self.bins_classified;
            if !flush && self.bins_total <= b + r {
                break;
            }
            let members = self.bins[b - self.bins_start].1;
            let label = if r == 0 {
                let feat = self.bins[b - self.bins_start].0.clone();
                self.classify(&feat)?
            } else {
                let mut stacked = Array1::zeros(self.feat_dim * (2 * r + 1));
                for (slot, offset) in (-(r as isize)..=r as isize).enumerate() {
                    let idx = (b as isize + offset).clamp(0, self.bins_total as isize - 1)
                        as usize
                        - self.bins_start;
                    stacked
                        .slice_mut(s![slot * self.feat_dim..(slot + 1) * self.feat_dim])
                        .assign(&self.bins[idx].0);
                }
                self.classify(&stacked)?
            };
            self.push_raw(label, members);
            self.bins_classified += 1;
            // Keep only bins reachable by the next window's left edge.
            let keep_from = self.bins_classified.saturating_sub(r);
            while self.bins_start < keep_from {
                self.bins.pop_front();
                self.bins_start += 1;
            }
        }
        Ok(())
    }

    fn classify(&mut self, acoustic: &Array1<f64>) -> Result<u8> {
        let mut input = Array1::zeros(acoustic.len() + self.ivec.values.len());
        input.slice_mut(s![..acoustic.len()]).assign(acoustic);
        input
            .slice_mut(s![acoustic.len()..])
            .assign(&self.ivec.values);
        let p_speech = match (&mut self.classifier, self.model) {
            (ClassifierState::Mlp, SequenceModel::Mlp(m)) => m.forward_row(input.view())?[1],
            (ClassifierState::Lstm(state), SequenceModel::Lstm(m)) => {
                m.step(state, input.view())?[1]
            }
            _ => unreachable!("classifier state matches model kind"),
        };
        Ok(u8::from(p_speech >= self.cfg.theta))
    }

    fn push_raw(&mut self, label: u8, count: usize) {
        for _ in 0..count {
            self.raw_labels.push_back(label);
            self.total_raw += 1;
        }
    }

    /// Emit every smoothed label whose window is complete (or everything
    /// left, when flushing).
    fn emit_ready(&mut self, flush: bool) -> Vec<u8> {
        let w = self.cfg.smooth_window;
        let future = smooth_lookahead(w) as isize;
        let past = (w - 1) as isize - future;
        let mut out = Vec::new();
        while self.next_emit < self.total_raw {
            let t = self.next_emit as isize;
            if !flush && t + future >= self.total_raw as isize {
                break;
            }
            let mut ones = 0usize;
            for off in -past..=future {
                let idx = (t + off).clamp(0, self.total_raw as isize - 1) as usize;
                ones += self.raw_labels[idx - self.raw_start] as usize;
            }
            out.push(u8::from(2 * ones >= w));
            self.next_emit += 1;
            self.emitted += 1;
            // Drop raw labels no longer reachable by any future window.
            let keep_from = (self.next_emit as isize - past).max(0) as usize;
            while self.raw_start < keep_from {
                self.raw_labels.pop_front();
                self.raw_start += 1;
            }
        }
        out
    }
}
