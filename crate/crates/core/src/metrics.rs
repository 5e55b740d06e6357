//! Frame-level and segment-level evaluation.
//!
//! Frame level: accuracy, precision, recall, F1 over the binary target-speech
//! labels. Segment level: start/end boundary accuracy within a frame
//! tolerance, border precision (segment-count integrity), and their harmonic
//! mean with frame accuracy.

use serde::Serialize;

use crate::error::{contract_err, Result};
use crate::segmenter::{to_segments, LabelSeq, SegmentList};

/// Default boundary tolerance in frames (100 ms at a 10 ms shift).
pub const DEFAULT_BOUNDARY_TOL: usize = 10;

/// Frame-level confusion counts and derived scores. Class 1 is target speech.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameScores {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl FrameScores {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let total = (tp + fp + tn + fn_) as f64;
        let acc = if total > 0.0 {
            (tp + tn) as f64 / total
        } else {
            0.0
        };
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if tp > 0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            acc,
            precision,
            recall,
            f1,
        }
    }
}

/// Which boundary kind to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Start,
    End,
}

/// Segment-level report: boundary accuracies, border precision, frame
/// accuracy and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JvadReport {
    pub sba: f64,
    pub eba: f64,
    pub bp: f64,
    pub acc: f64,
    pub jvad: f64,
}

/// Harmonic mean of the four sub-criteria; 0 if any sub-criterion is 0.
pub fn harmonic_mean4(sba: f64, eba: f64, bp: f64, acc: f64) -> f64 {
    if sba <= 0.0 || eba <= 0.0 || bp <= 0.0 || acc <= 0.0 {
        0.0
    } else {
        4.0 / (1.0 / sba + 1.0 / eba + 1.0 / bp + 1.0 / acc)
    }
}

/// Frame-level scores of a hypothesis against a reference.
pub fn frame_scores(reference: &LabelSeq, hypothesis: &LabelSeq) -> Result<FrameScores> {
    if reference.len() != hypothesis.len() {
        return contract_err(format!(
            "label length mismatch: ref {} vs hyp {}",
            reference.len(),
            hypothesis.len()
        ));
    }
    if reference.is_empty() {
        return contract_err("cannot score empty label sequences");
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&r, &h) in reference.values.iter().zip(&hypothesis.values) {
        match (r, h) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fn_ += 1,
            _ => unreachable!("labels are 0/1"),
        }
    }
    Ok(FrameScores::from_counts(tp, fp, tn, fn_))
}

/// Maximum one-to-one matching count between two sorted boundary lists where
/// a pair matches iff |r - h| <= tol.
///
/// Because every tolerance window has the same width, scanning both lists in
/// order and pairing each reference with the earliest feasible unmatched
/// hypothesis attains the maximum matching.
pub fn match_boundaries(refs: &[usize], hyps: &[usize], tol: usize) -> usize {
    let mut matched = 0;
    let (mut i, mut j) = (0, 0);
    while i < refs.len() && j < hyps.len() {
        let r = refs[i] as i64;
        let h = hyps[j] as i64;
        if (r - h).abs() <= tol as i64 {
            matched += 1;
            i += 1;
            j += 1;
        } else if h < r {
            j += 1;
        } else {
            i += 1;
        }
    }
    matched
}

/// Fraction of reference boundaries (starts or ends) matched by a hypothesis
/// boundary of the same kind within `tol` frames. 1.0 when the reference has
/// no segments.
pub fn boundary_accuracy(
    ref_segs: &SegmentList,
    hyp_segs: &SegmentList,
    tol: usize,
    which: BoundaryKind,
) -> f64 {
    let (refs, hyps) = match which {
        BoundaryKind::Start => (ref_segs.starts(), hyp_segs.starts()),
        BoundaryKind::End => (ref_segs.ends(), hyp_segs.ends()),
    };
    if refs.is_empty() {
        return 1.0;
    }
    match_boundaries(&refs, &hyps, tol) as f64 / refs.len() as f64
}

/// Border precision: min(N_ref, N_hyp) / max(N_ref, N_hyp) over segment
/// counts. 1.0 when both lists are empty, 0.0 when exactly one is.
pub fn border_precision(ref_segs: &SegmentList, hyp_segs: &SegmentList) -> f64 {
    let (nr, nh) = (ref_segs.len(), hyp_segs.len());
    match (nr, nh) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => nr.min(nh) as f64 / nr.max(nh) as f64,
    }
}

/// Full segment-level report for one utterance.
pub fn jvad(reference: &LabelSeq, hypothesis: &LabelSeq, tol: usize) -> Result<JvadReport> {
    let frames = frame_scores(reference, hypothesis)?;
    let ref_segs = to_segments(reference);
    let hyp_segs = to_segments(hypothesis);
    let sba = boundary_accuracy(&ref_segs, &hyp_segs, tol, BoundaryKind::Start);
    let eba = boundary_accuracy(&ref_segs, &hyp_segs, tol, BoundaryKind::End);
    let bp = border_precision(&ref_segs, &hyp_segs);
    Ok(JvadReport {
        sba,
        eba,
        bp,
        acc: frames.acc,
        jvad: harmonic_mean4(sba, eba, bp, frames.acc),
    })
}

/// Corpus-level pooling: confusion counts are frame-weighted, boundary
/// accuracies pool matched/total boundaries, border precision pools segment
/// counts.
#[derive(Debug, Clone, Default)]
pub struct CorpusAggregator {
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
    matched_starts: usize,
    total_starts: usize,
    matched_ends: usize,
    total_ends: usize,
    ref_segments: usize,
    hyp_segments: usize,
    utterances: usize,
}

impl CorpusAggregator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, reference: &LabelSeq, hypothesis: &LabelSeq, tol: usize) -> Result<()> {
        let f = frame_scores(reference, hypothesis)?;
        self.tp += f.tp;
        self.fp += f.fp;
        self.tn += f.tn;
        self.fn_ += f.fn_;
        let ref_segs = to_segments(reference);
        let hyp_segs = to_segments(hypothesis);
        self.matched_starts += match_boundaries(&ref_segs.starts(), &hyp_segs.starts(), tol);
        self.total_starts += ref_segs.len();
        self.matched_ends += match_boundaries(&ref_segs.ends(), &hyp_segs.ends(), tol);
        self.total_ends += ref_segs.len();
        self.ref_segments += ref_segs.len();
        self.hyp_segments += hyp_segs.len();
        self.utterances += 1;
        Ok(())
    }

    pub fn utterances(&self) -> usize {
        self.utterances
    }

    pub fn frame_scores(&self) -> FrameScores {
        FrameScores::from_counts(self.tp, self.fp, self.tn, self.fn_)
    }

    pub fn jvad_report(&self) -> JvadReport {
        let sba = if self.total_starts == 0 {
            1.0
        } else {
            self.matched_starts as f64 / self.total_starts as f64
        };
        let eba = if self.total_ends == 0 {
            1.0
        } else {
            self.matched_ends as f64 / self.total_ends as f64
        };
        let bp = match (self.ref_segments, self.hyp_segments) {
            (0, 0) => 1.0,
            (0, _) | (_, 0) => 0.0,
            (r, h) => r.min(h) as f64 / r.max(h) as f64,
        };
        let acc = self.frame_scores().acc;
        JvadReport {
            sba,
            eba,
            bp,
            acc,
            jvad: harmonic_mean4(sba, eba, bp, acc),
        }
    }
}
