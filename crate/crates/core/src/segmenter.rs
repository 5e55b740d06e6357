//! Frame decisions and rule-based post-processing: thresholding, sliding
//! window smoothing, short-gap/short-segment merging, and conversion between
//! per-frame labels and segment lists.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{contract_err, data_err, Result};

/// Per-frame 0/1 decisions with the grid they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSeq {
    pub values: Vec<u8>,
    pub frame_shift_ms: f64,
}

impl LabelSeq {
    pub fn new(values: Vec<u8>, frame_shift_ms: f64) -> Self {
        debug_assert!(values.iter().all(|&v| v <= 1));
        Self {
            values,
            frame_shift_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Half-open frame range [start, end).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Sorted, non-overlapping, non-adjacent segments.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SegmentList {
    segments: Vec<Segment>,
}

impl SegmentList {
    /// Build a canonical list. Segments are sorted and touching segments are
    /// coalesced; strictly overlapping input is a contract violation.
    pub fn try_new(mut segments: Vec<Segment>) -> Result<Self> {
        if segments.iter().any(|s| s.start >= s.end) {
            return contract_err("segment with start >= end");
        }
        segments.sort_by_key(|s| s.start);
        let mut canonical: Vec<Segment> = Vec::with_capacity(segments.len());
        for seg in segments {
            match canonical.last_mut() {
                Some(prev) if seg.start < prev.end => {
                    return contract_err(format!(
                        "overlapping segments [{},{}) and [{},{})",
                        prev.start, prev.end, seg.start, seg.end
                    ));
                }
                Some(prev) if seg.start == prev.end => prev.end = seg.end,
                _ => canonical.push(seg),
            }
        }
        Ok(Self {
            segments: canonical,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn starts(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.start).collect()
    }

    pub fn ends(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.end).collect()
    }
}

/// Binarize speech posteriors: label 1 iff p_speech >= theta.
pub fn threshold(posteriors: &[f64], theta: f64, frame_shift_ms: f64) -> LabelSeq {
    let values = posteriors.iter().map(|&p| u8::from(p >= theta)).collect();
    LabelSeq::new(values, frame_shift_ms)
}

/// Lookahead (in frames) introduced by a centered window of `w` frames.
///
/// The window around frame t spans [t - (w-1)/2, t + w/2] (future-heavy for
/// even w), so w = 1 adds no delay and w = 10 adds 5 frames.
pub fn smooth_lookahead(w: usize) -> usize {
    w / 2
}

/// Centered majority-vote smoothing over a window of `w` frames.
///
/// Windows are clamped to the sequence (edge replication); ties, which can
/// only occur for even `w`, resolve to speech.
pub fn smooth(labels: &LabelSeq, w: usize) -> LabelSeq {
    assert!(w >= 1, "window must be >= 1");
    if w == 1 || labels.is_empty() {
        return labels.clone();
    }
    let t = labels.len();
    let future = smooth_lookahead(w) as isize;
    let past = (w - 1) as isize - future;
    let mut out = Vec::with_capacity(t);
    for ti in 0..t as isize {
        let mut ones = 0usize;
        for off in -past..=future {
            let idx = (ti + off).clamp(0, t as isize - 1) as usize;
            ones += labels.values[idx] as usize;
        }
        out.push(u8::from(2 * ones >= w));
    }
    LabelSeq::new(out, labels.frame_shift_ms)
}

/// Fill non-speech gaps strictly shorter than `min_gap` frames between two
/// speech segments, then remove speech segments strictly shorter than
/// `min_speech` frames. The fill-then-remove order is fixed.
pub fn merge_segments(labels: &LabelSeq, min_gap: usize, min_speech: usize) -> LabelSeq {
    let mut values = labels.values.clone();
    let t = values.len();

    if min_gap > 0 {
        let segs = runs_of_ones(&values);
        for pair in segs.windows(2) {
            let gap = pair[1].start - pair[0].end;
            if gap < min_gap {
                for v in values[pair[0].end..pair[1].start].iter_mut() {
                    *v = 1;
                }
            }
        }
    }

    if min_speech > 0 {
        let segs = runs_of_ones(&values);
        for seg in segs {
            if seg.len() < min_speech {
                for v in values[seg.start..seg.end].iter_mut() {
                    *v = 0;
                }
            }
        }
    }

    debug_assert_eq!(values.len(), t);
    LabelSeq::new(values, labels.frame_shift_ms)
}

fn runs_of_ones(values: &[u8]) -> Vec<Segment> {
    let mut segs = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (v, start) {
            (1, None) => start = Some(i),
            (0, Some(s)) => {
                segs.push(Segment { start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segs.push(Segment {
            start: s,
            end: values.len(),
        });
    }
    segs
}

/// Extract the speech segments of a label sequence.
pub fn to_segments(labels: &LabelSeq) -> SegmentList {
    SegmentList {
        segments: runs_of_ones(&labels.values),
    }
}

/// Rebuild a label sequence of `total` frames from segments.
pub fn from_segments(segs: &SegmentList, total: usize, frame_shift_ms: f64) -> Result<LabelSeq> {
    let mut values = vec![0u8; total];
    for seg in segs.segments() {
        if seg.end > total {
            return contract_err(format!(
                "segment [{},{}) exceeds {total} frames",
                seg.start, seg.end
            ));
        }
        for v in values[seg.start..seg.end].iter_mut() {
            *v = 1;
        }
    }
    Ok(LabelSeq::new(values, frame_shift_ms))
}

/// Segment kinds carried by the interchange label file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SegLabel {
    /// Any speech, regardless of speaker.
    Speech,
    /// Speech from the target speaker.
    Target,
}

impl fmt::Display for SegLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegLabel::Speech => write!(f, "speech"),
            SegLabel::Target => write!(f, "target"),
        }
    }
}

/// Parse a segment label file: one `<utt-id> <start> <end> <label>` line per
/// segment, `#` comments ignored. Returns per-utterance segments grouped by
/// label kind.
pub fn read_segment_file(path: &Path) -> Result<BTreeMap<String, Vec<(Segment, SegLabel)>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out: BTreeMap<String, Vec<(Segment, SegLabel)>> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return data_err(format!(
                "{}:{}: expected `<utt-id> <start> <end> <label>`, got {:?}",
                path.display(),
                lineno + 1,
                raw
            ));
        }
        let start: usize = fields[1].parse().map_err(|_| {
            crate::error::EngineError::Data(format!(
                "{}:{}: bad start frame {:?}",
                path.display(),
                lineno + 1,
                fields[1]
            ))
        })?;
        let end: usize = fields[2].parse().map_err(|_| {
            crate::error::EngineError::Data(format!(
                "{}:{}: bad end frame {:?}",
                path.display(),
                lineno + 1,
                fields[2]
            ))
        })?;
        let label = match fields[3] {
            "speech" => SegLabel::Speech,
            "target" => SegLabel::Target,
            other => {
                return data_err(format!(
                    "{}:{}: unknown label {other:?} (expected speech|target)",
                    path.display(),
                    lineno + 1
                ))
            }
        };
        if start >= end {
            return data_err(format!(
                "{}:{}: empty segment [{start},{end})",
                path.display(),
                lineno + 1
            ));
        }
        out.entry(fields[0].to_string())
            .or_default()
            .push((Segment { start, end }, label));
    }
    Ok(out)
}

/// Write segments in the interchange format, sorted by start frame.
pub fn write_segment_file(
    path: &Path,
    entries: &[(String, Segment, SegLabel)],
) -> Result<()> {
    let mut sorted: Vec<&(String, Segment, SegLabel)> = entries.iter().collect();
    sorted.sort_by_key(|(id, seg, label)| (id.clone(), seg.start, *label));
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, seg, label) in sorted {
        writeln!(file, "{id} {} {} {label}", seg.start, seg.end)?;
    }
    Ok(())
}

/// Collect the segments of a given kind for one utterance.
pub fn segments_of(
    map: &BTreeMap<String, Vec<(Segment, SegLabel)>>,
    utt: &str,
    kind: SegLabel,
) -> Result<SegmentList> {
    let segs = map
        .get(utt)
        .map(|v| {
            v.iter()
                .filter(|(_, l)| *l == kind)
                .map(|(s, _)| *s)
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();
    SegmentList::try_new(segs)
}
