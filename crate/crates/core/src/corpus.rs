//! Synthetic conversational corpus with exact ground truth, plus the
//! adapter for real labeled corpora.
//!
//! Speakers are harmonic pulse trains shaped by a per-mel-band spectral
//! envelope; utterances alternate voiced bursts and silences, with optional
//! white noise at a configured SNR. Ground truth lives in a sample-level
//! speech mask; frame labels are derived with one shared rule — a frame is
//! speech iff more than half of its 10 ms slot overlaps speech.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::AudioSignal;
use crate::config::EngineConfig;
use crate::error::{config_err, data_err, EngineError, Result};
use crate::feats::{frame_count, mel_filter_center};
use crate::segmenter::{
    to_segments, write_segment_file, LabelSeq, SegLabel, Segment,
};

/// Minimum pairwise L2 distance between speakers' log-envelopes.
const MIN_ENVELOPE_DISTANCE: f64 = 4.0;

/// A synthetic speaker: spectral envelope (one gain per mel band, in
/// [0.05, 1.0]) and fundamental frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub envelope: Vec<f64>,
    pub pitch_hz: f64,
}

/// Single-speaker audio with exact speech ground truth.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub audio: AudioSignal,
    /// Sample-level speech mask, the authoritative ground truth.
    pub speech_mask: Vec<bool>,
    /// Frame labels derived from the mask.
    pub speech_labels: LabelSeq,
}

/// Two concatenated utterances with target-speaker ground truth.
#[derive(Debug, Clone)]
pub struct Conversation {
    pub id: String,
    pub target_speaker_id: String,
    pub audio: AudioSignal,
    pub speech_labels: LabelSeq,
    /// 1 exactly on target-speaker speech frames.
    pub sdvad_labels: LabelSeq,
}

fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the combined words; decorrelates derived streams.
    let mut z = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(index.wrapping_mul(0x94d049bb133111eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn speaker_id_for(index: usize) -> String {
    format!("spk{index:03}")
}

/// Draw one speaker's profile from its derived stream.
fn draw_profile(index: usize, n_mels: usize, seed: u64, attempt: u64) -> SpeakerProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1, (index as u64) << 16 | attempt));
    let lo = 0.05f64.ln();
    let envelope = (0..n_mels)
        .map(|_| (lo + rng.random::<f64>() * (0.0 - lo)).exp())
        .collect();
    let pitch_hz = 85.0 + rng.random::<f64>() * 170.0;
    SpeakerProfile {
        speaker_id: speaker_id_for(index),
        envelope,
        pitch_hz,
    }
}

fn log_envelope_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.ln() - y.ln()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Generate `n` speaker profiles, rejecting draws closer than the minimum
/// envelope distance (or 4 Hz in pitch) to any earlier speaker.
pub fn speaker_profiles(n: usize, n_mels: usize, seed: u64) -> Vec<SpeakerProfile> {
    let mut profiles: Vec<SpeakerProfile> = Vec::with_capacity(n);
    for index in 0..n {
        let mut attempt = 0u64;
        let profile = loop {
            let candidate = draw_profile(index, n_mels, seed, attempt);
            let ok = profiles.iter().all(|p| {
                log_envelope_distance(&p.envelope, &candidate.envelope) >= MIN_ENVELOPE_DISTANCE
                    && (p.pitch_hz - candidate.pitch_hz).abs() >= 4.0
            });
            if ok || attempt > 200 {
                break candidate;
            }
            attempt += 1;
        };
        profiles.push(profile);
    }
    profiles
}

/// Harmonic gain of a profile at a frequency, by linear interpolation over
/// the mel band centers.
fn envelope_gain(profile: &SpeakerProfile, freq: f64, n_mels: usize, sample_rate: u32) -> f64 {
    let centers: Vec<f64> = (0..n_mels)
        .map(|k| mel_filter_center(k, n_mels, sample_rate))
        .collect();
    if freq <= centers[0] {
        return profile.envelope[0];
    }
    if freq >= centers[n_mels - 1] {
        return profile.envelope[n_mels - 1];
    }
    let k = centers.partition_point(|&c| c < freq) - 1;
    let t = (freq - centers[k]) / (centers[k + 1] - centers[k]);
    profile.envelope[k] * (1.0 - t) + profile.envelope[k + 1] * t
}

/// Frame labels from a sample mask: a frame is speech iff strictly more
/// than half of its hop-length slot overlaps the mask.
pub fn mask_to_frame_labels(mask: &[bool], cfg: &EngineConfig) -> LabelSeq {
    let win = cfg.frame_samples();
    let hop = cfg.hop_samples();
    let t = frame_count(mask.len(), win, hop);
    let values = (0..t)
        .map(|ti| {
            let start = ti * hop;
            let end = (start + hop).min(mask.len());
            let covered = mask[start..end].iter().filter(|&&m| m).count();
            u8::from(2 * covered > end - start)
        })
        .collect();
    LabelSeq::new(values, cfg.frame_shift_ms)
}

/// Synthesize one utterance: alternating voiced bursts (0.3-1.5 s) and
/// silences (0.2-0.8 s), white noise at `snr_db` (infinite = clean).
pub fn synth_utterance(
    profile: &SpeakerProfile,
    duration_s: f64,
    snr_db: f64,
    seed: u64,
    cfg: &EngineConfig,
) -> Result<Utterance> {
    if duration_s < 0.5 {
        return config_err(format!("utterance duration {duration_s} s is below 0.5 s"));
    }
    let sr = cfg.sample_rate;
    let hop = cfg.hop_samples();
    // Length rounded up to a whole number of hops so concatenated audio
    // keeps downstream frames aligned with each half's frames.
    let mut total = (duration_s * sr as f64).round() as usize;
    total = total.div_ceil(hop) * hop;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![0.0f64; total];
    let mut mask = vec![false; total];

    // Lay out bursts and silences.
    let mut pos = if rng.random::<f64>() < 0.5 {
        (rng.random_range(0.2..0.8) * sr as f64) as usize
    } else {
        0
    };
    let nyquist = sr as f64 / 2.0;
    while pos < total {
        let burst_len = (rng.random_range(0.3..1.5) * sr as f64) as usize;
        let end = (pos + burst_len).min(total);
        if end - pos > hop {
            // Additive harmonics of the pitch, shaped by the envelope.
            let f0 = profile.pitch_hz;
            let mut harmonics = Vec::new();
            let mut h = 1.0;
            while h * f0 < 0.95 * nyquist {
                let amp = envelope_gain(profile, h * f0, cfg.n_mels, sr);
                let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                harmonics.push((h * f0, amp, phase));
                h += 1.0;
            }
            let gain = 0.8 + rng.random::<f64>() * 0.4;
            let mut rms_acc = 0.0;
            for (offset, s) in samples[pos..end].iter_mut().enumerate() {
                let t = (pos + offset) as f64 / sr as f64;
                let mut v = 0.0;
                for &(freq, amp, phase) in &harmonics {
                    v += amp * (2.0 * std::f64::consts::PI * freq * t + phase).sin();
                }
                *s = v;
                rms_acc += v * v;
            }
            let rms = (rms_acc / (end - pos) as f64).sqrt().max(1e-9);
            let scale = 0.15 * gain / rms;
            for s in samples[pos..end].iter_mut() {
                *s *= scale;
            }
            for m in mask[pos..end].iter_mut() {
                *m = true;
            }
        }
        pos = end + (rng.random_range(0.2..0.8) * sr as f64) as usize;
    }

    // Additive white noise at the requested SNR over speech power.
    if snr_db.is_finite() {
        let speech_power: f64 = samples
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(s, _)| s * s)
            .sum::<f64>()
            / mask.iter().filter(|&&m| m).count().max(1) as f64;
        let noise_std = (speech_power * 10f64.powf(-snr_db / 10.0)).sqrt();
        let normal = Normal::new(0.0, noise_std.max(1e-12)).expect("valid std");
        for s in samples.iter_mut() {
            *s += normal.sample(&mut rng);
        }
    }

    let audio = AudioSignal::new(samples, sr)?;
    let speech_labels = mask_to_frame_labels(&mask, cfg);
    Ok(Utterance {
        id: String::new(),
        speaker_id: profile.speaker_id.clone(),
        audio,
        speech_mask: mask,
        speech_labels,
    })
}

/// Concatenate two utterances of different speakers; frames of the target's
/// half carry label 1 exactly on the target's speech.
pub fn make_conversation(
    utt_a: &Utterance,
    utt_b: &Utterance,
    target: &str,
    cfg: &EngineConfig,
) -> Result<Conversation> {
    if utt_a.speaker_id == utt_b.speaker_id {
        return data_err(format!(
            "conversation halves share speaker {}",
            utt_a.speaker_id
        ));
    }
    if target != utt_a.speaker_id && target != utt_b.speaker_id {
        return data_err(format!(
            "target {target} is neither {} nor {}",
            utt_a.speaker_id, utt_b.speaker_id
        ));
    }
    let mut samples = utt_a.audio.samples.clone();
    samples.extend_from_slice(&utt_b.audio.samples);
    let audio = AudioSignal::new(samples, utt_a.audio.sample_rate)?;

    let mut speech_mask = utt_a.speech_mask.clone();
    speech_mask.extend_from_slice(&utt_b.speech_mask);

    let mut target_mask = vec![false; speech_mask.len()];
    if target == utt_a.speaker_id {
        target_mask[..utt_a.speech_mask.len()].copy_from_slice(&utt_a.speech_mask);
    } else {
        target_mask[utt_a.speech_mask.len()..].copy_from_slice(&utt_b.speech_mask);
    }

    Ok(Conversation {
        id: String::new(),
        target_speaker_id: target.to_string(),
        audio,
        speech_labels: mask_to_frame_labels(&speech_mask, cfg),
        sdvad_labels: mask_to_frame_labels(&target_mask, cfg),
    })
}

/// One conversation row of a split manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub conv_id: String,
    pub wav_path: PathBuf,
    pub label_path: PathBuf,
    pub target_speaker: String,
    pub enroll_utts: Vec<String>,
}

/// One row of the utterance index.
#[derive(Debug, Clone, PartialEq)]
pub struct UttIndexEntry {
    pub id: String,
    pub speaker_id: String,
    pub split: Split,
    pub role: UttRole,
    pub wav_path: PathBuf,
    pub label_path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => data_err(format!("unknown split {other:?}")),
        }
    }
}

/// Whether an utterance is reserved for enrollment or available for
/// conversations and training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UttRole {
    Enroll,
    Train,
}

impl UttRole {
    fn as_str(&self) -> &'static str {
        match self {
            UttRole::Enroll => "enroll",
            UttRole::Train => "train",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "enroll" => Ok(UttRole::Enroll),
            "train" => Ok(UttRole::Train),
            other => data_err(format!("unknown utterance role {other:?}")),
        }
    }
}

/// Build the full synthetic dataset under `out_dir`: per-utterance and
/// per-conversation WAV + segment files, three split manifests, and the
/// utterance index. Pure function of the configuration.
pub fn build_dataset(cfg: &EngineConfig, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let total = cfg.train_speakers + cfg.dev_speakers + cfg.test_speakers;
    std::fs::create_dir_all(out_dir.join("utts"))?;
    std::fs::create_dir_all(out_dir.join("convs"))?;

    let profiles = speaker_profiles(total, cfg.n_mels, cfg.seed);
    let split_of = |idx: usize| {
        if idx < cfg.train_speakers {
            Split::Train
        } else if idx < cfg.train_speakers + cfg.dev_speakers {
            Split::Dev
        } else {
            Split::Test
        }
    };

    // Per-speaker utterances; the first enroll_utts are enrollment-only.
    let mut utterances: Vec<Vec<Utterance>> = Vec::with_capacity(total);
    let mut index_lines: Vec<String> = Vec::new();
    for (si, profile) in profiles.iter().enumerate() {
        let mut per_speaker = Vec::with_capacity(cfg.utts_per_speaker);
        for ui in 0..cfg.utts_per_speaker {
            let useed = mix_seed(cfg.seed, 2, ((si as u64) << 20) | ui as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(useed);
            let duration = cfg.mean_duration_s * (0.7 + rng.random::<f64>() * 0.6);
            let mut utt = synth_utterance(profile, duration, cfg.snr_db, useed ^ 0x55, cfg)?;
            utt.id = format!("{}_utt{ui:02}", profile.speaker_id);

            let wav_rel = PathBuf::from(format!("utts/{}.wav", utt.id));
            let segs_rel = PathBuf::from(format!("utts/{}.segs", utt.id));
            crate::audio::write_wav(&utt.audio, &out_dir.join(&wav_rel))?;
            let entries: Vec<(String, Segment, SegLabel)> = to_segments(&utt.speech_labels)
                .segments()
                .iter()
                .map(|&s| (utt.id.clone(), s, SegLabel::Speech))
                .collect();
            write_segment_file(&out_dir.join(&segs_rel), &entries)?;

            let role = if ui < cfg.enroll_utts {
                UttRole::Enroll
            } else {
                UttRole::Train
            };
            index_lines.push(format!(
                "{} {} {} {} {} {}",
                utt.id,
                profile.speaker_id,
                split_of(si).as_str(),
                role.as_str(),
                wav_rel.display(),
                segs_rel.display()
            ));
            per_speaker.push(utt);
        }
        utterances.push(per_speaker);
    }
    std::fs::write(out_dir.join("utterances.txt"), index_lines.join("\n") + "\n")?;

    // Conversations per split: each speaker appears as target
    // convs_per_speaker times, paired with a random same-split partner.
    let speaker_range = |split: Split| match split {
        Split::Train => 0..cfg.train_speakers,
        Split::Dev => cfg.train_speakers..cfg.train_speakers + cfg.dev_speakers,
        Split::Test => cfg.train_speakers + cfg.dev_speakers..total,
    };
    let mut conv_counter = 0usize;
    for split in [Split::Train, Split::Dev, Split::Test] {
        let range = speaker_range(split);
        let mut manifest_lines: Vec<String> = Vec::new();
        for si in range.clone() {
            for ci in 0..cfg.convs_per_speaker {
                let cseed = mix_seed(cfg.seed, 3, ((si as u64) << 20) | ci as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(cseed);
                let mut partner = rng.random_range(range.clone());
                while partner == si {
                    partner = rng.random_range(range.clone());
                }
                let pick = |rng: &mut ChaCha8Rng| cfg.enroll_utts + rng.random_range(0..cfg.utts_per_speaker - cfg.enroll_utts);
                let target_utt = &utterances[si][pick(&mut rng)];
                let other_utt = &utterances[partner][pick(&mut rng)];
                let target_id = profiles[si].speaker_id.clone();
                let (a, b) = if rng.random::<f64>() < 0.5 {
                    (target_utt, other_utt)
                } else {
                    (other_utt, target_utt)
                };
                let mut conv = make_conversation(a, b, &target_id, cfg)?;
                conv.id = format!("conv{conv_counter:04}_{target_id}");
                conv_counter += 1;

                let wav_rel = PathBuf::from(format!("convs/{}.wav", conv.id));
                let segs_rel = PathBuf::from(format!("convs/{}.segs", conv.id));
                crate::audio::write_wav(&conv.audio, &out_dir.join(&wav_rel))?;
                let mut entries: Vec<(String, Segment, SegLabel)> = Vec::new();
                for &s in to_segments(&conv.speech_labels).segments() {
                    entries.push((conv.id.clone(), s, SegLabel::Speech));
                }
                for &s in to_segments(&conv.sdvad_labels).segments() {
                    entries.push((conv.id.clone(), s, SegLabel::Target));
                }
                write_segment_file(&out_dir.join(&segs_rel), &entries)?;

                let enroll_ids: Vec<String> = (0..cfg.enroll_utts)
                    .map(|ui| format!("{target_id}_utt{ui:02}"))
                    .collect();
                manifest_lines.push(format!(
                    "{} {} {} {} {}",
                    conv.id,
                    wav_rel.display(),
                    segs_rel.display(),
                    target_id,
                    enroll_ids.join(",")
                ));
            }
        }
        std::fs::write(
            out_dir.join(format!("manifest-{}.txt", split.as_str())),
            manifest_lines.join("\n") + "\n",
        )?;
    }
    Ok(())
}

/// Read a conversation manifest; relative paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path)
        .map_err(|e| EngineError::Data(format!("cannot read manifest {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return data_err(format!(
                "{}:{}: expected 5 fields `<conv-id> <wav> <labels> <target> <enroll,...>`",
                path.display(),
                lineno + 1
            ));
        }
        out.push(ManifestEntry {
            conv_id: fields[0].to_string(),
            wav_path: base.join(fields[1]),
            label_path: base.join(fields[2]),
            target_speaker: fields[3].to_string(),
            enroll_utts: fields[4].split(',').map(str::to_string).collect(),
        });
    }
    Ok(out)
}

/// Read the utterance index written by [`build_dataset`].
pub fn read_utterance_index(data_dir: &Path) -> Result<BTreeMap<String, UttIndexEntry>> {
    let path = data_dir.join("utterances.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        EngineError::Data(format!(
            "cannot read utterance index {}: {e}; run `sdvad synth-corpus` first",
            path.display()
        ))
    })?;
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return data_err(format!(
                "{}:{}: expected 6 fields",
                path.display(),
                lineno + 1
            ));
        }
        out.insert(
            fields[0].to_string(),
            UttIndexEntry {
                id: fields[0].to_string(),
                speaker_id: fields[1].to_string(),
                split: Split::parse(fields[2])?,
                role: UttRole::parse(fields[3])?,
                wav_path: data_dir.join(fields[4]),
                label_path: data_dir.join(fields[5]),
            },
        );
    }
    Ok(out)
}

/// Load a real labeled corpus: every utterance in the label file must have
/// `<utt-id>.wav` under `wav_dir`. Segment frame indices are interpreted on
/// a source grid of `source_shift_ms` (use the engine shift when the labels
/// are already on the engine grid) and resampled to the engine grid by the
/// majority-overlap rule.
pub fn load_real_corpus(
    wav_dir: &Path,
    label_file: &Path,
    source_shift_ms: f64,
    cfg: &EngineConfig,
) -> Result<Vec<Utterance>> {
    if !(source_shift_ms > 0.0) {
        return config_err("source frame shift must be positive");
    }
    let segments = crate::segmenter::read_segment_file(label_file)?;
    let mut out = Vec::new();
    for (utt_id, segs) in &segments {
        let wav_path = wav_dir.join(format!("{utt_id}.wav"));
        if !wav_path.exists() {
            return data_err(format!(
                "label file names utterance {utt_id:?} but {} does not exist",
                wav_path.display()
            ));
        }
        let audio = crate::audio::read_wav(&wav_path)?;
        let mut mask = vec![false; audio.samples.len()];
        for (seg, label) in segs {
            if *label != SegLabel::Speech {
                continue;
            }
            let start_s = seg.start as f64 * source_shift_ms / 1000.0;
            let end_s = seg.end as f64 * source_shift_ms / 1000.0;
            let n = mask.len();
            let a = ((start_s * audio.sample_rate as f64).round() as usize).min(n);
            let b = ((end_s * audio.sample_rate as f64).round() as usize).min(n);
            for m in mask[a..b.max(a)].iter_mut() {
                *m = true;
            }
        }
        let speech_labels = mask_to_frame_labels(&mask, cfg);
        out.push(Utterance {
            id: utt_id.clone(),
            speaker_id: String::new(),
            audio,
            speech_mask: mask,
            speech_labels,
        });
    }
    Ok(out)
}
