//! End-to-end recipes behind the CLI: corpus synthesis, UBM/TV/PLDA and
//! classifier training, speaker-dependent inference (batch or streaming),
//! the two-stage VAD/SV baseline, and JSON evaluation reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audio::{read_audio, AudioSignal};
use crate::config::EngineConfig;
use crate::corpus::{read_manifest, read_utterance_index, ManifestEntry, Split, UttIndexEntry, UttRole};
use crate::error::{contract_err, data_err, EngineError, Result};
use crate::feats::{
    bin_features, bin_labels, context_window, expand_predictions, extract_logmel, extract_mfcc,
    frame_count, FeatureMatrix,
};
use crate::metrics::{CorpusAggregator, FrameScores, JvadReport};
use crate::model_io;
use crate::nnet::{attach_speaker, train_step, LstmModel, MlpModel, SequenceModel, TrainConfig};
use crate::segmenter::{
    from_segments, merge_segments, read_segment_file, segments_of, smooth, threshold,
    to_segments, write_segment_file, LabelSeq, SegLabel, Segment,
};
use crate::speaker::{
    bw_stats, extract_ivector, length_normalize, plda_score, pool_stats, train_plda, train_tv,
    train_ubm, GmmUbm, IVector, PldaModel, TvMatrix,
};
use crate::stream::{StreamConfig, StreamState};

/// Classifier architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Mlp,
    Lstm,
}

impl Arch {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Arch::Mlp),
            "lstm" => Ok(Arch::Lstm),
            other => Err(EngineError::Config(format!(
                "unknown architecture {other:?} (expected mlp|lstm)"
            ))),
        }
    }
}

fn require(path: &Path, what: &str, stage: &str) -> Result<()> {
    if !path.exists() {
        return data_err(format!(
            "{what} {} not found; run `sdvad {stage}` first",
            path.display()
        ));
    }
    Ok(())
}

pub fn load_ubm_required(path: &Path) -> Result<GmmUbm> {
    require(path, "UBM model", "train-ubm")?;
    model_io::load_ubm(path)
}

pub fn load_tv_required(path: &Path) -> Result<TvMatrix> {
    require(path, "total-variability model", "train-tv")?;
    model_io::load_tv(path)
}

pub fn load_plda_required(path: &Path) -> Result<PldaModel> {
    require(path, "PLDA model", "train-plda")?;
    model_io::load_plda(path)
}

fn logmel_of(audio: &AudioSignal, cfg: &EngineConfig) -> Result<FeatureMatrix> {
    extract_logmel(audio, cfg.n_mels, cfg.frame_length_ms, cfg.frame_shift_ms)
}

fn mfcc_of(audio: &AudioSignal, cfg: &EngineConfig) -> Result<FeatureMatrix> {
    extract_mfcc(
        audio,
        cfg.n_ceps,
        cfg.n_mels,
        cfg.frame_length_ms,
        cfg.frame_shift_ms,
    )
}

/// Empty embedding: attach_speaker with it is the identity, which lets the
/// speaker-independent VAD path share the SDVAD input assembly.
fn no_ivector() -> IVector {
    IVector {
        values: ndarray::Array1::zeros(0),
        normalized: false,
    }
}

/// Shared batch-side input assembly: bin, stack context (MLP only), then
/// attach the speaker embedding. Returns the model inputs and the original
/// frame count.
pub fn assemble_inputs(
    feats: &FeatureMatrix,
    bin: usize,
    context: usize,
    ivec: &IVector,
) -> Result<(Array2<f64>, usize)> {
    let orig_len = feats.num_frames();
    let binned = bin_features(feats, bin)?;
    let ctx = if context > 0 {
        context_window(&binned, context)
    } else {
        binned
    };
    Ok((attach_speaker(&ctx, ivec).data, orig_len))
}

/// Context radius implied by a model's input dimension given the acoustic
/// dimension and embedding dimension.
pub fn context_for_model(
    model: &SequenceModel,
    acoustic_dim: usize,
    embedding_dim: usize,
) -> Result<usize> {
    match model {
        SequenceModel::Lstm(_) => {
            if model.input_dim() != acoustic_dim + embedding_dim {
                return contract_err(format!(
                    "LSTM expects input {} but features + embedding give {}",
                    model.input_dim(),
                    acoustic_dim + embedding_dim
                ));
            }
            Ok(0)
        }
        SequenceModel::Mlp(_) => {
            let stacked = model.input_dim().checked_sub(embedding_dim).ok_or_else(|| {
                EngineError::Contract("model input smaller than embedding".into())
            })?;
            if stacked % acoustic_dim != 0 || (stacked / acoustic_dim) % 2 == 0 {
                return contract_err(format!(
                    "MLP input {} is not acoustic dim {acoustic_dim} times an odd context width \
                     plus embedding dim {embedding_dim}",
                    model.input_dim()
                ));
            }
            Ok((stacked / acoustic_dim - 1) / 2)
        }
    }
}

/// Pooled-enrollment i-vector for one speaker, length-normalized.
pub fn enrollment_ivector(
    enroll_ids: &[String],
    index: &BTreeMap<String, UttIndexEntry>,
    ubm: &GmmUbm,
    tv: &TvMatrix,
    cfg: &EngineConfig,
) -> Result<IVector> {
    if enroll_ids.is_empty() {
        return data_err("no enrollment utterances listed for the target speaker");
    }
    let mut stats = Vec::new();
    for id in enroll_ids {
        let entry = index.get(id).ok_or_else(|| {
            EngineError::Data(format!("enrollment utterance {id:?} missing from the index"))
        })?;
        let audio = read_audio(&entry.wav_path, cfg.sample_rate)?;
        stats.push(bw_stats(&mfcc_of(&audio, cfg)?, ubm)?);
    }
    let refs: Vec<&_> = stats.iter().collect();
    let pooled = pool_stats(&refs)?;
    length_normalize(&extract_ivector(&pooled, tv, ubm)?)
}

fn train_split_entries(
    index: &BTreeMap<String, UttIndexEntry>,
    split: Split,
    role: Option<UttRole>,
) -> Vec<&UttIndexEntry> {
    index
        .values()
        .filter(|e| e.split == split && role.map_or(true, |r| e.role == r))
        .collect()
}

/// Reference target labels of a conversation, on the frame grid of its
/// audio.
pub fn conversation_ref_labels(entry: &ManifestEntry, cfg: &EngineConfig) -> Result<LabelSeq> {
    let audio = read_audio(&entry.wav_path, cfg.sample_rate)?;
    let total = frame_count(audio.samples.len(), cfg.frame_samples(), cfg.hop_samples());
    let segs = read_segment_file(&entry.label_path)?;
    let target = segments_of(&segs, &entry.conv_id, SegLabel::Target)?;
    from_segments(&target, total, cfg.frame_shift_ms)
}

fn utterance_speech_labels(
    entry: &UttIndexEntry,
    audio: &AudioSignal,
    cfg: &EngineConfig,
) -> Result<LabelSeq> {
    let total = frame_count(audio.samples.len(), cfg.frame_samples(), cfg.hop_samples());
    let segs = read_segment_file(&entry.label_path)?;
    let speech = segments_of(&segs, &entry.id, SegLabel::Speech)?;
    from_segments(&speech, total, cfg.frame_shift_ms)
}

// ---------------------------------------------------------------------------
// Training recipes
// ---------------------------------------------------------------------------

/// Train the UBM on the MFCCs of all train-split utterances.
pub fn cmd_train_ubm(cfg: &EngineConfig, data_dir: &Path, out: &Path) -> Result<Vec<f64>> {
    let index = read_utterance_index(data_dir)?;
    let entries = train_split_entries(&index, Split::Train, None);
    if entries.is_empty() {
        return data_err("no train-split utterances in the corpus index");
    }
    let mut feats = Vec::new();
    for e in &entries {
        let audio = read_audio(&e.wav_path, cfg.sample_rate)?;
        feats.push(mfcc_of(&audio, cfg)?);
    }
    let refs: Vec<&FeatureMatrix> = feats.iter().collect();
    let fit = train_ubm(&refs, cfg.ubm_components, cfg.ubm_iters, cfg.seed)?;
    model_io::save_ubm(out, &fit.ubm)?;
    Ok(fit.log_likelihood)
}

/// Train the total-variability matrix on train-split statistics.
pub fn cmd_train_tv(
    cfg: &EngineConfig,
    data_dir: &Path,
    ubm_path: &Path,
    out: &Path,
) -> Result<Vec<f64>> {
    let ubm = load_ubm_required(ubm_path)?;
    let index = read_utterance_index(data_dir)?;
    let entries = train_split_entries(&index, Split::Train, None);
    let mut stats = Vec::new();
    for e in &entries {
        let audio = read_audio(&e.wav_path, cfg.sample_rate)?;
        stats.push(bw_stats(&mfcc_of(&audio, cfg)?, &ubm)?);
    }
    let fit = train_tv(&stats, &ubm, cfg.ivector_dim, cfg.tv_iters, cfg.seed)?;
    model_io::save_tv(out, &fit.tv)?;
    Ok(fit.auxiliary)
}

/// Train PLDA on train-split i-vectors and calibrate the SV threshold at
/// the dev-set equal-error-rate point.
pub fn cmd_train_plda(
    cfg: &EngineConfig,
    data_dir: &Path,
    ubm_path: &Path,
    tv_path: &Path,
    out: &Path,
    ivectors_csv: Option<&Path>,
) -> Result<f64> {
    let ubm = load_ubm_required(ubm_path)?;
    let tv = load_tv_required(tv_path)?;
    let index = read_utterance_index(data_dir)?;

    let utt_ivector = |e: &UttIndexEntry| -> Result<IVector> {
        let audio = read_audio(&e.wav_path, cfg.sample_rate)?;
        let stats = bw_stats(&mfcc_of(&audio, cfg)?, &ubm)?;
        length_normalize(&extract_ivector(&stats, &tv, &ubm)?)
    };

    let entries = train_split_entries(&index, Split::Train, None);
    let mut ivecs = Vec::new();
    let mut speakers = Vec::new();
    for e in &entries {
        ivecs.push(utt_ivector(e)?);
        speakers.push(e.speaker_id.clone());
    }
    let mut plda = train_plda(&ivecs, &speakers)?;

    if let Some(csv) = ivectors_csv {
        let mut text = String::new();
        for (v, s) in ivecs.iter().zip(&speakers) {
            let vals: Vec<String> = v.values.iter().map(|x| format!("{x}")).collect();
            text.push_str(&format!("{s},{}\n", vals.join(",")));
        }
        std::fs::write(csv, text)?;
    }

    // Dev trials: every dev speaker's pooled enrollment against every dev
    // non-enrollment utterance.
    let dev_speakers: std::collections::BTreeSet<String> = index
        .values()
        .filter(|e| e.split == Split::Dev)
        .map(|e| e.speaker_id.clone())
        .collect();
    let mut target_scores = Vec::new();
    let mut nontarget_scores = Vec::new();
    for speaker in &dev_speakers {
        let enroll_ids: Vec<String> = index
            .values()
            .filter(|e| e.split == Split::Dev && e.role == UttRole::Enroll && &e.speaker_id == speaker)
            .map(|e| e.id.clone())
            .collect();
        let enroll = enrollment_ivector(&enroll_ids, &index, &ubm, &tv, cfg)?;
        for e in index
            .values()
            .filter(|e| e.split == Split::Dev && e.role == UttRole::Train)
        {
            let test = utt_ivector(e)?;
            let score = plda_score(&plda, &enroll, &test)?;
            if &e.speaker_id == speaker {
                target_scores.push(score);
            } else {
                nontarget_scores.push(score);
            }
        }
    }
    let threshold = eer_threshold(&target_scores, &nontarget_scores)?;
    plda.sv_threshold = Some(threshold);
    model_io::save_plda(out, &plda)?;
    Ok(threshold)
}

/// Equal-error-rate operating point over target and non-target scores.
pub fn eer_threshold(target: &[f64], nontarget: &[f64]) -> Result<f64> {
    if target.is_empty() || nontarget.is_empty() {
        return data_err("EER calibration needs both target and non-target trials");
    }
    let mut candidates: Vec<f64> = target.iter().chain(nontarget).cloned().collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (f64::INFINITY, candidates[0]);
    for &c in &candidates {
        let frr = target.iter().filter(|&&s| s < c).count() as f64 / target.len() as f64;
        let far = nontarget.iter().filter(|&&s| s >= c).count() as f64 / nontarget.len() as f64;
        let gap = (far - frr).abs();
        if gap < best.0 {
            best = (gap, c);
        }
    }
    Ok(best.1)
}

struct DevItem {
    inputs: Array2<f64>,
    bin: usize,
    orig_len: usize,
    reference: Vec<u8>,
}

fn dev_frame_acc(model: &SequenceModel, dev: &[DevItem]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for item in dev {
        let posts = model.speech_posteriors(&item.inputs)?;
        let expanded = expand_predictions(&posts, item.bin, item.orig_len)?;
        for (p, &r) in expanded.iter().zip(&item.reference) {
            correct += usize::from(u8::from(*p >= 0.5) == r);
            total += 1;
        }
    }
    if total == 0 {
        return data_err("empty dev set");
    }
    Ok(correct as f64 / total as f64)
}

/// One line per epoch: mean training loss and dev frame accuracy.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_acc: f64,
}

fn run_training(
    model: &mut SequenceModel,
    train: &[(Array2<f64>, Vec<u8>)],
    dev: &[DevItem],
    cfg: &EngineConfig,
    log_path: &Path,
) -> Result<Vec<EpochLog>> {
    if train.is_empty() {
        return data_err("empty training set");
    }
    let tc = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size.max(1),
        seed: cfg.seed,
        clip_norm: cfg.clip_norm,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x747261696e);
    let mut logs = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_weighted = 0.0;
        let mut frames = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<(&Array2<f64>, &[u8])> = chunk
                .iter()
                .map(|&i| (&train[i].0, train[i].1.as_slice()))
                .collect();
            let n: usize = batch.iter().map(|(_, l)| l.len()).sum();
            let loss = train_step(model, &batch, &tc)?;
            loss_weighted += loss * n as f64;
            frames += n;
        }
        let loss = loss_weighted / frames.max(1) as f64;
        let dev_acc = dev_frame_acc(model, dev)?;
        logs.push(EpochLog {
            epoch: epoch + 1,
            loss,
            dev_acc,
        });
    }
    let mut text = String::new();
    for l in &logs {
        text.push_str(&format!(
            "epoch={} loss={:.6} dev_acc={:.4}\n",
            l.epoch, l.loss, l.dev_acc
        ));
    }
    std::fs::write(log_path, text)?;
    Ok(logs)
}

fn new_model(cfg: &EngineConfig, arch: Arch, input_dim: usize) -> SequenceModel {
    match arch {
        Arch::Mlp => SequenceModel::Mlp(MlpModel::new(
            input_dim,
            &vec![cfg.mlp_hidden; cfg.mlp_layers],
            cfg.seed,
        )),
        Arch::Lstm => SequenceModel::Lstm(LstmModel::new(
            input_dim,
            cfg.lstm_hidden,
            cfg.lstm_layers,
            cfg.seed,
        )),
    }
}

/// Train the speaker-independent VAD classifier on train-split utterances.
pub fn cmd_train_vad(
    cfg: &EngineConfig,
    data_dir: &Path,
    arch: Arch,
    out: &Path,
) -> Result<Vec<EpochLog>> {
    let index = read_utterance_index(data_dir)?;
    let context = if arch == Arch::Mlp { cfg.context } else { 0 };
    let none = no_ivector();

    let build = |split: Split| -> Result<Vec<(Array2<f64>, Vec<u8>)>> {
        let mut out = Vec::new();
        for e in train_split_entries(&index, split, Some(UttRole::Train)) {
            let audio = read_audio(&e.wav_path, cfg.sample_rate)?;
            let feats = logmel_of(&audio, cfg)?;
            let labels = utterance_speech_labels(e, &audio, cfg)?;
            let (inputs, _) = assemble_inputs(&feats, 1, context, &none)?;
            out.push((inputs, labels.values));
        }
        Ok(out)
    };
    let train = build(Split::Train)?;
    let dev: Vec<DevItem> = build(Split::Dev)?
        .into_iter()
        .map(|(inputs, labels)| DevItem {
            orig_len: labels.len(),
            bin: 1,
            inputs,
            reference: labels,
        })
        .collect();

    let input_dim = train
        .first()
        .map(|(x, _)| x.ncols())
        .ok_or_else(|| EngineError::Data("no training utterances".into()))?;
    let mut model = new_model(cfg, arch, input_dim);
    let logs = run_training(&mut model, &train, &dev, cfg, &log_path_for(out))?;
    model_io::save_sequence_model(out, &model)?;
    Ok(logs)
}

fn log_path_for(model_path: &Path) -> PathBuf {
    let mut p = model_path.as_os_str().to_owned();
    p.push(".log");
    PathBuf::from(p)
}

/// Train the end-to-end speaker-dependent classifier on train-split
/// conversations, conditioning every frame on the target's enrollment
/// i-vector.
pub fn cmd_train_sdvad(
    cfg: &EngineConfig,
    data_dir: &Path,
    ubm_path: &Path,
    tv_path: &Path,
    arch: Arch,
    bin: usize,
    out: &Path,
) -> Result<Vec<EpochLog>> {
    let ubm = load_ubm_required(ubm_path)?;
    let tv = load_tv_required(tv_path)?;
    let index = read_utterance_index(data_dir)?;
    let context = if arch == Arch::Mlp { cfg.context } else { 0 };

    let build = |manifest: &Path| -> Result<Vec<(Array2<f64>, Vec<u8>, usize)>> {
        let mut out = Vec::new();
        for entry in read_manifest(manifest)? {
            let audio = read_audio(&entry.wav_path, cfg.sample_rate)?;
            let feats = logmel_of(&audio, cfg)?;
            let labels = conversation_ref_labels(&entry, cfg)?;
            let ivec = enrollment_ivector(&entry.enroll_utts, &index, &ubm, &tv, cfg)?;
            let (inputs, orig_len) = assemble_inputs(&feats, bin, context, &ivec)?;
            debug_assert_eq!(orig_len, labels.len());
            out.push((inputs, labels.values, orig_len));
        }
        Ok(out)
    };

    let train: Vec<(Array2<f64>, Vec<u8>)> = build(&data_dir.join("manifest-train.txt"))?
        .into_iter()
        .map(|(inputs, labels, _)| {
            let binned = bin_labels(&labels, bin);
            (inputs, binned)
        })
        .collect();
    let dev: Vec<DevItem> = build(&data_dir.join("manifest-dev.txt"))?
        .into_iter()
        .map(|(inputs, labels, orig_len)| DevItem {
            inputs,
            bin,
            orig_len,
            reference: labels,
        })
        .collect();

    let input_dim = train
        .first()
        .map(|(x, _)| x.ncols())
        .ok_or_else(|| EngineError::Data("no training conversations".into()))?;
    let mut model = new_model(cfg, arch, input_dim);
    let logs = run_training(&mut model, &train, &dev, cfg, &log_path_for(out))?;
    model_io::save_sequence_model(out, &model)?;
    Ok(logs)
}

// ---------------------------------------------------------------------------
// Inference, baseline, evaluation
// ---------------------------------------------------------------------------

/// Post-processing and decision knobs shared by infer and baseline.
#[derive(Debug, Clone)]
pub struct DecisionOptions {
    pub theta: f64,
    pub smooth_window: usize,
    pub min_gap: usize,
    pub min_speech: usize,
}

impl DecisionOptions {
    pub fn from_config(cfg: &EngineConfig) -> Self {
        Self {
            theta: cfg.theta,
            smooth_window: cfg.smooth_window,
            min_gap: cfg.min_gap,
            min_speech: cfg.min_speech,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub stream: bool,
    pub bin: usize,
    pub decisions: DecisionOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferSummary {
    pub conversations: usize,
    pub latency_frames: usize,
    pub latency_ms: f64,
}

fn write_hypothesis(out_dir: &Path, conv_id: &str, labels: &LabelSeq) -> Result<()> {
    let entries: Vec<(String, Segment, SegLabel)> = to_segments(labels)
        .segments()
        .iter()
        .map(|&s| (conv_id.to_string(), s, SegLabel::Target))
        .collect();
    write_segment_file(&out_dir.join(format!("{conv_id}.segs")), &entries)
}

/// Run speaker-dependent inference over a manifest, writing one hypothesis
/// segment file per conversation.
pub fn cmd_infer(
    cfg: &EngineConfig,
    data_dir: &Path,
    manifest: &Path,
    model_path: &Path,
    ubm_path: &Path,
    tv_path: &Path,
    out_dir: &Path,
    opts: &InferOptions,
) -> Result<InferSummary> {
    require(model_path, "SDVAD model", "train-sdvad")?;
    let model = model_io::load_sequence_model(model_path)?;
    let ubm = load_ubm_required(ubm_path)?;
    let tv = load_tv_required(tv_path)?;
    let index = read_utterance_index(data_dir)?;
    let context = context_for_model(&model, cfg.n_mels, tv.ivector_dim())?;
    std::fs::create_dir_all(out_dir)?;

    let entries = read_manifest(manifest)?;
    for entry in &entries {
        let audio = read_audio(&entry.wav_path, cfg.sample_rate)?;
        let feats = logmel_of(&audio, cfg)?;
        let ivec = enrollment_ivector(&entry.enroll_utts, &index, &ubm, &tv, cfg)?;

        let labels = if opts.stream {
            let mut state = StreamState::new(
                &model,
                &ivec,
                cfg.n_mels,
                StreamConfig {
                    bin: opts.bin,
                    smooth_window: opts.decisions.smooth_window,
                    theta: opts.decisions.theta,
                    context,
                },
            )?;
            let mut values = Vec::with_capacity(feats.num_frames());
            for row in feats.data.rows() {
                values.extend(state.push(row)?);
            }
            values.extend(state.finish()?);
            LabelSeq::new(values, cfg.frame_shift_ms)
        } else {
            let (inputs, orig_len) = assemble_inputs(&feats, opts.bin, context, &ivec)?;
            let posts = model.speech_posteriors(&inputs)?;
            let expanded = expand_predictions(&posts, opts.bin, orig_len)?;
            let raw = threshold(&expanded, opts.decisions.theta, cfg.frame_shift_ms);
            smooth(&raw, opts.decisions.smooth_window)
        };
        let merged = merge_segments(&labels, opts.decisions.min_gap, opts.decisions.min_speech);
        write_hypothesis(out_dir, &entry.conv_id, &merged)?;
    }

    let latency = crate::stream::algorithmic_latency_frames(
        opts.bin,
        opts.decisions.smooth_window,
        context,
    );
    Ok(InferSummary {
        conversations: entries.len(),
        latency_frames: latency,
        latency_ms: latency as f64 * cfg.frame_shift_ms,
    })
}

/// Two-stage baseline: speaker-independent VAD proposes segments, then
/// per-segment i-vector/PLDA verification keeps only the target speaker's
/// segments.
pub fn cmd_baseline(
    cfg: &EngineConfig,
    data_dir: &Path,
    manifest: &Path,
    vad_path: &Path,
    ubm_path: &Path,
    tv_path: &Path,
    plda_path: &Path,
    out_dir: &Path,
    opts: &DecisionOptions,
) -> Result<usize> {
    require(vad_path, "VAD model", "train-vad")?;
    let vad = model_io::load_sequence_model(vad_path)?;
    let ubm = load_ubm_required(ubm_path)?;
    let tv = load_tv_required(tv_path)?;
    let plda = load_plda_required(plda_path)?;
    let sv_threshold = plda.sv_threshold.ok_or_else(|| {
        EngineError::Data("PLDA model lacks a calibrated threshold; rerun `sdvad train-plda`".into())
    })?;
    let index = read_utterance_index(data_dir)?;
    let context = context_for_model(&vad, cfg.n_mels, 0)?;
    std::fs::create_dir_all(out_dir)?;

    let win = cfg.frame_samples();
    let hop = cfg.hop_samples();
    let none = no_ivector();
    let entries = read_manifest(manifest)?;
    for entry in &entries {
        let audio = read_audio(&entry.wav_path, cfg.sample_rate)?;
        let feats = logmel_of(&audio, cfg)?;
        let enroll = enrollment_ivector(&entry.enroll_utts, &index, &ubm, &tv, cfg)?;

        // Stage 1: speech/non-speech segmentation.
        let (inputs, orig_len) = assemble_inputs(&feats, 1, context, &none)?;
        let posts = vad.speech_posteriors(&inputs)?;
        let expanded = expand_predictions(&posts, 1, orig_len)?;
        let raw = threshold(&expanded, opts.theta, cfg.frame_shift_ms);
        let smoothed = smooth(&raw, opts.smooth_window);
        let merged = merge_segments(&smoothed, opts.min_gap, opts.min_speech);
        let segments = to_segments(&merged);

        // Stage 2: per-segment speaker verification.
        let mut kept = Vec::new();
        for &seg in segments.segments() {
            let start = seg.start * hop;
            let end = ((seg.end - 1) * hop + win).min(audio.samples.len());
            let piece = AudioSignal {
                samples: audio.samples[start.min(end)..end].to_vec(),
                sample_rate: audio.sample_rate,
            };
            let stats = bw_stats(&mfcc_of(&piece, cfg)?, &ubm)?;
            let ivec = length_normalize(&extract_ivector(&stats, &tv, &ubm)?)?;
            let score = plda_score(&plda, &enroll, &ivec)?;
            if score >= sv_threshold {
                kept.push(seg);
            }
        }
        let kept = crate::segmenter::SegmentList::try_new(kept)?;
        let labels = from_segments(&kept, merged.len(), cfg.frame_shift_ms)?;
        write_hypothesis(out_dir, &entry.conv_id, &labels)?;
    }
    Ok(entries.len())
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct UttScores {
    pub frames: FrameScores,
    pub segment: JvadReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemReport {
    pub evaluated: usize,
    pub aggregate_frames: FrameScores,
    pub aggregate_segment: JvadReport,
    pub utterances: BTreeMap<String, UttScores>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub system: String,
    pub acc: f64,
    pub f1: f64,
    pub sba: f64,
    pub eba: f64,
    pub bp: f64,
    pub jvad: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub comparison: Vec<ComparisonRow>,
    pub systems: BTreeMap<String, SystemReport>,
}

/// Score one or more hypothesis directories against the manifest's
/// references and write a JSON report.
pub fn cmd_eval(
    cfg: &EngineConfig,
    manifest: &Path,
    systems: &[(String, PathBuf)],
    out: &Path,
) -> Result<Report> {
    if systems.is_empty() {
        return data_err("no hypothesis systems given");
    }
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return data_err("empty manifest");
    }

    let mut references: BTreeMap<String, LabelSeq> = BTreeMap::new();
    for entry in &entries {
        references.insert(entry.conv_id.clone(), conversation_ref_labels(entry, cfg)?);
    }

    let mut report = Report {
        comparison: Vec::new(),
        systems: BTreeMap::new(),
    };
    for (name, hyp_dir) in systems {
        let mut agg = CorpusAggregator::new();
        let mut utts = BTreeMap::new();
        let mut skipped = Vec::new();
        for entry in &entries {
            let reference = &references[&entry.conv_id];
            let hyp_path = hyp_dir.join(format!("{}.segs", entry.conv_id));
            let hyp = read_segment_file(&hyp_path)
                .and_then(|map| segments_of(&map, &entry.conv_id, SegLabel::Target))
                .and_then(|segs| from_segments(&segs, reference.len(), cfg.frame_shift_ms));
            let hyp = match hyp {
                Ok(h) => h,
                Err(e) => {
                    skipped.push(format!("{}: {e}", entry.conv_id));
                    continue;
                }
            };
            let frames = crate::metrics::frame_scores(reference, &hyp)?;
            let segment = crate::metrics::jvad(reference, &hyp, cfg.boundary_tol)?;
            agg.add(reference, &hyp, cfg.boundary_tol)?;
            utts.insert(entry.conv_id.clone(), UttScores { frames, segment });
        }
        if agg.utterances() == 0 {
            return data_err(format!(
                "system {name:?}: no conversation could be evaluated (all skipped)"
            ));
        }
        report.systems.insert(
            name.clone(),
            SystemReport {
                evaluated: agg.utterances(),
                aggregate_frames: agg.frame_scores(),
                aggregate_segment: agg.jvad_report(),
                utterances: utts,
                skipped,
            },
        );
    }
    for (name, sys) in &report.systems {
        report.comparison.push(ComparisonRow {
            system: name.clone(),
            acc: sys.aggregate_frames.acc,
            f1: sys.aggregate_frames.f1,
            sba: sys.aggregate_segment.sba,
            eba: sys.aggregate_segment.eba,
            bp: sys.aggregate_segment.bp,
            jvad: sys.aggregate_segment.jvad,
        });
    }
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| EngineError::Data(format!("cannot serialize report: {e}")))?;
    std::fs::write(out, json + "\n")?;
    Ok(report)
}

/// Export acoustic features of one audio file as CSV.
pub fn cmd_export_feats(
    cfg: &EngineConfig,
    audio_path: &Path,
    kind: &str,
    out: &Path,
) -> Result<usize> {
    let audio = read_audio(audio_path, cfg.sample_rate)?;
    let feats = match kind {
        "logmel" => logmel_of(&audio, cfg)?,
        "mfcc" => mfcc_of(&audio, cfg)?,
        other => {
            return Err(EngineError::Config(format!(
                "unknown feature kind {other:?} (expected logmel|mfcc)"
            )))
        }
    };
    crate::feats::write_features_csv(&feats, out)?;
    Ok(feats.num_frames())
}
