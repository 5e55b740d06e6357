//! Engine configuration: one flat key=value file, strict validation,
//! unknown keys rejected. Every CLI flag overrides the corresponding key.

use std::path::Path;

use crate::error::{config_err, Result};

/// All tunables of the engine with desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    // Front end
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    /// One-sided context radius for MLP inputs (11-frame window at r = 5).
    pub context: usize,

    // Speaker subsystem
    pub ubm_components: usize,
    pub ivector_dim: usize,
    pub ubm_iters: usize,
    pub tv_iters: usize,

    // Classifiers
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,

    // Decisions and post-processing
    pub theta: f64,
    pub smooth_window: usize,
    pub bin: usize,
    pub min_gap: usize,
    pub min_speech: usize,
    pub boundary_tol: usize,

    // Synthetic corpus
    pub train_speakers: usize,
    pub dev_speakers: usize,
    pub test_speakers: usize,
    pub utts_per_speaker: usize,
    pub enroll_utts: usize,
    pub convs_per_speaker: usize,
    pub mean_duration_s: f64,
    /// Signal-to-noise ratio in dB; `inf` disables noise.
    pub snr_db: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            n_mels: 36,
            n_ceps: 20,
            context: 5,
            ubm_components: 64,
            ivector_dim: 32,
            ubm_iters: 10,
            tv_iters: 5,
            mlp_hidden: 64,
            mlp_layers: 2,
            lstm_hidden: 64,
            lstm_layers: 2,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 1,
            clip_norm: 5.0,
            seed: 42,
            theta: 0.5,
            smooth_window: 10,
            bin: 1,
            min_gap: 10,
            min_speech: 10,
            boundary_tol: 10,
            train_speakers: 20,
            dev_speakers: 4,
            test_speakers: 8,
            utts_per_speaker: 10,
            enroll_utts: 3,
            convs_per_speaker: 2,
            mean_duration_s: 6.0,
            snr_db: 20.0,
        }
    }
}

impl EngineConfig {
    /// Parse a key=value file ('#' comments and blank lines ignored) on top
    /// of the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config_err(format!(
                    "{}:{}: expected `key = value`, got {raw:?}",
                    path.display(),
                    lineno + 1
                ));
            };
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                crate::error::EngineError::Config(format!(
                    "{}:{}: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one key from its textual value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| crate::error::EngineError::Config(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "sample_rate" => self.sample_rate = parse(key, value)?,
            "frame_length_ms" => self.frame_length_ms = parse(key, value)?,
            "frame_shift_ms" => self.frame_shift_ms = parse(key, value)?,
            "n_mels" => self.n_mels = parse(key, value)?,
            "n_ceps" => self.n_ceps = parse(key, value)?,
            "context" => self.context = parse(key, value)?,
            "ubm_components" => self.ubm_components = parse(key, value)?,
            "ivector_dim" => self.ivector_dim = parse(key, value)?,
            "ubm_iters" => self.ubm_iters = parse(key, value)?,
            "tv_iters" => self.tv_iters = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse(key, value)?,
            "mlp_layers" => self.mlp_layers = parse(key, value)?,
            "lstm_hidden" => self.lstm_hidden = parse(key, value)?,
            "lstm_layers" => self.lstm_layers = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "smooth_window" => self.smooth_window = parse(key, value)?,
            "bin" => self.bin = parse(key, value)?,
            "min_gap" => self.min_gap = parse(key, value)?,
            "min_speech" => self.min_speech = parse(key, value)?,
            "boundary_tol" => self.boundary_tol = parse(key, value)?,
            "train_speakers" => self.train_speakers = parse(key, value)?,
            "dev_speakers" => self.dev_speakers = parse(key, value)?,
            "test_speakers" => self.test_speakers = parse(key, value)?,
            "utts_per_speaker" => self.utts_per_speaker = parse(key, value)?,
            "enroll_utts" => self.enroll_utts = parse(key, value)?,
            "convs_per_speaker" => self.convs_per_speaker = parse(key, value)?,
            "mean_duration_s" => self.mean_duration_s = parse(key, value)?,
            "snr_db" => self.snr_db = parse(key, value)?,
            _ => return config_err(format!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return config_err("sample_rate must be positive");
        }
        if !(self.frame_shift_ms > 0.0) || self.frame_length_ms < self.frame_shift_ms {
            return config_err("need frame_length_ms >= frame_shift_ms > 0");
        }
        if self.n_mels == 0 {
            return config_err("n_mels must be >= 1");
        }
        if self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return config_err("need 1 <= n_ceps <= n_mels");
        }
        if self.ubm_components == 0 || self.ivector_dim == 0 {
            return config_err("ubm_components and ivector_dim must be >= 1");
        }
        if self.mlp_layers == 0 || self.lstm_layers == 0 || self.mlp_hidden == 0 || self.lstm_hidden == 0
        {
            return config_err("classifier layer counts and widths must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return config_err("learning_rate must be positive");
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return config_err("theta must lie in (0, 1)");
        }
        if self.smooth_window == 0 || self.bin == 0 {
            return config_err("smooth_window and bin must be >= 1");
        }
        if self.utts_per_speaker <= self.enroll_utts {
            return config_err("utts_per_speaker must exceed enroll_utts");
        }
        if self.train_speakers < 2 || self.dev_speakers < 2 || self.test_speakers < 2 {
            return config_err("every split needs at least two speakers");
        }
        if !(self.mean_duration_s >= 0.5) {
            return config_err("mean_duration_s must be at least 0.5 s");
        }
        if self.snr_db.is_nan() {
            return config_err("snr_db must be a number or inf");
        }
        Ok(())
    }

    pub fn frame_samples(&self) -> usize {
        crate::feats::samples_per_frame(self.frame_length_ms, self.sample_rate)
    }

    pub fn hop_samples(&self) -> usize {
        crate::feats::samples_per_frame(self.frame_shift_ms, self.sample_rate)
    }
}
