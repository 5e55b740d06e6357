//! `sdvad` — command-line driver for the speaker-dependent VAD engine.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdvad_core::config::EngineConfig;
use sdvad_core::error::{EngineError, Result};
use sdvad_core::pipeline::{self, Arch, DecisionOptions, InferOptions};

#[derive(Parser)]
#[command(
    name = "sdvad",
    about = "Speaker-dependent voice activity detection engine",
    version
)]
struct Cli {
    /// Engine configuration file (key = value); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the engine seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic conversational corpus with ground truth.
    SynthCorpus {
        /// Output directory for WAVs, labels, manifests and the index.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the GMM-UBM on train-split MFCCs.
    TrainUbm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the total-variability matrix.
    TrainTv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train PLDA and calibrate the SV threshold on the dev split.
    TrainPlda {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        tv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also export train-split i-vectors as CSV (speaker-id column first).
        #[arg(long)]
        ivectors_csv: Option<PathBuf>,
    },
    /// Train the speaker-independent VAD classifier.
    TrainVad {
        #[arg(long)]
        data: PathBuf,
        /// Classifier architecture: mlp or lstm.
        #[arg(long, default_value = "lstm")]
        arch: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the end-to-end speaker-dependent classifier.
    TrainSdvad {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        tv: PathBuf,
        #[arg(long, default_value = "lstm")]
        arch: String,
        /// Feature binning factor (overrides the config key `bin`).
        #[arg(long)]
        bin: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run speaker-dependent inference over a manifest.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        tv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Consume frames one at a time (bit-identical to batch).
        #[arg(long)]
        stream: bool,
        /// Feature binning factor.
        #[arg(long)]
        bin: Option<usize>,
        /// Majority-vote smoothing window in frames.
        #[arg(long)]
        smooth: Option<usize>,
        /// MIN_GAP,MIN_SPEECH merge thresholds in frames.
        #[arg(long)]
        merge: Option<String>,
        /// Speech decision threshold.
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Run the two-stage VAD + speaker-verification baseline.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vad: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        tv: PathBuf,
        #[arg(long)]
        plda: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        smooth: Option<usize>,
        #[arg(long)]
        merge: Option<String>,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Score hypothesis directories against the manifest references.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// One or more systems as NAME=HYP_DIR.
        #[arg(long = "hyp", required = true)]
        hyp: Vec<String>,
        /// JSON report output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export log-mel or MFCC features of one audio file as CSV.
    ExportFeats {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long, default_value = "logmel")]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_merge(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 2 {
        return Err(EngineError::Config(format!(
            "--merge expects MIN_GAP,MIN_SPEECH, got {spec:?}"
        )));
    }
    let gap = parts[0]
        .trim()
        .parse()
        .map_err(|_| EngineError::Config(format!("bad MIN_GAP {:?}", parts[0])))?;
    let speech = parts[1]
        .trim()
        .parse()
        .map_err(|_| EngineError::Config(format!("bad MIN_SPEECH {:?}", parts[1])))?;
    Ok((gap, speech))
}

fn decisions_with(
    cfg: &EngineConfig,
    smooth: Option<usize>,
    merge: Option<String>,
    theta: Option<f64>,
) -> Result<DecisionOptions> {
    let mut d = DecisionOptions::from_config(cfg);
    if let Some(w) = smooth {
        if w == 0 {
            return Err(EngineError::Config("--smooth must be >= 1".into()));
        }
        d.smooth_window = w;
    }
    if let Some(spec) = merge {
        let (gap, speech) = parse_merge(&spec)?;
        d.min_gap = gap;
        d.min_speech = speech;
    }
    if let Some(t) = theta {
        if !(t > 0.0 && t < 1.0) {
            return Err(EngineError::Config("--theta must lie in (0, 1)".into()));
        }
        d.theta = t;
    }
    Ok(d)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    match cli.command {
        Command::SynthCorpus { out } => {
            sdvad_core::corpus::build_dataset(&cfg, &out)?;
            eprintln!("corpus written to {}", out.display());
        }
        Command::TrainUbm { data, out } => {
            let ll = pipeline::cmd_train_ubm(&cfg, &data, &out)?;
            eprintln!(
                "ubm trained: log-likelihood {:.2} -> {:.2} over {} iterations",
                ll.first().unwrap_or(&0.0),
                ll.last().unwrap_or(&0.0),
                ll.len()
            );
        }
        Command::TrainTv { data, ubm, out } => {
            let aux = pipeline::cmd_train_tv(&cfg, &data, &ubm, &out)?;
            eprintln!(
                "tv trained: auxiliary {:.2} -> {:.2} over {} iterations",
                aux.first().unwrap_or(&0.0),
                aux.last().unwrap_or(&0.0),
                aux.len()
            );
        }
        Command::TrainPlda {
            data,
            ubm,
            tv,
            out,
            ivectors_csv,
        } => {
            let th =
                pipeline::cmd_train_plda(&cfg, &data, &ubm, &tv, &out, ivectors_csv.as_deref())?;
            eprintln!("plda trained; dev-EER threshold {th:.4}");
        }
        Command::TrainVad { data, arch, out } => {
            let logs = pipeline::cmd_train_vad(&cfg, &data, Arch::parse(&arch)?, &out)?;
            if let Some(last) = logs.last() {
                eprintln!(
                    "vad trained: epoch {} loss {:.4} dev_acc {:.4}",
                    last.epoch, last.loss, last.dev_acc
                );
            }
        }
        Command::TrainSdvad {
            data,
            ubm,
            tv,
            arch,
            bin,
            out,
        } => {
            let bin = bin.unwrap_or(cfg.bin);
            let logs = pipeline::cmd_train_sdvad(
                &cfg,
                &data,
                &ubm,
                &tv,
                Arch::parse(&arch)?,
                bin,
                &out,
            )?;
            if let Some(last) = logs.last() {
                eprintln!(
                    "sdvad trained (bin {bin}): epoch {} loss {:.4} dev_acc {:.4}",
                    last.epoch, last.loss, last.dev_acc
                );
            }
        }
        Command::Infer {
            data,
            manifest,
            model,
            ubm,
            tv,
            out,
            stream,
            bin,
            smooth,
            merge,
            theta,
        } => {
            let opts = InferOptions {
                stream,
                bin: bin.unwrap_or(cfg.bin),
                decisions: decisions_with(&cfg, smooth, merge, theta)?,
            };
            if opts.bin == 0 {
                return Err(EngineError::Config("--bin must be >= 1".into()));
            }
            let summary =
                pipeline::cmd_infer(&cfg, &data, &manifest, &model, &ubm, &tv, &out, &opts)?;
            eprintln!(
                "inferred {} conversations; algorithmic latency {} frames ({:.0} ms){}",
                summary.conversations,
                summary.latency_frames,
                summary.latency_ms,
                if stream { " [streaming]" } else { "" }
            );
        }
        Command::Baseline {
            data,
            manifest,
            vad,
            ubm,
            tv,
            plda,
            out,
            smooth,
            merge,
            theta,
        } => {
            let opts = decisions_with(&cfg, smooth, merge, theta)?;
            let n = pipeline::cmd_baseline(
                &cfg, &data, &manifest, &vad, &ubm, &tv, &plda, &out, &opts,
            )?;
            eprintln!("baseline processed {n} conversations");
        }
        Command::Eval {
            data: _,
            manifest,
            hyp,
            out,
        } => {
            let mut systems = Vec::new();
            for spec in &hyp {
                let Some((name, dir)) = spec.split_once('=') else {
                    return Err(EngineError::Config(format!(
                        "--hyp expects NAME=DIR, got {spec:?}"
                    )));
                };
                systems.push((name.to_string(), PathBuf::from(dir)));
            }
            let report = pipeline::cmd_eval(&cfg, &manifest, &systems, &out)?;
            for row in &report.comparison {
                eprintln!(
                    "{:<16} acc {:.4} f1 {:.4} sba {:.4} eba {:.4} bp {:.4} jvad {:.4}",
                    row.system, row.acc, row.f1, row.sba, row.eba, row.bp, row.jvad
                );
            }
            eprintln!("report written to {}", out.display());
        }
        Command::ExportFeats { audio, kind, out } => {
            let frames = pipeline::cmd_export_feats(&cfg, &audio, &kind, &out)?;
            eprintln!("wrote {frames} frames to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
