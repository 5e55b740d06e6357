//! Speaker-dependent voice activity detection engine.
//!
//! The crate trains and runs speaker-conditioned frame classifiers end to
//! end: an acoustic front end ([`feats`]), GMM-UBM/i-vector/PLDA speaker
//! modeling ([`speaker`]), MLP and LSTM classifiers with exact gradients
//! ([`nnet`]), decision post-processing ([`segmenter`]), frame- and
//! segment-level scoring ([`metrics`]), a synthetic conversational corpus
//! generator ([`corpus`]), and the training/inference/evaluation recipes
//! behind the CLI ([`pipeline`], [`stream`]).

pub mod audio;
pub mod config;
pub mod corpus;
pub mod error;
pub mod feats;
pub mod linalg;
pub mod metrics;
pub mod model_io;
pub mod nnet;
pub mod pipeline;
pub mod segmenter;
pub mod speaker;
pub mod stream;

pub use error::{EngineError, Result};
