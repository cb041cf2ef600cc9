//! taglab is a part-of-speech tagging toolkit built around one experimental
//! protocol: read a vertical `token<TAB>tag` corpus, split it into
//! cross-validation folds, train a tagger on each fold, and score it with
//! weighted macro-average F1.
//!
//! Four model families share that pipeline:
//!
//! * [`baselines`] — majority-tag and word-memorization baselines,
//! * [`crf`] — a feature-template linear-chain CRF over context windows,
//! * [`neural`] — feedforward-window or biLSTM encoders over word, affix,
//!   and character-CNN embeddings, with a softmax or CRF output layer,
//! * [`lattice`] — the shared chain-inference core (forward, forward-backward,
//!   Viterbi) used by both CRF variants.
//!
//! [`training`] implements the shared optimization loop (mini-batches,
//! gradient clipping, learning-rate halving with early stop, dev-driven model
//! selection, grid search) and [`evaluation`] the scoring side (confusion
//! matrix, per-tag precision/recall/F1, weighted macro-F1, fold aggregation).
//! The `taglab` binary in [`cli`] ties everything together.

pub mod baselines;
pub mod cli;
pub mod container;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod lattice;
pub mod neural;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
