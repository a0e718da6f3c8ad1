//! Time-frequency object detection for nocturnal bird flight calls.
//!
//! The crate covers the whole pipeline: annotated corpus ingestion
//! ([`dataset`]), the spectrogram front-end ([`dsp`]), a two-stage
//! FPN detector with per-level self-attention and RoI positional
//! encodings ([`detector`]), sliding-window inference ([`inference`]),
//! detection and multi-label scoring ([`eval`]), the posterior frequency
//! probe ([`probe`]) and a synthetic call corpus for desk-scale runs
//! ([`synth`]).

pub mod audio;
pub mod dataset;
pub mod detector;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod inference;
pub mod nn;
pub mod par;
pub mod probe;
pub mod synth;

pub use error::{Error, Result};
