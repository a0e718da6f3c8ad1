//! Two-stage spectrogram detector: backbone registry, per-level
//! self-attention, single-layer FPN, RPN, RoIAlign with positional
//! encodings, RCNN head, losses, training and checkpoints.

pub mod anchors;
pub mod attention;
pub mod backbone;
pub mod boxes;
pub mod checkpoint;
mod config;
pub mod fpn;
pub(crate) mod layers;
mod model;
pub mod pe;
pub mod rcnn;
pub mod rpn;
pub mod targets;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, TrainConfig};
pub use model::{softmax_rows, Detector, Features, Losses, PeContext, PixelDetection};
pub use train::{train, StepRecord, TrainOutcome, TrainingSet};
