//! A small reverse-mode automatic differentiation engine.
//!
//! Tensors are dense row-major `f64` arrays. A [`Graph`] records the
//! operations of one forward pass on a tape and replays them backwards to
//! produce parameter gradients. Only the operators the detector needs are
//! provided; the heavy ones (convolution, attention, RoI pooling) live in
//! [`kernels`] and are data-parallel.

pub mod graph;
pub mod init;
pub mod kernels;
pub mod linalg;
pub mod optim;
pub mod params;
mod serde_b64;
pub mod tensor;

pub use graph::{Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
