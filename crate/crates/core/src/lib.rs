//! Spatially-adaptive convolution for LiDAR range-image segmentation.
//!
//! The crate bundles a small dense-tensor engine with reverse-mode gradients,
//! spherical point-cloud projection, the adaptive-convolution layer family and
//! its naive oracle, a scaled-down encoder-decoder segmentation network, the
//! multi-layer weighted cross-entropy loss, mIoU evaluation, a deterministic
//! synthetic-scene generator, and a CLI driving every experiment.

pub mod cost;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod projection;
pub mod rng;
pub mod sac;
pub mod tensor;

pub use error::{Error, Result};
