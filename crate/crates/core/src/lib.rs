//! szoo: compound-scaled attention CNN/MLP/ViT models with a multi-label
//! training and benchmark harness, built on a from-scratch CPU autodiff
//! engine.
//!
//! The crate covers the whole pipeline at desk scale: tensor engine with
//! reverse-mode autodiff, channel/spatial attention gates, WRN and
//! MBConv building blocks (plus a ghost-convolution substitute), declarative
//! model builders, compound scaling with grid search, multi-label metrics,
//! a training loop with checkpointing, simulated synchronous data-parallel
//! workers, synthetic multispectral data, Grad-CAM heatmaps, and a benchmark
//! runner that renders results tables.

pub mod arch;
pub mod attention;
pub mod bench;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod dist;
pub mod explain;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod params;
pub mod scalar;
pub mod scaling;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use kernels::Padding;
pub use scalar::Scalar;
pub use tape::{Mode, NodeId, Tape};
pub use tensor::Tensor;
