//! Point-prompted amodal segmentation by velocity-guided level set evolution.
//!
//! A level set function `phi_0` is initialized from an image and one or more
//! point prompts, then evolved for `T` steps under a normal velocity predicted
//! by a small convolutional network. The final mask is `phi_T > 0`.
//!
//! Module map:
//!
//! * [`field`], [`mask`], [`sdf`], [`contour`]: grids, stencils, distance
//!   transforms and smooth Heaviside kernels.
//! * [`evolution`]: the evolution loop, distance regularization and classical
//!   velocity providers.
//! * [`nn`]: reverse-mode tape, the encoder-decoder network, AdamW, losses,
//!   checkpoints and training.
//! * [`prompt`]: prompt heatmaps and the initial level set function.
//! * [`dataset`]: deterministic synthetic amodal scenes.
//! * [`metrics`]: mIoU over full amodal masks and occluded regions.
//! * [`pipeline`], [`render`]: end-to-end inference and PNG frame rendering.

pub mod contour;
pub mod dataset;
pub mod error;
pub mod evolution;
pub mod field;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod render;
pub mod sdf;

pub use error::{Error, Result};
pub use evolution::{EvolutionConfig, Trajectory, VelocityProvider};
pub use field::ScalarField;
pub use mask::BinaryMask;
pub use par::Exec;
pub use prompt::PointPrompt;
