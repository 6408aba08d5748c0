//! Learned components: a hand-rolled reverse-mode tape, the shared
//! encoder-decoder network, AdamW, losses, checkpoints and training.

pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod unet;
pub mod velocity;

pub use loss::{loss_evo, Supervision};
pub use optim::{optimizer_step, AdamWConfig, OptimizerState};
pub use params::Params;
pub use tape::{Gradients, RegularizerGrad, Tape, Var};
pub use tensor::Tensor;
pub use unet::{ConvNet, ConvNetSpec};
pub use velocity::VelocityModel;
