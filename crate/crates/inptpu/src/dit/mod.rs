//! Miniature diffusion-transformer denoiser: model, flow-matching loss with
//! exact hand-derived gradients, Euler sampler, Adam trainer, checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod params;
pub mod sampler;
pub mod train;

pub use checkpoint::{load_model, save_model};
pub use gradcheck::{check_all_slots, GradCheckReport};
pub use loss::{draw_flow, fm_loss, fm_loss_and_grad, FlowDraw, LossOpts};
pub use model::{forward, DiTConfig, ModelBundle};
pub use params::{ParamStore, Scalar};
pub use sampler::{initial_noise, integrate_with, sample, NoiseSchedule};
pub use train::{train, TrainConfig, TrainSample, Trainer};
