//! Desk-scale hand-object-interaction video reenactment built around a
//! unified inpainting-based token process: a two-stage (keyframe, then video)
//! diffusion transformer trained by self-supervised reconstruction on
//! synthetic sprite clips, with adaptive oriented-box masking for
//! cross-object shape control and last-frame chaining for long videos.
//!
//! The conditioning path introduces no trainable parameters: masked-video
//! tokens and spatially aligned reference tokens are blended per token and
//! handed to the denoiser, whose attention does the rest.
//!
//! See the `examples/` directory for one runnable entry point per capability,
//! or the `inptpu` binary for the `synth`/`train`/`reenact`/`eval` workflow.

pub mod codec;
pub mod dit;
pub mod error;
pub mod inp_tpu;
pub mod masking;
pub mod metrics;
pub mod pipeline;
pub mod synthdata;
pub mod tokenizer;
pub mod util;
pub mod video;

pub mod cli;

pub use error::{Error, Result};
