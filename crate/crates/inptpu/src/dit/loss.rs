//! Rectified-flow training objective: the network predicts the straight-path
//! velocity `eps - x0` from the interpolant `x_t = (1-t)*x0 + t*eps`.

use super::model::{assemble_matrix, backward_inner, forward_inner, positional_encoding, ModelBundle};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::inp_tpu::{assemble_input, ConditionBundle};
use crate::tokenizer::TokenSequence;
use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// One (t, noise) draw for the flow objective.
#[derive(Debug, Clone)]
pub struct FlowDraw {
    pub t: f32,
    pub noise: Array2<f32>,
}

/// Draw order is fixed and relied on by tests: first `t ~ U(0,1)`, then the
/// noise matrix row-major from the standard normal.
pub fn draw_flow(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FlowDraw {
    let t: f32 = rng.random();
    let noise = Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal));
    FlowDraw { t, noise }
}

/// `x_t = (1-t)*x0 + t*eps`
pub fn flow_interpolate(x0: &Array2<f32>, noise: &Array2<f32>, t: f32) -> Array2<f32> {
    x0 * (1.0 - t) + noise * t
}

/// `v = eps - x0`
pub fn velocity_target(x0: &Array2<f32>, noise: &Array2<f32>) -> Array2<f32> {
    noise - x0
}

/// Mean squared error over rows `skip_rows..`, all channels.
pub fn masked_mse(pred: &Array2<f32>, target: &Array2<f32>, skip_rows: usize) -> f32 {
    let rows = pred.nrows() - skip_rows;
    let count = (rows * pred.ncols()) as f64;
    let mut acc = 0.0f64;
    for i in skip_rows..pred.nrows() {
        for (a, b) in pred.row(i).iter().zip(target.row(i).iter()) {
            let d = (a - b) as f64;
            acc += d * d;
        }
    }
    (acc / count) as f32
}

/// Options for the keyframe-conditioned training step used by the video
/// stage: the first `frozen_prefix` token rows are fed clean (indicator 1)
/// and excluded from the loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossOpts {
    pub frozen_prefix: usize,
}

/// Flow-matching loss with freshly drawn `(t, eps)`.
pub fn fm_loss(
    model: &ModelBundle,
    clean: &TokenSequence,
    bundle: &ConditionBundle,
    rng: &mut ChaCha8Rng,
) -> Result<f32> {
    let draw = draw_flow(rng, clean.len(), clean.dim());
    let (loss, _, _) = loss_forward(model, clean, bundle, &draw, LossOpts::default())?;
    Ok(loss)
}

/// Deterministic loss for a fixed draw (no gradient).
pub fn fm_loss_at(
    model: &ModelBundle,
    clean: &TokenSequence,
    bundle: &ConditionBundle,
    draw: &FlowDraw,
    opts: LossOpts,
) -> Result<f32> {
    let (loss, _, _) = loss_forward(model, clean, bundle, &draw.clone(), opts)?;
    Ok(loss)
}

fn loss_forward(
    model: &ModelBundle,
    clean: &TokenSequence,
    bundle: &ConditionBundle,
    draw: &FlowDraw,
    opts: LossOpts,
) -> Result<(f32, Array2<f32>, Array2<f32>)> {
    if draw.noise.dim() != clean.tokens.dim() {
        return Err(Error::ShapeMismatch("noise shape != clean token shape".into()));
    }
    if opts.frozen_prefix >= clean.len() {
        return Err(Error::Dimension("frozen prefix covers every token".into()));
    }
    let (x_in, target) = build_training_input(model, clean, bundle, draw, opts)?;
    let cfg = &model.config;
    let pos = positional_encoding::<f32>(cfg, &clean.grid);
    let (out, _) = forward_inner::<f32>(&model.params, cfg, &x_in, &pos, draw.t as f64, false);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("loss forward overflowed".into()));
    }
    let loss = masked_mse(&out, &target, opts.frozen_prefix);
    Ok((loss, out, target))
}

/// Assembles the denoiser input matrix and velocity target for one step.
pub(crate) fn build_training_input(
    model: &ModelBundle,
    clean: &TokenSequence,
    bundle: &ConditionBundle,
    draw: &FlowDraw,
    opts: LossOpts,
) -> Result<(Array2<f32>, Array2<f32>)> {
    let mut x_t = flow_interpolate(&clean.tokens, &draw.noise, draw.t);
    let target = velocity_target(&clean.tokens, &draw.noise);
    let mut indicator = None;
    if opts.frozen_prefix > 0 {
        x_t.slice_mut(s![0..opts.frozen_prefix, ..])
            .assign(&clean.tokens.slice(s![0..opts.frozen_prefix, ..]));
        let mut ind = Array1::zeros(clean.len());
        ind.slice_mut(s![0..opts.frozen_prefix]).fill(1.0);
        indicator = Some(ind);
    }
    let noisy = TokenSequence { tokens: x_t, grid: clean.grid, patch: clean.patch };
    let mut input = assemble_input(&noisy, bundle)?;
    input.indicator = indicator;
    let x_in = assemble_matrix(&input, model.config.d_input())?;
    Ok((x_in, target))
}

/// Exact gradients of the flow-matching loss for every parameter slot, by
/// hand-derived backpropagation. Returns (loss, gradients).
pub fn fm_loss_and_grad(
    model: &ModelBundle,
    clean: &TokenSequence,
    bundle: &ConditionBundle,
    draw: &FlowDraw,
    opts: LossOpts,
) -> Result<(f32, ParamStore<f32>)> {
    let (x_in, target) = build_training_input(model, clean, bundle, draw, opts)?;
    let cfg = &model.config;
    let pos = positional_encoding::<f32>(cfg, &clean.grid);
    let (out, tape) =
        forward_inner::<f32>(&model.params, cfg, &x_in, &pos, draw.t as f64, true);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("loss forward overflowed".into()));
    }
    let loss = masked_mse(&out, &target, opts.frozen_prefix);

    let rows = out.nrows() - opts.frozen_prefix;
    let count = (rows * out.ncols()) as f32;
    let mut d_out = &out - &target;
    d_out *= 2.0 / count;
    if opts.frozen_prefix > 0 {
        d_out.slice_mut(s![0..opts.frozen_prefix, ..]).fill(0.0);
    }
    let grads = backward_inner(&model.params, cfg, &tape.expect("tape requested"), &d_out);
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradients overflowed".into()));
    }
    Ok((loss, grads))
}
