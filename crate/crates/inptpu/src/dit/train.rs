//! Adam training loop over precomputed token samples, with deterministic
//! batching, conditioning dropout, and resumable checkpoints.

use super::checkpoint;
use super::loss::{fm_loss_and_grad, FlowDraw, LossOpts};
use super::model::ModelBundle;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::inp_tpu::{blend_tokens, ConditionBundle, Stage};
use crate::tokenizer::{PatchSpec, TokenGrid, TokenMask, TokenSequence};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Probability of training a video-stage sample without the clean first
    /// frame, so the no-keyframe operating mode stays in distribution.
    pub keyframe_dropout: f32,
    /// Probability of zeroing the reference fusion for a sample, so the
    /// model also learns to propagate appearance from the keyframe alone.
    pub ref_dropout: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 8,
            steps: 500,
            seed: 0,
            checkpoint_every: 100,
            keyframe_dropout: 0.2,
            ref_dropout: 0.15,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// One training clip, already tokenized. The condition is blended fresh each
/// step so dropout variants reuse the same cached streams.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub x0: Array2<f32>,
    pub x_tilde: Array2<f32>,
    pub x_ref: Array2<f32>,
    pub weights: Array1<f32>,
    pub grid: TokenGrid,
    pub patch: PatchSpec,
}

struct StepDesc {
    sample: usize,
    t: f32,
    noise_seed: u64,
    drop_keyframe: bool,
    drop_reference: bool,
}

pub(crate) struct AdamState {
    pub m: ParamStore<f32>,
    pub v: ParamStore<f32>,
    pub t: usize,
}

pub struct Trainer {
    pub model: ModelBundle,
    pub cfg: TrainConfig,
    opt: AdamState,
    rng: ChaCha8Rng,
    pub step: usize,
    pub losses: Vec<f32>,
}

impl Trainer {
    pub fn new(model: ModelBundle, cfg: TrainConfig) -> Self {
        let opt = AdamState {
            m: model.params.zeros_like(),
            v: model.params.zeros_like(),
            t: 0,
        };
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self { model, cfg, opt, rng, step: 0, losses: Vec::new() }
    }

    /// Restores a trainer mid-run from a checkpoint directory: parameters,
    /// Adam moments, RNG position, and the loss curve.
    pub fn resume(dir: &Path) -> Result<Self> {
        let (model, train_cfg) = checkpoint::load_model(dir)?;
        let cfg = train_cfg
            .ok_or_else(|| Error::Data("checkpoint has no training config to resume".into()))?;
        let (m, v) = checkpoint::load_optimizer(dir, &model.params)?;
        let state = checkpoint::load_state(dir)?;
        let seed = checkpoint::seed_from_hex(&state.rng_seed_hex)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        let pos: u128 = state
            .rng_word_pos
            .parse()
            .map_err(|e| Error::Data(format!("bad rng position: {e}")))?;
        rng.set_word_pos(pos);
        let losses = checkpoint::read_loss_csv(dir)?;
        Ok(Self {
            model,
            cfg,
            opt: AdamState { m, v, t: state.step },
            rng,
            step: state.step,
            losses,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save_model(dir, &self.model, Some(&self.cfg))?;
        checkpoint::save_optimizer(dir, &self.opt.m, &self.opt.v)?;
        checkpoint::save_state(
            dir,
            &checkpoint::TrainState {
                step: self.step,
                rng_seed_hex: checkpoint::seed_to_hex(&self.rng.get_seed()),
                rng_word_pos: self.rng.get_word_pos().to_string(),
            },
        )?;
        checkpoint::write_loss_csv(dir, &self.losses)?;
        Ok(())
    }

    /// Runs until the global step counter reaches `until_step`, saving a
    /// checkpoint every `checkpoint_every` steps and at the end.
    pub fn run(
        &mut self,
        samples: &[TrainSample],
        until_step: usize,
        out_dir: Option<&Path>,
    ) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let widths: Vec<usize> = samples.iter().map(|s| s.x0.ncols()).collect();
        if widths.iter().any(|&w| w != self.model.config.d_patch()) {
            return Err(Error::Data(format!(
                "sample token width {:?} != model d_patch {}",
                widths,
                self.model.config.d_patch()
            )));
        }
        while self.step < until_step {
            let loss = self.step_once(samples)?;
            self.losses.push(loss);
            self.step += 1;
            if let Some(dir) = out_dir {
                if self.step % self.cfg.checkpoint_every.max(1) == 0 || self.step == until_step {
                    self.save(dir)?;
                }
            }
        }
        Ok(())
    }

    fn step_once(&mut self, samples: &[TrainSample]) -> Result<f32> {
        // all randomness flows through one stream so (seed, word_pos) resumes
        // the run bit-exactly; draw order per batch element is fixed
        let descs: Vec<StepDesc> = (0..self.cfg.batch)
            .map(|_| StepDesc {
                sample: self.rng.random_range(0..samples.len()),
                t: self.rng.random(),
                noise_seed: self.rng.random(),
                drop_keyframe: self.rng.random::<f32>() < self.cfg.keyframe_dropout,
                drop_reference: self.rng.random::<f32>() < self.cfg.ref_dropout,
            })
            .collect();

        let stage = self.model.stage;
        let model = &self.model;
        let results: Vec<Result<(f32, ParamStore<f32>)>> = descs
            .par_iter()
            .map(|desc| sample_loss_and_grad(model, &samples[desc.sample], desc, stage))
            .collect();

        let mut total = model.params.zeros_like();
        let mut loss_sum = 0.0f32;
        for r in results {
            let (loss, grads) = r?;
            loss_sum += loss;
            total.add_scaled(&grads, 1.0);
        }
        let scale = 1.0 / self.cfg.batch as f32;
        let mean_loss = loss_sum * scale;

        self.opt.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.opt.t as i32);
        let bc2 = 1.0 - b2.powi(self.opt.t as i32);
        let lr = self.cfg.lr;
        let eps = self.cfg.adam_eps;
        for (name, p) in self.model.params.iter_mut() {
            let g = total.get(name);
            let m = self.opt.m.get_mut(name);
            let v = self.opt.v.get_mut(name);
            for ((pv, &gv0), (mv, vv)) in
                p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                let gv = gv0 * scale;
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        if !self.model.params.all_finite() {
            return Err(Error::NonFinite(format!("parameters diverged at step {}", self.step)));
        }
        Ok(mean_loss)
    }
}

fn sample_loss_and_grad(
    model: &ModelBundle,
    sample: &TrainSample,
    desc: &StepDesc,
    stage: Stage,
) -> Result<(f32, ParamStore<f32>)> {
    let weights = if desc.drop_reference {
        Array1::zeros(sample.weights.len())
    } else {
        sample.weights.clone()
    };
    let x_tilde = TokenSequence {
        tokens: sample.x_tilde.clone(),
        grid: sample.grid,
        patch: sample.patch,
    };
    let x_ref =
        TokenSequence { tokens: sample.x_ref.clone(), grid: sample.grid, patch: sample.patch };
    let mask = TokenMask { weights, grid: sample.grid };
    let x_cond = blend_tokens(&x_tilde, &x_ref, &mask)?;
    let bundle = ConditionBundle { x_cond, x_mask: mask, keyframe_tokens: None };
    let clean =
        TokenSequence { tokens: sample.x0.clone(), grid: sample.grid, patch: sample.patch };

    let frozen = if stage == Stage::Video && !desc.drop_keyframe && sample.grid.frames > 1 {
        sample.grid.tokens_per_frame()
    } else {
        0
    };

    let mut noise_rng = ChaCha8Rng::seed_from_u64(desc.noise_seed);
    let noise = Array2::from_shape_fn((clean.len(), clean.dim()), |_| {
        noise_rng.sample(StandardNormal)
    });
    let draw = FlowDraw { t: desc.t, noise };
    fm_loss_and_grad(model, &clean, &bundle, &draw, LossOpts { frozen_prefix: frozen })
}

/// Convenience wrapper: trains `model` for `cfg.steps` steps and returns the
/// per-step loss curve.
pub fn train(
    model: ModelBundle,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ModelBundle, Vec<f32>)> {
    let mut trainer = Trainer::new(model, cfg.clone());
    let steps = cfg.steps;
    trainer.run(samples, steps, out_dir)?;
    Ok((trainer.model, trainer.losses))
}
