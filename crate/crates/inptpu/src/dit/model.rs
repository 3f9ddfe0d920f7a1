//! The miniature diffusion-transformer denoiser: patch-token transformer with
//! timestep (adaLN) modulation, additive 3D sinusoidal positions, and a
//! hand-derived backward pass.
//!
//! Input tokens carry `[noisy | conditioning | mask weight | clean indicator]`
//! channels; the output head predicts the flow velocity in raw latent-patch
//! space (width `d_patch`).

use super::layers::*;
use super::params::{ParamStore, Scalar};
use crate::error::{Error, Result};
use crate::inp_tpu::{DenoiserInput, Stage};
use crate::tokenizer::{PatchSpec, TokenGrid, TokenSequence};
use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Denoiser architecture hyperparameters. Parameter shapes are fully
/// determined by this struct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiTConfig {
    pub depth: usize,
    pub d_model: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch: PatchSpec,
    /// Largest (frames, rows, cols) token grid the model accepts.
    pub max_grid: (usize, usize, usize),
    /// Channel count of the latents being patchified (codec-dependent).
    pub latent_channels: usize,
}

impl Default for DiTConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            d_model: 256,
            heads: 4,
            mlp_ratio: 4,
            patch: PatchSpec::default(),
            max_grid: (16, 8, 8),
            latent_channels: 48,
        }
    }
}

impl DiTConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.d_model == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::Dimension("all DiT dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Dimension(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Dimension("d_model must be even for sinusoidal features".into()));
        }
        if self.patch.volume() == 0 || self.latent_channels == 0 {
            return Err(Error::Dimension("patch and latent channels must be positive".into()));
        }
        Ok(())
    }

    /// Width of one raw latent-patch token.
    pub fn d_patch(&self) -> usize {
        self.patch.volume() * self.latent_channels
    }

    /// Width consumed by the input projection:
    /// noisy + conditioning + mask weight + clean indicator.
    pub fn d_input(&self) -> usize {
        2 * self.d_patch() + 2
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Even split of the embedding across (frame, row, col) position features.
    fn pos_dims(&self) -> (usize, usize, usize) {
        let d = self.d_model;
        let df = (d / 4) & !1;
        let rest = d - df;
        let dh = (rest / 2) & !1;
        (df, dh, rest - dh)
    }
}

/// One denoiser (M_img or M_vid): architecture, stage tag, and parameters.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: DiTConfig,
    pub stage: Stage,
    pub params: ParamStore<f32>,
}

impl ModelBundle {
    /// Training initialization: modulation and output head start at zero so
    /// every block begins as the identity and the initial velocity is zero.
    pub fn init(config: DiTConfig, stage: Stage, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let init_std = 0.02f32;
        let randn2 = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| {
                let z: f32 = rng.sample(StandardNormal);
                z * init_std
            })
            .into_dyn()
        };
        let d = config.d_model;
        let hidden = d * config.mlp_ratio;
        params.insert("input.w", randn2(&mut rng, config.d_input(), d));
        params.insert("input.b", Array1::<f32>::zeros(d).into_dyn());
        params.insert("time.w1", randn2(&mut rng, d, 4 * d));
        params.insert("time.b1", Array1::<f32>::zeros(4 * d).into_dyn());
        params.insert("time.w2", randn2(&mut rng, 4 * d, d));
        params.insert("time.b2", Array1::<f32>::zeros(d).into_dyn());
        params.insert(
            "null",
            Array1::from_shape_fn(d, |_| {
                let z: f32 = rng.sample(StandardNormal);
                z * init_std
            })
            .into_dyn(),
        );
        for i in 0..config.depth {
            let p = format!("block{i:02}");
            params.insert(&format!("{p}.ada.w"), Array2::<f32>::zeros((d, 6 * d)).into_dyn());
            params.insert(&format!("{p}.ada.b"), Array1::<f32>::zeros(6 * d).into_dyn());
            for nm in ["wq", "wk", "wv", "wo"] {
                params.insert(&format!("{p}.attn.{nm}"), randn2(&mut rng, d, d));
            }
            for nm in ["bq", "bk", "bv", "bo"] {
                params.insert(&format!("{p}.attn.{nm}"), Array1::<f32>::zeros(d).into_dyn());
            }
            params.insert(&format!("{p}.mlp.w1"), randn2(&mut rng, d, hidden));
            params.insert(&format!("{p}.mlp.b1"), Array1::<f32>::zeros(hidden).into_dyn());
            params.insert(&format!("{p}.mlp.w2"), randn2(&mut rng, hidden, d));
            params.insert(&format!("{p}.mlp.b2"), Array1::<f32>::zeros(d).into_dyn());
        }
        params.insert("final.ada.w", Array2::<f32>::zeros((d, 2 * d)).into_dyn());
        params.insert("final.ada.b", Array1::<f32>::zeros(2 * d).into_dyn());
        params.insert("head.w", Array2::<f32>::zeros((d, config.d_patch())).into_dyn());
        params.insert("head.b", Array1::<f32>::zeros(config.d_patch()).into_dyn());
        Ok(Self { config, stage, params })
    }

    /// Every slot filled with small random values. Used by gradient checks
    /// and sampler tests that need a nondegenerate velocity field.
    pub fn init_random(config: DiTConfig, stage: Stage, seed: u64, std: f32) -> Result<Self> {
        let mut bundle = Self::init(config, stage, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for (_, arr) in bundle.params.iter_mut() {
            for v in arr.iter_mut() {
                let z: f32 = rng.sample(StandardNormal);
                *v = z * std;
            }
        }
        Ok(bundle)
    }
}

/// Additive position features for every token in the grid, laid out in the
/// token order used everywhere (temporal-major, then row-major).
pub fn positional_encoding<F: Scalar>(config: &DiTConfig, grid: &TokenGrid) -> Array2<F> {
    let (df, dh, dw) = config.pos_dims();
    let d = config.d_model;
    let mut pos = Array2::zeros((grid.len(), d));
    for f in 0..grid.frames {
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let idx = (f * grid.rows + r) * grid.cols + c;
                let mut row = pos.row_mut(idx);
                let buf = row.as_slice_mut().unwrap();
                sinusoid_into(&mut buf[0..df], f as f64);
                sinusoid_into(&mut buf[df..df + dh], r as f64);
                sinusoid_into(&mut buf[df + dh..df + dh + dw], c as f64);
            }
        }
    }
    pos
}

fn time_features<F: Scalar>(t: f64, d: usize) -> Array1<F> {
    let mut out = Array1::zeros(d);
    sinusoid_into(out.as_slice_mut().unwrap(), t * 1000.0);
    out
}

pub(crate) struct BlockTape<F> {
    xhat1: Array2<F>,
    rstd1: Array1<F>,
    m1: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    att: Vec<Array2<F>>,
    o: Array2<F>,
    attn_out: Array2<F>,
    xhat2: Array2<F>,
    rstd2: Array1<F>,
    m2: Array2<F>,
    hcore: Array2<F>,
    act: Array2<F>,
    mlp_out: Array2<F>,
    mods: Vec<Array1<F>>,
}

pub(crate) struct Tape<F> {
    x_in: Array2<F>,
    temb: Array1<F>,
    time_h: Array1<F>,
    time_h_act: Array1<F>,
    cond: Array1<F>,
    cond_act: Array1<F>,
    blocks: Vec<BlockTape<F>>,
    xhat_f: Array2<F>,
    rstd_f: Array1<F>,
    mod_f: Array2<F>,
    mods_final: Vec<Array1<F>>,
}

fn scale_shift<F: Scalar>(xhat: &Array2<F>, scale: &Array1<F>, shift: &Array1<F>) -> Array2<F> {
    let mut m = xhat.clone();
    let one_plus = scale.mapv(|v| v + F::one());
    m *= &one_plus;
    m += shift;
    m
}

/// Full forward pass. `x_in` already contains all input channels
/// ([N, d_input]), `pos` the per-token position features; returns velocity
/// tokens [N, d_patch] and, on request, the activation tape for backward.
pub(crate) fn forward_inner<F: Scalar>(
    params: &ParamStore<F>,
    config: &DiTConfig,
    x_in: &Array2<F>,
    pos: &Array2<F>,
    t: f64,
    want_tape: bool,
) -> (Array2<F>, Option<Tape<F>>) {
    let d = config.d_model;
    let heads = config.heads;
    let hd = config.head_dim();
    let scale = F::fromf(1.0 / (hd as f64).sqrt());

    // timestep conditioning (one vector shared by every block)
    let temb = time_features::<F>(t, d);
    let time_h = temb.dot(&params.mat("time.w1")) + &params.vec("time.b1");
    let time_h_act = time_h.mapv(silu);
    let time_out = time_h_act.dot(&params.mat("time.w2")) + &params.vec("time.b2");
    let cond = time_out + &params.vec("null");
    let cond_act = cond.mapv(silu);

    let mut x = linear(x_in, params.mat("input.w"), params.vec("input.b"));
    x += pos;

    let mut blocks = Vec::with_capacity(config.depth);
    for i in 0..config.depth {
        let p = format!("block{i:02}");
        let mods_all = cond_act.dot(&params.mat(&format!("{p}.ada.w")))
            + &params.vec(&format!("{p}.ada.b"));
        let mods: Vec<Array1<F>> =
            (0..6).map(|j| mods_all.slice(s![j * d..(j + 1) * d]).to_owned()).collect();

        let x_block_in = x.clone();
        let (xhat1, rstd1) = layernorm(&x);
        let m1 = scale_shift(&xhat1, &mods[1], &mods[0]);

        let q = linear(&m1, params.mat(&format!("{p}.attn.wq")), params.vec(&format!("{p}.attn.bq")));
        let k = linear(&m1, params.mat(&format!("{p}.attn.wk")), params.vec(&format!("{p}.attn.bk")));
        let v = linear(&m1, params.mat(&format!("{p}.attn.wv")), params.vec(&format!("{p}.attn.bv")));

        let n = x.nrows();
        let mut o = Array2::zeros((n, d));
        let mut att = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            softmax_rows(&mut scores);
            let oh = scores.dot(&vh);
            o.slice_mut(cols).assign(&oh);
            att.push(scores);
        }
        let attn_out =
            linear(&o, params.mat(&format!("{p}.attn.wo")), params.vec(&format!("{p}.attn.bo")));
        let mut gated = attn_out.clone();
        gated *= &mods[2];
        let x_mid = &x_block_in + &gated;

        let (xhat2, rstd2) = layernorm(&x_mid);
        let m2 = scale_shift(&xhat2, &mods[4], &mods[3]);
        let hcore =
            linear(&m2, params.mat(&format!("{p}.mlp.w1")), params.vec(&format!("{p}.mlp.b1")));
        let act = hcore.mapv(gelu);
        let mlp_out =
            linear(&act, params.mat(&format!("{p}.mlp.w2")), params.vec(&format!("{p}.mlp.b2")));
        let mut gated2 = mlp_out.clone();
        gated2 *= &mods[5];
        x = &x_mid + &gated2;

        if want_tape {
            blocks.push(BlockTape {
                xhat1,
                rstd1,
                m1,
                q,
                k,
                v,
                att,
                o,
                attn_out,
                xhat2,
                rstd2,
                m2,
                hcore,
                act,
                mlp_out,
                mods,
            });
        }
    }

    let mods_final_all = cond_act.dot(&params.mat("final.ada.w")) + &params.vec("final.ada.b");
    let mods_final: Vec<Array1<F>> =
        (0..2).map(|j| mods_final_all.slice(s![j * d..(j + 1) * d]).to_owned()).collect();
    let (xhat_f, rstd_f) = layernorm(&x);
    let mod_f = scale_shift(&xhat_f, &mods_final[1], &mods_final[0]);
    let out = linear(&mod_f, params.mat("head.w"), params.vec("head.b"));

    let tape = want_tape.then(|| Tape {
        x_in: x_in.clone(),
        temb,
        time_h,
        time_h_act,
        cond,
        cond_act,
        blocks,
        xhat_f,
        rstd_f,
        mod_f,
        mods_final,
    });
    (out, tape)
}

fn outer<F: Scalar>(a: &Array1<F>, b: &Array1<F>) -> Array2<F> {
    let ac = a.view().insert_axis(Axis(1));
    let bc = b.view().insert_axis(Axis(0));
    ac.dot(&bc)
}

fn rows_weighted_sum<F: Scalar>(a: &Array2<F>, b: &Array2<F>) -> Array1<F> {
    (a * b).sum_axis(Axis(0))
}

/// Backward pass through the whole network given d(loss)/d(output tokens).
/// Returns gradients for every parameter slot.
pub(crate) fn backward_inner<F: Scalar>(
    params: &ParamStore<F>,
    config: &DiTConfig,
    tape: &Tape<F>,
    d_out: &Array2<F>,
) -> ParamStore<F> {
    let d = config.d_model;
    let heads = config.heads;
    let hd = config.head_dim();
    let scale = F::fromf(1.0 / (hd as f64).sqrt());
    let mut grads = params.zeros_like();
    let mut d_cond_act: Array1<F> = Array1::zeros(d);

    // head and final modulation
    let (d_mod_f, d_head_w, d_head_b) = linear_backward(&tape.mod_f, params.mat("head.w"), d_out);
    grads.get_mut("head.w").assign(&d_head_w.into_dyn());
    grads.get_mut("head.b").assign(&d_head_b.into_dyn());

    let one_plus_f = tape.mods_final[1].mapv(|v| v + F::one());
    let mut d_xhat_f = d_mod_f.clone();
    d_xhat_f *= &one_plus_f;
    let d_scale_f = rows_weighted_sum(&d_mod_f, &tape.xhat_f);
    let d_shift_f = d_mod_f.sum_axis(Axis(0));
    let mut d_mods_final = Array1::zeros(2 * d);
    d_mods_final.slice_mut(s![0..d]).assign(&d_shift_f);
    d_mods_final.slice_mut(s![d..2 * d]).assign(&d_scale_f);
    grads
        .get_mut("final.ada.w")
        .assign(&outer(&tape.cond_act, &d_mods_final).into_dyn());
    grads.get_mut("final.ada.b").assign(&d_mods_final.clone().into_dyn());
    d_cond_act += &params.mat("final.ada.w").dot(&d_mods_final);

    let mut dx = layernorm_backward(&d_xhat_f, &tape.xhat_f, &tape.rstd_f);

    for (i, bt) in tape.blocks.iter().enumerate().rev() {
        let p = format!("block{i:02}");

        // x = x_mid + gate2 * mlp_out
        let d_gate2 = rows_weighted_sum(&dx, &bt.mlp_out);
        let mut d_mlp_out = dx.clone();
        d_mlp_out *= &bt.mods[5];
        let mut d_x_mid = dx; // residual branch

        let (d_act, d_w2, d_b2) =
            linear_backward(&bt.act, params.mat(&format!("{p}.mlp.w2")), &d_mlp_out);
        grads.get_mut(&format!("{p}.mlp.w2")).assign(&d_w2.into_dyn());
        grads.get_mut(&format!("{p}.mlp.b2")).assign(&d_b2.into_dyn());
        let mut d_hcore = d_act;
        ndarray::Zip::from(&mut d_hcore).and(&bt.hcore).for_each(|g, &h| {
            *g *= gelu_derivative(h);
        });
        let (d_m2, d_w1, d_b1) =
            linear_backward(&bt.m2, params.mat(&format!("{p}.mlp.w1")), &d_hcore);
        grads.get_mut(&format!("{p}.mlp.w1")).assign(&d_w1.into_dyn());
        grads.get_mut(&format!("{p}.mlp.b1")).assign(&d_b1.into_dyn());

        let one_plus2 = bt.mods[4].mapv(|v| v + F::one());
        let mut d_xhat2 = d_m2.clone();
        d_xhat2 *= &one_plus2;
        let d_scale2 = rows_weighted_sum(&d_m2, &bt.xhat2);
        let d_shift2 = d_m2.sum_axis(Axis(0));
        d_x_mid += &layernorm_backward(&d_xhat2, &bt.xhat2, &bt.rstd2);

        // x_mid = x_in + gate1 * attn_out
        let d_gate1 = rows_weighted_sum(&d_x_mid, &bt.attn_out);
        let mut d_attn_out = d_x_mid.clone();
        d_attn_out *= &bt.mods[2];
        let mut d_x_in = d_x_mid;

        let (d_o, d_wo, d_bo) =
            linear_backward(&bt.o, params.mat(&format!("{p}.attn.wo")), &d_attn_out);
        grads.get_mut(&format!("{p}.attn.wo")).assign(&d_wo.into_dyn());
        grads.get_mut(&format!("{p}.attn.bo")).assign(&d_bo.into_dyn());

        let n = d_o.nrows();
        let mut d_q = Array2::zeros((n, d));
        let mut d_k = Array2::zeros((n, d));
        let mut d_v = Array2::zeros((n, d));
        for h in 0..heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let d_oh = d_o.slice(cols);
            let a = &bt.att[h];
            let vh = bt.v.slice(cols);
            let qh = bt.q.slice(cols);
            let kh = bt.k.slice(cols);
            let d_a = d_oh.dot(&vh.t());
            d_v.slice_mut(cols).assign(&a.t().dot(&d_oh));
            let mut d_scores = softmax_backward(&d_a, a);
            d_scores *= scale;
            d_q.slice_mut(cols).assign(&d_scores.dot(&kh));
            d_k.slice_mut(cols).assign(&d_scores.t().dot(&qh));
        }

        let (d_m1_q, d_wq, d_bq) =
            linear_backward(&bt.m1, params.mat(&format!("{p}.attn.wq")), &d_q);
        let (d_m1_k, d_wk, d_bk) =
            linear_backward(&bt.m1, params.mat(&format!("{p}.attn.wk")), &d_k);
        let (d_m1_v, d_wv, d_bv) =
            linear_backward(&bt.m1, params.mat(&format!("{p}.attn.wv")), &d_v);
        grads.get_mut(&format!("{p}.attn.wq")).assign(&d_wq.into_dyn());
        grads.get_mut(&format!("{p}.attn.bq")).assign(&d_bq.into_dyn());
        grads.get_mut(&format!("{p}.attn.wk")).assign(&d_wk.into_dyn());
        grads.get_mut(&format!("{p}.attn.bk")).assign(&d_bk.into_dyn());
        grads.get_mut(&format!("{p}.attn.wv")).assign(&d_wv.into_dyn());
        grads.get_mut(&format!("{p}.attn.bv")).assign(&d_bv.into_dyn());
        let d_m1 = d_m1_q + d_m1_k + d_m1_v;

        let one_plus1 = bt.mods[1].mapv(|v| v + F::one());
        let mut d_xhat1 = d_m1.clone();
        d_xhat1 *= &one_plus1;
        let d_scale1 = rows_weighted_sum(&d_m1, &bt.xhat1);
        let d_shift1 = d_m1.sum_axis(Axis(0));
        d_x_in += &layernorm_backward(&d_xhat1, &bt.xhat1, &bt.rstd1);

        let mut d_mods = Array1::zeros(6 * d);
        for (j, g) in [d_shift1, d_scale1, d_gate1, d_shift2, d_scale2, d_gate2]
            .into_iter()
            .enumerate()
        {
            d_mods.slice_mut(s![j * d..(j + 1) * d]).assign(&g);
        }
        grads
            .get_mut(&format!("{p}.ada.w"))
            .assign(&outer(&tape.cond_act, &d_mods).into_dyn());
        grads.get_mut(&format!("{p}.ada.b")).assign(&d_mods.clone().into_dyn());
        d_cond_act += &params.mat(&format!("{p}.ada.w")).dot(&d_mods);

        dx = d_x_in;
    }

    // input projection (positions are constants)
    let (_, d_in_w, d_in_b) = linear_backward(&tape.x_in, params.mat("input.w"), &dx);
    grads.get_mut("input.w").assign(&d_in_w.into_dyn());
    grads.get_mut("input.b").assign(&d_in_b.into_dyn());

    // conditioning pathway
    let mut d_cond = d_cond_act;
    ndarray::Zip::from(&mut d_cond).and(&tape.cond).for_each(|g, &c| {
        *g *= silu_derivative(c);
    });
    grads.get_mut("null").assign(&d_cond.clone().into_dyn());
    let d_time_out = d_cond;
    grads
        .get_mut("time.w2")
        .assign(&outer(&tape.time_h_act, &d_time_out).into_dyn());
    grads.get_mut("time.b2").assign(&d_time_out.clone().into_dyn());
    let mut d_time_h = params.mat("time.w2").dot(&d_time_out);
    ndarray::Zip::from(&mut d_time_h).and(&tape.time_h).for_each(|g, &h| {
        *g *= silu_derivative(h);
    });
    grads
        .get_mut("time.w1")
        .assign(&outer(&tape.temb, &d_time_h).into_dyn());
    grads.get_mut("time.b1").assign(&d_time_h.into_dyn());

    grads
}

/// Builds the full input matrix from a DenoiserInput, appending the clean
/// indicator column (zeros when absent).
pub(crate) fn assemble_matrix(input: &DenoiserInput, d_input: usize) -> Result<Array2<f32>> {
    let n = input.tokens.nrows();
    let width = input.tokens.ncols();
    if width + 1 != d_input {
        return Err(Error::ShapeMismatch(format!(
            "denoiser input has width {width}, model expects {}",
            d_input - 1
        )));
    }
    let mut x = Array2::zeros((n, d_input));
    x.slice_mut(s![.., 0..width]).assign(&input.tokens);
    if let Some(ind) = &input.indicator {
        if ind.len() != n {
            return Err(Error::ShapeMismatch("indicator length != token count".into()));
        }
        x.slice_mut(s![.., width]).assign(ind);
    }
    Ok(x)
}

/// Predicted velocity for noisy-plus-conditioning tokens at time `t`.
pub fn forward(model: &ModelBundle, input: &DenoiserInput, t: f32) -> Result<TokenSequence> {
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("timestep {t}")));
    }
    let cfg = &model.config;
    let (gf, gr, gc) = (input.grid.frames, input.grid.rows, input.grid.cols);
    let (mf, mr, mc) = cfg.max_grid;
    if gf > mf || gr > mr || gc > mc {
        return Err(Error::Dimension(format!(
            "token grid {gf}x{gr}x{gc} exceeds model max {mf}x{mr}x{mc}"
        )));
    }
    if input.tokens.nrows() != input.grid.len() {
        return Err(Error::ShapeMismatch("token count does not match grid".into()));
    }
    let x = assemble_matrix(input, cfg.d_input())?;
    let pos = positional_encoding::<f32>(cfg, &input.grid);
    let (out, _) = forward_inner::<f32>(&model.params, cfg, &x, &pos, t as f64, false);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("denoiser activations overflowed".into()));
    }
    Ok(TokenSequence { tokens: out, grid: input.grid, patch: input.patch })
}

/// Predicted velocity with caller-supplied position rows; lets tests permute
/// tokens and positions together to check attention equivariance.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn forward_with_positions(
    model: &ModelBundle,
    input: &DenoiserInput,
    t: f32,
    positions: &Array2<f32>,
) -> Result<Array2<f32>> {
    let cfg = &model.config;
    let x = assemble_matrix(input, cfg.d_input())?;
    let (out, _) = forward_inner::<f32>(&model.params, cfg, &x, positions, t as f64, false);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inp_tpu::Stage;

    fn tiny_config() -> DiTConfig {
        DiTConfig {
            depth: 2,
            d_model: 16,
            heads: 2,
            mlp_ratio: 2,
            patch: PatchSpec { t: 1, h: 1, w: 1 },
            max_grid: (4, 4, 4),
            latent_channels: 3,
        }
    }

    fn tiny_input(seed: u64, grid: TokenGrid, cfg: &DiTConfig) -> DenoiserInput {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.len();
        let tokens =
            Array2::from_shape_fn((n, 2 * cfg.d_patch() + 1), |_| rng.random::<f32>() - 0.5);
        DenoiserInput { tokens, grid, patch: cfg.patch, indicator: None }
    }

    #[test]
    fn zero_params_with_output_bias_give_constant_output() {
        let cfg = tiny_config();
        let mut model = ModelBundle::init(cfg.clone(), Stage::Image, 0).unwrap();
        for (_, arr) in model.params.iter_mut() {
            arr.fill(0.0);
        }
        model.params.vec_mut("head.b").fill(0.75);
        let grid = TokenGrid { frames: 2, rows: 2, cols: 2 };
        let input = tiny_input(3, grid, &cfg);
        let out = forward(&model, &input, 0.4).unwrap();
        for v in out.tokens.iter() {
            assert_eq!(*v, 0.75);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config();
        let model = ModelBundle::init_random(cfg.clone(), Stage::Image, 5, 0.05).unwrap();
        let grid = TokenGrid { frames: 1, rows: 3, cols: 2 };
        let input = tiny_input(4, grid, &cfg);
        let a = forward(&model, &input, 0.7).unwrap();
        let b = forward(&model, &input, 0.7).unwrap();
        assert_eq!(a.tokens, b.tokens);
    }

    #[test]
    fn permuting_tokens_and_positions_permutes_output() {
        let cfg = tiny_config();
        let model = ModelBundle::init_random(cfg.clone(), Stage::Image, 6, 0.05).unwrap();
        let grid = TokenGrid { frames: 1, rows: 2, cols: 2 };
        let input = tiny_input(9, grid, &cfg);
        let pos = positional_encoding::<f32>(&cfg, &grid);
        let out = forward_with_positions(&model, &input, 0.3, &pos).unwrap();

        let perm = [2usize, 0, 3, 1];
        let mut tokens_p = input.tokens.clone();
        let mut pos_p = pos.clone();
        for (dst, &src) in perm.iter().enumerate() {
            tokens_p.row_mut(dst).assign(&input.tokens.row(src));
            pos_p.row_mut(dst).assign(&pos.row(src));
        }
        let input_p = DenoiserInput { tokens: tokens_p, grid, patch: cfg.patch, indicator: None };
        let out_p = forward_with_positions(&model, &input_p, 0.3, &pos_p).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..out.ncols() {
                let a = out[[src, j]];
                let b = out_p[[dst, j]];
                assert!((a - b).abs() < 1e-5, "row {src}->{dst} col {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn grid_larger_than_max_is_rejected() {
        let cfg = tiny_config();
        let model = ModelBundle::init(cfg.clone(), Stage::Image, 0).unwrap();
        let grid = TokenGrid { frames: 5, rows: 1, cols: 1 };
        let input = tiny_input(0, grid, &cfg);
        assert!(forward(&model, &input, 0.5).is_err());
    }
}
