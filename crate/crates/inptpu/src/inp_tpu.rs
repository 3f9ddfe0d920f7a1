//! The unified inpainting-based token process unit: blends masked-video
//! tokens with spatially aligned reference tokens through a per-token convex
//! combination and assembles the denoiser's input channels.
//!
//! Nothing in this module owns a trainable parameter; the conditioning path
//! reuses the denoiser's own attention over blended tokens.

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::masking::place_reference;
use crate::tokenizer::{mask_to_token_weights, patchify, PatchSpec, TokenGrid, TokenMask, TokenProjection, TokenSequence};
use crate::video::{MaskVideo, ReferenceImage, VideoTensor};
use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

/// Number of trainable parameters introduced by the conditioning path.
pub const TRAINABLE_PARAMETERS: usize = 0;

/// Which denoiser a condition is being built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Image,
    Video,
}

/// Everything the denoiser needs besides the noisy tokens.
#[derive(Debug, Clone)]
pub struct ConditionBundle {
    pub x_cond: TokenSequence,
    pub x_mask: TokenMask,
    /// Clean first-frame tokens (video stage only); the sampler keeps the
    /// first frame's token rows pinned to these.
    pub keyframe_tokens: Option<TokenSequence>,
}

impl ConditionBundle {
    pub fn with_keyframe(mut self, keyframe: TokenSequence) -> Result<Self> {
        if keyframe.len() != self.x_cond.grid.tokens_per_frame() * keyframe.grid.frames {
            return Err(Error::ShapeMismatch(
                "keyframe token rows do not tile the video grid".into(),
            ));
        }
        if keyframe.dim() != self.x_cond.dim() {
            return Err(Error::ShapeMismatch("keyframe token width mismatch".into()));
        }
        self.keyframe_tokens = Some(keyframe);
        Ok(self)
    }

    /// Token rows pinned to the keyframe (the first frame's rows).
    pub fn frozen_rows(&self) -> usize {
        match &self.keyframe_tokens {
            Some(kf) => kf.len(),
            None => 0,
        }
    }

    /// Same condition with reference fusion disabled: blend weights and the
    /// mask channel forced to zero, so the conditioning stream reduces to the
    /// masked video alone.
    pub fn without_reference_fusion(&self, x_tilde: &TokenSequence) -> Result<Self> {
        if x_tilde.tokens.dim() != self.x_cond.tokens.dim() {
            return Err(Error::ShapeMismatch("masked-video tokens shape mismatch".into()));
        }
        Ok(Self {
            x_cond: x_tilde.clone(),
            x_mask: TokenMask {
                weights: Array1::zeros(self.x_mask.weights.len()),
                grid: self.x_mask.grid,
            },
            keyframe_tokens: self.keyframe_tokens.clone(),
        })
    }
}

/// Per-token convex combination `(1 - w) * x_tilde + w * x_ref`, the weight
/// broadcast across the embedding channels.
pub fn blend_tokens(
    x_tilde: &TokenSequence,
    x_ref: &TokenSequence,
    x_m: &TokenMask,
) -> Result<TokenSequence> {
    if x_tilde.tokens.dim() != x_ref.tokens.dim()
        || x_tilde.grid != x_ref.grid
        || x_tilde.patch != x_ref.patch
    {
        return Err(Error::ShapeMismatch(format!(
            "token streams disagree: {:?} vs {:?}",
            x_tilde.tokens.dim(),
            x_ref.tokens.dim()
        )));
    }
    if x_m.weights.len() != x_tilde.len() || x_m.grid != x_tilde.grid {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} weights for {} tokens",
            x_m.weights.len(),
            x_tilde.len()
        )));
    }
    let mut out = x_tilde.tokens.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let w = x_m.weights[i];
        if w == 0.0 {
            continue; // bit-identical passthrough outside the mask
        }
        let r = x_ref.tokens.row(i);
        row.zip_mut_with(&r, |a, &b| *a = (1.0 - w) * *a + w * b);
    }
    Ok(TokenSequence { tokens: out, grid: x_tilde.grid, patch: x_tilde.patch })
}

/// Builds condition bundles from pixel-space inputs. Owns no parameters —
/// just the codec/patch geometry shared by every stream.
#[derive(Debug, Clone, Copy)]
pub struct ConditionBuilder {
    pub codec: Codec,
    pub patch: PatchSpec,
}

impl Default for ConditionBuilder {
    fn default() -> Self {
        Self { codec: Codec::default(), patch: PatchSpec::default() }
    }
}

impl ConditionBuilder {
    /// encode + patchify with the identity projection.
    pub fn tokens_of(&self, video: &VideoTensor) -> Result<TokenSequence> {
        let latent = self.codec.encode(video)?;
        patchify(&latent, self.patch, &TokenProjection::Identity)
    }

    pub fn weights_of(&self, mask: &MaskVideo) -> Result<TokenMask> {
        let (f, h, w) = mask.dims();
        if h % self.codec.spatial_factor != 0 || w % self.codec.spatial_factor != 0 {
            return Err(Error::Dimension("mask size not divisible by codec factor".into()));
        }
        mask_to_token_weights(
            mask,
            f / self.codec.temporal_factor,
            h / self.codec.spatial_factor,
            w / self.codec.spatial_factor,
            self.patch,
        )
    }

    /// The full conditioning pipeline: place the reference per frame, stack
    /// it temporally, encode both streams, patchify, reduce the mask to token
    /// weights, and blend.
    pub fn build_condition(
        &self,
        masked_video: &VideoTensor,
        reference: &ReferenceImage,
        mask: &MaskVideo,
        stage: Stage,
    ) -> Result<ConditionBundle> {
        let (f, h, w, _) = masked_video.dims();
        if mask.dims() != (f, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} does not match video {:?}",
                mask.dims(),
                (f, h, w)
            )));
        }
        if stage == Stage::Image && f != 1 {
            return Err(Error::Dimension(format!(
                "image stage takes a single frame, got {f}"
            )));
        }
        let mut ref_frames = ndarray::Array4::zeros((f, h, w, masked_video.dims().3));
        for t in 0..f {
            let placed = place_reference(reference, mask.frame(t), (h, w))?;
            ref_frames.index_axis_mut(Axis(0), t).assign(&placed);
        }
        let ref_video = VideoTensor::new(ref_frames)?;
        self.build_condition_prepared(masked_video, &ref_video, mask)
    }

    /// Same as `build_condition`, but with a caller-prepared reference video
    /// (used by the keyframe canvas, whose panels are placed separately).
    pub fn build_condition_prepared(
        &self,
        masked_video: &VideoTensor,
        placed_reference: &VideoTensor,
        mask: &MaskVideo,
    ) -> Result<ConditionBundle> {
        if placed_reference.dims() != masked_video.dims() {
            return Err(Error::ShapeMismatch(
                "placed reference video must match the masked video shape".into(),
            ));
        }
        let x_tilde = self.tokens_of(masked_video)?;
        let x_ref = self.tokens_of(placed_reference)?;
        let x_m = self.weights_of(mask)?;
        let x_cond = blend_tokens(&x_tilde, &x_ref, &x_m)?;
        Ok(ConditionBundle { x_cond, x_mask: x_m, keyframe_tokens: None })
    }
}

/// Channel-stacked input for the denoiser: `[noisy | x_cond | weight]`, plus
/// an optional clean-indicator column appended by the model.
#[derive(Debug, Clone)]
pub struct DenoiserInput {
    pub tokens: Array2<f32>,
    pub grid: TokenGrid,
    pub patch: PatchSpec,
    pub indicator: Option<Array1<f32>>,
}

/// Concatenates noisy tokens with the condition channel-wise per token,
/// giving width `2d + 1`.
pub fn assemble_input(x_rand: &TokenSequence, bundle: &ConditionBundle) -> Result<DenoiserInput> {
    let n = x_rand.len();
    let d = x_rand.dim();
    if bundle.x_cond.len() != n || bundle.x_cond.dim() != d || bundle.x_cond.grid != x_rand.grid {
        return Err(Error::ShapeMismatch(format!(
            "noise tokens {}x{} do not match condition {}x{}",
            n,
            d,
            bundle.x_cond.len(),
            bundle.x_cond.dim()
        )));
    }
    if bundle.x_mask.weights.len() != n {
        return Err(Error::ShapeMismatch("mask weight count mismatch".into()));
    }
    let mut tokens = Array2::zeros((n, 2 * d + 1));
    tokens.slice_mut(s![.., 0..d]).assign(&x_rand.tokens);
    tokens.slice_mut(s![.., d..2 * d]).assign(&bundle.x_cond.tokens);
    tokens.slice_mut(s![.., 2 * d]).assign(&bundle.x_mask.weights);
    Ok(DenoiserInput { tokens, grid: x_rand.grid, patch: x_rand.patch, indicator: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{extend_reference_temporal, masked_fill};
    use ndarray::{Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(tokens: Array2<f32>, frames: usize, rows: usize, cols: usize) -> TokenSequence {
        TokenSequence {
            tokens,
            grid: TokenGrid { frames, rows, cols },
            patch: PatchSpec::default(),
        }
    }

    fn mask_of(weights: Vec<f32>, frames: usize, rows: usize, cols: usize) -> TokenMask {
        TokenMask { weights: Array1::from(weights), grid: TokenGrid { frames, rows, cols } }
    }

    #[test]
    fn zero_weight_passthrough_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array2::from_shape_fn((4, 6), |_| rng.random::<f32>());
        let b = Array2::from_shape_fn((4, 6), |_| rng.random::<f32>());
        let out = blend_tokens(
            &seq(a.clone(), 1, 2, 2),
            &seq(b, 1, 2, 2),
            &mask_of(vec![0.0; 4], 1, 2, 2),
        )
        .unwrap();
        assert_eq!(out.tokens, a);
    }

    #[test]
    fn unit_weight_returns_reference_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Array2::from_shape_fn((4, 6), |_| rng.random::<f32>());
        let b = Array2::from_shape_fn((4, 6), |_| rng.random::<f32>());
        let out = blend_tokens(
            &seq(a, 1, 2, 2),
            &seq(b.clone(), 1, 2, 2),
            &mask_of(vec![1.0; 4], 1, 2, 2),
        )
        .unwrap();
        assert_eq!(out.tokens, b);
    }

    #[test]
    fn half_weight_midpoint() {
        let a = Array2::from_elem((1, 3), 2.0f32);
        let b = Array2::from_elem((1, 3), 4.0f32);
        let out =
            blend_tokens(&seq(a, 1, 1, 1), &seq(b, 1, 1, 1), &mask_of(vec![0.5], 1, 1, 1)).unwrap();
        assert!(out.tokens.iter().all(|&v| (v - 3.0).abs() < 1e-7));
    }

    #[test]
    fn blend_is_homogeneous_in_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((6, 4), |_| rng.random::<f32>() - 0.5);
        let b = Array2::from_shape_fn((6, 4), |_| rng.random::<f32>() - 0.5);
        let w: Vec<f32> = (0..6).map(|_| rng.random()).collect();
        let m = mask_of(w, 1, 2, 3);
        let base =
            blend_tokens(&seq(a.clone(), 1, 2, 3), &seq(b.clone(), 1, 2, 3), &m).unwrap();
        let scaled =
            blend_tokens(&seq(&a * 2.5, 1, 2, 3), &seq(&b * 2.5, 1, 2, 3), &m).unwrap();
        for (x, y) in base.tokens.iter().zip(scaled.tokens.iter()) {
            assert!((x * 2.5 - y).abs() < 1e-5);
        }
    }

    #[test]
    fn blend_convexity_keeps_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let lo = rng.random::<f32>() - 1.0;
            let hi = lo + rng.random::<f32>() + 0.1;
            let a = Array2::from_shape_fn((5, 3), |_| lo + rng.random::<f32>() * (hi - lo));
            let b = Array2::from_shape_fn((5, 3), |_| lo + rng.random::<f32>() * (hi - lo));
            let w: Vec<f32> = (0..5).map(|_| rng.random()).collect();
            let out =
                blend_tokens(&seq(a, 5, 1, 1), &seq(b, 5, 1, 1), &mask_of(w, 5, 1, 1)).unwrap();
            for &v in out.tokens.iter() {
                assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn conditioning_path_owns_no_parameters() {
        assert_eq!(TRAINABLE_PARAMETERS, 0);
    }

    fn toy_scene() -> (VideoTensor, ReferenceImage, MaskVideo) {
        let mut frames = Array4::from_elem((2, 16, 16, 3), 0.2f32);
        let mut masks = Array3::zeros((2, 16, 16));
        for t in 0..2 {
            for r in 4..10 {
                for c in (4 + t)..(10 + t) {
                    for ch in 0..3 {
                        frames[[t, r, c, ch]] = 0.9;
                    }
                    masks[[t, r, c]] = 1.0;
                }
            }
        }
        let video = VideoTensor::new(frames).unwrap();
        let mask = MaskVideo::new(masks).unwrap();
        let reference =
            ReferenceImage::new(Array3::from_elem((6, 6, 3), 0.9f32)).unwrap();
        (video, reference, mask)
    }

    #[test]
    fn zero_mask_condition_equals_masked_video_tokens() {
        let (video, reference, _) = toy_scene();
        let mask = MaskVideo::new(Array3::zeros((2, 16, 16))).unwrap();
        let builder = ConditionBuilder::default();
        // an all-zero mask has no foreground for placement, so prepare the
        // reference stream directly
        let placed = VideoTensor::new(Array4::from_elem((2, 16, 16, 3), 0.5f32)).unwrap();
        let bundle = builder.build_condition_prepared(&video, &placed, &mask).unwrap();
        let expect = builder.tokens_of(&video).unwrap();
        assert_eq!(bundle.x_cond.tokens, expect.tokens);
    }

    #[test]
    fn full_mask_condition_equals_reference_tokens() {
        let (_, reference, _) = toy_scene();
        let mask = MaskVideo::new(Array3::from_elem((1, 16, 16), 1.0)).unwrap();
        let builder = ConditionBuilder::default();
        let placed = place_reference(&reference, mask.frame(0), (16, 16)).unwrap();
        let placed_video = extend_reference_temporal(&placed, 1).unwrap();
        let bundle = builder
            .build_condition(&placed_video, &reference, &mask, Stage::Image)
            .unwrap();
        let expect = builder.tokens_of(&placed_video).unwrap();
        assert_eq!(bundle.x_cond.tokens, expect.tokens);
    }

    #[test]
    fn build_condition_matches_straight_line_composition() {
        // the packaged pipeline must equal an explicit composition of the
        // five steps it documents
        let (video, reference, mask) = toy_scene();
        let masked = masked_fill(&video, &mask, 0.5).unwrap();
        let builder = ConditionBuilder::default();
        let bundle = builder.build_condition(&masked, &reference, &mask, Stage::Video).unwrap();

        let (f, h, w, _) = masked.dims();
        let mut ref_frames = Array4::zeros((f, h, w, 3));
        for t in 0..f {
            let placed = place_reference(&reference, mask.frame(t), (h, w)).unwrap();
            ref_frames.index_axis_mut(Axis(0), t).assign(&placed);
        }
        let ref_video = VideoTensor::new(ref_frames).unwrap();
        let x_tilde = builder.tokens_of(&masked).unwrap();
        let x_ref = builder.tokens_of(&ref_video).unwrap();
        let x_m = builder.weights_of(&mask).unwrap();
        let expect = blend_tokens(&x_tilde, &x_ref, &x_m).unwrap();

        assert_eq!(bundle.x_cond.tokens, expect.tokens);
        assert_eq!(bundle.x_mask.weights, x_m.weights);
    }

    #[test]
    fn per_frame_placement_follows_the_moving_mask() {
        let (video, reference, mask) = toy_scene();
        let masked = masked_fill(&video, &mask, 0.5).unwrap();
        let builder = ConditionBuilder::default();
        let bundle = builder.build_condition(&masked, &reference, &mask, Stage::Video).unwrap();
        // frame 1's mask is shifted one column; its reference tokens must
        // differ from frame 0's
        let tpf = bundle.x_cond.grid.tokens_per_frame();
        let f0 = bundle.x_cond.tokens.slice(s![0..tpf, ..]).to_owned();
        let f1 = bundle.x_cond.tokens.slice(s![tpf..2 * tpf, ..]).to_owned();
        assert_ne!(f0, f1);
    }

    #[test]
    fn image_stage_rejects_multi_frame_input() {
        let (video, reference, mask) = toy_scene();
        let builder = ConditionBuilder::default();
        assert!(builder.build_condition(&video, &reference, &mask, Stage::Image).is_err());
    }

    #[test]
    fn assemble_width_and_field_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noisy = Array2::from_shape_fn((2, 4), |_| rng.random::<f32>());
        let cond = Array2::from_shape_fn((2, 4), |_| rng.random::<f32>());
        let x_rand = seq(noisy.clone(), 2, 1, 1);
        let bundle = ConditionBundle {
            x_cond: seq(cond.clone(), 2, 1, 1),
            x_mask: mask_of(vec![0.25, 0.75], 2, 1, 1),
            keyframe_tokens: None,
        };
        let input = assemble_input(&x_rand, &bundle).unwrap();
        assert_eq!(input.tokens.dim(), (2, 9));
        assert_eq!(input.tokens[[0, 8]], 0.25);

        // zero noise zeroes exactly the first d channels
        let zero = seq(Array2::zeros((2, 4)), 2, 1, 1);
        let z = assemble_input(&zero, &bundle).unwrap();
        assert!(z.tokens.slice(s![.., 0..4]).iter().all(|&v| v == 0.0));

        // perturbing the condition never touches the first d channels
        let mut bundle2 = bundle.clone();
        bundle2.x_cond.tokens += 5.0;
        let p = assemble_input(&x_rand, &bundle2).unwrap();
        assert_eq!(
            p.tokens.slice(s![.., 0..4]).to_owned(),
            input.tokens.slice(s![.., 0..4]).to_owned()
        );
        assert_ne!(
            p.tokens.slice(s![.., 4..8]).to_owned(),
            input.tokens.slice(s![.., 4..8]).to_owned()
        );
    }
}
