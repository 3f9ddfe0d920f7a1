//! Latent↔token conversion (patch embedding and its inverse) and
//! mask-to-token-weight reduction.
//!
//! Token ordering is temporal-major, then row-major spatial:
//! `index = (f * rows + r) * cols + c`. Within one token, the raw feature
//! order is patch offsets `(dt, dh, dw)` row-major with the latent channel
//! fastest: `feature = ((dt*ph + dh)*pw + dw) * c_lat + ch`. Every module
//! that touches tokens depends on these two conventions.

use crate::codec::LatentTensor;
use crate::error::{Error, Result};
use crate::util::resize_bilinear_2d;
use crate::video::MaskVideo;
use ndarray::{Array1, Array2};

/// Patch sizes in latent units: (p_t, p_h, p_w).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PatchSpec {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl PatchSpec {
    pub fn volume(&self) -> usize {
        self.t * self.h * self.w
    }
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { t: 1, h: 2, w: 2 }
    }
}

/// Token-grid dimensions: (frames, rows, cols) counted in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenGrid {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.frames * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tokens per latent frame group.
    pub fn tokens_per_frame(&self) -> usize {
        self.rows * self.cols
    }
}

/// N×d token matrix plus the grid/patch metadata needed to invert it.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f32>,
    pub grid: TokenGrid,
    pub patch: PatchSpec,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// Per-token scalar weights in [0,1], aligned with a TokenSequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMask {
    pub weights: Array1<f32>,
    pub grid: TokenGrid,
}

/// Optional linear map applied after patch extraction (or before folding
/// back). The pipeline uses `Identity`; the denoiser owns its projections.
#[derive(Debug, Clone)]
pub enum TokenProjection {
    Identity,
    Linear { weight: Array2<f32>, bias: Array1<f32> },
}

impl TokenProjection {
    fn apply(&self, raw: Array2<f32>) -> Result<Array2<f32>> {
        match self {
            TokenProjection::Identity => Ok(raw),
            TokenProjection::Linear { weight, bias } => {
                if weight.nrows() != raw.ncols() {
                    return Err(Error::ShapeMismatch(format!(
                        "projection expects input dim {}, tokens have {}",
                        weight.nrows(),
                        raw.ncols()
                    )));
                }
                if bias.len() != weight.ncols() {
                    return Err(Error::ShapeMismatch("projection bias/width mismatch".into()));
                }
                Ok(raw.dot(weight) + bias)
            }
        }
    }
}

/// Splits a latent into patches and flattens each to one token row.
pub fn patchify(
    latent: &LatentTensor,
    patch: PatchSpec,
    projection: &TokenProjection,
) -> Result<TokenSequence> {
    let (f, h, w, c) = latent.dims();
    if patch.volume() == 0 {
        return Err(Error::Dimension("patch dims must be positive".into()));
    }
    if f % patch.t != 0 || h % patch.h != 0 || w % patch.w != 0 {
        return Err(Error::Dimension(format!(
            "latent {f}x{h}x{w} not divisible by patch {}x{}x{}",
            patch.t, patch.h, patch.w
        )));
    }
    let grid = TokenGrid { frames: f / patch.t, rows: h / patch.h, cols: w / patch.w };
    let d_raw = patch.volume() * c;
    let mut raw = Array2::zeros((grid.len(), d_raw));
    for gf in 0..grid.frames {
        for gr in 0..grid.rows {
            for gc in 0..grid.cols {
                let token = (gf * grid.rows + gr) * grid.cols + gc;
                for dt in 0..patch.t {
                    for dh in 0..patch.h {
                        for dw in 0..patch.w {
                            let base = ((dt * patch.h + dh) * patch.w + dw) * c;
                            for ch in 0..c {
                                raw[[token, base + ch]] = latent.data[[
                                    gf * patch.t + dt,
                                    gr * patch.h + dh,
                                    gc * patch.w + dw,
                                    ch,
                                ]];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(TokenSequence { tokens: projection.apply(raw)?, grid, patch })
}

/// Folds tokens back into a latent. Exact inverse of `patchify` when the
/// projections compose to the identity.
pub fn unpatchify(
    tokens: &TokenSequence,
    out_projection: &TokenProjection,
    spatial_factor: usize,
    temporal_factor: usize,
) -> Result<LatentTensor> {
    let grid = tokens.grid;
    let patch = tokens.patch;
    if tokens.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "token count {} inconsistent with grid {}x{}x{}",
            tokens.len(),
            grid.frames,
            grid.rows,
            grid.cols
        )));
    }
    let raw = out_projection.apply(tokens.tokens.clone())?;
    let d_raw = raw.ncols();
    if d_raw % patch.volume() != 0 {
        return Err(Error::Dimension(format!(
            "token width {} not divisible by patch volume {}",
            d_raw,
            patch.volume()
        )));
    }
    let c = d_raw / patch.volume();
    let (f, h, w) = (grid.frames * patch.t, grid.rows * patch.h, grid.cols * patch.w);
    let mut data = ndarray::Array4::zeros((f, h, w, c));
    for gf in 0..grid.frames {
        for gr in 0..grid.rows {
            for gc in 0..grid.cols {
                let token = (gf * grid.rows + gr) * grid.cols + gc;
                for dt in 0..patch.t {
                    for dh in 0..patch.h {
                        for dw in 0..patch.w {
                            let base = ((dt * patch.h + dh) * patch.w + dw) * c;
                            for ch in 0..c {
                                data[[
                                    gf * patch.t + dt,
                                    gr * patch.h + dh,
                                    gc * patch.w + dw,
                                    ch,
                                ]] = raw[[token, base + ch]];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(LatentTensor { data, spatial_factor, temporal_factor })
}

/// Downsamples a pixel mask to the latent grid (bilinear, per frame), then
/// average-pools each patch block to one scalar weight per token.
pub fn mask_to_token_weights(
    mask: &MaskVideo,
    latent_frames: usize,
    latent_h: usize,
    latent_w: usize,
    patch: PatchSpec,
) -> Result<TokenMask> {
    let (mf, _, _) = mask.dims();
    if mf != latent_frames {
        return Err(Error::Dimension(format!(
            "mask has {mf} frames, latent expects {latent_frames}"
        )));
    }
    if latent_frames % patch.t != 0 || latent_h % patch.h != 0 || latent_w % patch.w != 0 {
        return Err(Error::Dimension(format!(
            "latent {latent_frames}x{latent_h}x{latent_w} not divisible by patch {}x{}x{}",
            patch.t, patch.h, patch.w
        )));
    }
    let grid = TokenGrid {
        frames: latent_frames / patch.t,
        rows: latent_h / patch.h,
        cols: latent_w / patch.w,
    };
    let mut weights = Array1::zeros(grid.len());
    let small: Vec<Array2<f32>> = (0..mf)
        .map(|t| resize_bilinear_2d(mask.frame(t), latent_h, latent_w))
        .collect();
    let norm = patch.volume() as f32;
    for gf in 0..grid.frames {
        for gr in 0..grid.rows {
            for gc in 0..grid.cols {
                let token = (gf * grid.rows + gr) * grid.cols + gc;
                let mut acc = 0.0f32;
                for dt in 0..patch.t {
                    let plane = &small[gf * patch.t + dt];
                    for dh in 0..patch.h {
                        for dw in 0..patch.w {
                            acc += plane[[gr * patch.h + dh, gc * patch.w + dw]];
                        }
                    }
                }
                weights[token] = (acc / norm).clamp(0.0, 1.0);
            }
        }
    }
    Ok(TokenMask { weights, grid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Codec;
    use crate::video::VideoTensor;
    use ndarray::{Array3, Array4};
    use rand::{Rng, SeedableRng};

    fn random_latent(rng: &mut impl Rng, f: usize, h: usize, w: usize, c: usize) -> LatentTensor {
        LatentTensor {
            data: Array4::from_shape_fn((f, h, w, c), |_| rng.random::<f32>() * 2.0 - 1.0),
            spatial_factor: 4,
            temporal_factor: 1,
        }
    }

    #[test]
    fn single_patch_flattens_in_documented_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let lat = random_latent(&mut rng, 1, 2, 2, 48);
        let seq = patchify(&lat, PatchSpec::default(), &TokenProjection::Identity).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.dim(), 192);
        for dh in 0..2 {
            for dw in 0..2 {
                for ch in 0..48 {
                    let feat = (dh * 2 + dw) * 48 + ch;
                    assert_eq!(seq.tokens[[0, feat]], lat.data[[0, dh, dw, ch]]);
                }
            }
        }
    }

    #[test]
    fn token_count_matches_grid_arithmetic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let lat = random_latent(&mut rng, 4, 16, 16, 48);
        let seq = patchify(&lat, PatchSpec::default(), &TokenProjection::Identity).unwrap();
        assert_eq!(seq.len(), 4 * 8 * 8);
        assert_eq!(seq.grid, TokenGrid { frames: 4, rows: 8, cols: 8 });
    }

    #[test]
    fn patchify_unpatchify_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let lat = random_latent(&mut rng, 2, 4, 6, 12);
            let seq = patchify(&lat, PatchSpec::default(), &TokenProjection::Identity).unwrap();
            let back = unpatchify(&seq, &TokenProjection::Identity, 4, 1).unwrap();
            assert_eq!(back.data, lat.data);
        }
    }

    #[test]
    fn zero_tokens_give_zero_latent() {
        let seq = TokenSequence {
            tokens: Array2::zeros((4, 48)),
            grid: TokenGrid { frames: 1, rows: 2, cols: 2 },
            patch: PatchSpec::default(),
        };
        let lat = unpatchify(&seq, &TokenProjection::Identity, 4, 1).unwrap();
        assert!(lat.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_ones_and_all_zeros_masks() {
        let mask = MaskVideo::new(Array3::from_elem((1, 8, 8), 1.0)).unwrap();
        let tm = mask_to_token_weights(&mask, 1, 2, 2, PatchSpec::default()).unwrap();
        assert!(tm.weights.iter().all(|&w| w == 1.0));
        let mask = MaskVideo::new(Array3::zeros((1, 8, 8))).unwrap();
        let tm = mask_to_token_weights(&mask, 1, 2, 2, PatchSpec::default()).unwrap();
        assert!(tm.weights.iter().all(|&w| w == 0.0));
    }

    /// Independent reference: straightforward bilinear resample plus average
    /// pool, written without reusing the library helpers.
    fn reference_weights(mask: &Array2<f32>, lh: usize, lw: usize, ph: usize, pw: usize) -> Vec<f32> {
        let (h, w) = mask.dim();
        let mut small = vec![0.0f64; lh * lw];
        for oy in 0..lh {
            for ox in 0..lw {
                let fy = ((oy as f64 + 0.5) * h as f64 / lh as f64 - 0.5)
                    .clamp(0.0, (h - 1) as f64);
                let fx = ((ox as f64 + 0.5) * w as f64 / lw as f64 - 0.5)
                    .clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                let v = mask[[y0, x0]] as f64 * (1.0 - ty) * (1.0 - tx)
                    + mask[[y0, x1]] as f64 * (1.0 - ty) * tx
                    + mask[[y1, x0]] as f64 * ty * (1.0 - tx)
                    + mask[[y1, x1]] as f64 * ty * tx;
                small[oy * lw + ox] = v;
            }
        }
        let (gr, gc) = (lh / ph, lw / pw);
        let mut out = vec![0.0f32; gr * gc];
        for r in 0..gr {
            for c in 0..gc {
                let mut acc = 0.0;
                for dh in 0..ph {
                    for dw in 0..pw {
                        acc += small[(r * ph + dh) * lw + (c * pw + dw)];
                    }
                }
                out[r * gc + c] = (acc / (ph * pw) as f64) as f32;
            }
        }
        out
    }

    #[test]
    fn half_plane_mask_matches_reference_resampler() {
        let mut frame = Array2::zeros((8, 8));
        for r in 0..8 {
            for c in 0..4 {
                frame[[r, c]] = 1.0;
            }
        }
        let mask = MaskVideo::new(
            frame.clone().insert_axis(ndarray::Axis(0)).into_dimensionality().unwrap(),
        )
        .unwrap();
        let tm = mask_to_token_weights(&mask, 1, 2, 2, PatchSpec::default()).unwrap();
        let expect = reference_weights(&frame, 2, 2, 2, 2);
        assert_eq!(tm.weights.len(), 1);
        assert!((tm.weights[0] - expect[0]).abs() < 1e-6);
        // left half of an 8x8 downsampled to 2x2 gives columns (1.0, 0.0),
        // averaged over a 2x2 patch -> 0.5
        assert!((tm.weights[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn random_masks_match_reference_resampler() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let frame = Array2::from_shape_fn((16, 24), |_| rng.random::<f32>());
            let mask = MaskVideo::new(
                frame.clone().insert_axis(ndarray::Axis(0)).into_dimensionality().unwrap(),
            )
            .unwrap();
            let tm = mask_to_token_weights(&mask, 1, 4, 6, PatchSpec::default()).unwrap();
            let expect = reference_weights(&frame, 4, 6, 2, 2);
            for (got, want) in tm.weights.iter().zip(expect.iter()) {
                assert!((got - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn ordering_coherence_with_patchify() {
        // Mark one 8x8 pixel block (one token at factor 4, patch 2x2) and
        // check the same token index lights up in both paths.
        let codec = Codec::default();
        let mut frames = Array4::zeros((1, 16, 16, 3));
        let mut mframes = Array3::zeros((1, 16, 16));
        for r in 8..16 {
            for c in 0..8 {
                for ch in 0..3 {
                    frames[[0, r, c, ch]] = 1.0;
                }
                mframes[[0, r, c]] = 1.0;
            }
        }
        let vid = VideoTensor::new(frames).unwrap();
        let lat = codec.encode(&vid).unwrap();
        let seq = patchify(&lat, PatchSpec::default(), &TokenProjection::Identity).unwrap();
        let mask = MaskVideo::new(mframes).unwrap();
        let tm = mask_to_token_weights(&mask, 1, 4, 4, PatchSpec::default()).unwrap();
        assert_eq!(seq.len(), 4);
        assert_eq!(tm.weights.len(), 4);
        for i in 0..4 {
            let token_energy: f32 = seq.tokens.row(i).iter().sum();
            if tm.weights[i] > 0.5 {
                assert!(token_energy > 0.0, "token {i} should hold the marked block");
            } else {
                assert_eq!(token_energy, 0.0, "token {i} should be empty");
            }
        }
        // marked block is bottom-left: token row 1, col 0 -> index 2
        assert!(tm.weights[2] > 0.99);
    }

    #[test]
    fn monotonicity_of_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let a = Array2::from_shape_fn((8, 8), |_| rng.random::<f32>() * 0.5);
            let bump = Array2::from_shape_fn((8, 8), |_| rng.random::<f32>() * 0.5);
            let b = &a + &bump;
            let ma = MaskVideo::new(a.insert_axis(ndarray::Axis(0)).into_dimensionality().unwrap())
                .unwrap();
            let mb = MaskVideo::new(b.insert_axis(ndarray::Axis(0)).into_dimensionality().unwrap())
                .unwrap();
            let wa = mask_to_token_weights(&ma, 1, 2, 2, PatchSpec::default()).unwrap();
            let wb = mask_to_token_weights(&mb, 1, 2, 2, PatchSpec::default()).unwrap();
            for (x, y) in wa.weights.iter().zip(wb.weights.iter()) {
                assert!(y + 1e-6 >= *x);
            }
        }
    }
}
