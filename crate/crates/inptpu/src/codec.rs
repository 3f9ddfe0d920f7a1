//! Invertible pixel↔latent codec.
//!
//! Encoding is a pure space-to-depth rearrangement: an `sf×sf` spatial block
//! (and `tf` consecutive frames) folds into channels, so `decode(encode(v))`
//! reproduces `v` bit for bit and every reconstruction error downstream is
//! attributable to the denoiser alone.
//!
//! Channel order of the fold is fixed and relied on by the tokenizer:
//! latent channel = `((dt*sf + dr)*sf + dc) * C + c`, i.e. block offsets
//! `(dt, dr, dc)` in row-major order, original channel fastest.

use crate::error::{Error, Result};
use crate::video::VideoTensor;
use ndarray::Array4;

/// f×h×w×c latent array plus the fold factors that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub data: Array4<f32>,
    pub spatial_factor: usize,
    pub temporal_factor: usize,
}

impl LatentTensor {
    /// (f, h, w, c)
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2], s[3])
    }
}

/// Space-to-depth codec configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Codec {
    pub spatial_factor: usize,
    pub temporal_factor: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Self { spatial_factor: 4, temporal_factor: 1 }
    }
}

impl Codec {
    pub fn new(spatial_factor: usize, temporal_factor: usize) -> Result<Self> {
        if spatial_factor == 0 || temporal_factor == 0 {
            return Err(Error::Dimension("codec factors must be positive".into()));
        }
        Ok(Self { spatial_factor, temporal_factor })
    }

    /// Latent channel count for a video with `c` pixel channels.
    pub fn latent_channels(&self, c: usize) -> usize {
        c * self.spatial_factor * self.spatial_factor * self.temporal_factor
    }

    pub fn encode(&self, video: &VideoTensor) -> Result<LatentTensor> {
        let (frames, h, w, c) = video.dims();
        let (sf, tf) = (self.spatial_factor, self.temporal_factor);
        if h % sf != 0 || w % sf != 0 {
            return Err(Error::Dimension(format!(
                "frame size {h}x{w} not divisible by spatial factor {sf}"
            )));
        }
        if frames % tf != 0 {
            return Err(Error::Dimension(format!(
                "frame count {frames} not divisible by temporal factor {tf}"
            )));
        }
        let (lf, lh, lw, lc) = (frames / tf, h / sf, w / sf, self.latent_channels(c));
        let mut data = Array4::zeros((lf, lh, lw, lc));
        for t in 0..lf {
            for r in 0..lh {
                for col in 0..lw {
                    for dt in 0..tf {
                        for dr in 0..sf {
                            for dc in 0..sf {
                                let base = ((dt * sf + dr) * sf + dc) * c;
                                for ch in 0..c {
                                    data[[t, r, col, base + ch]] = video.frames
                                        [[t * tf + dt, r * sf + dr, col * sf + dc, ch]];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(LatentTensor { data, spatial_factor: sf, temporal_factor: tf })
    }

    pub fn decode(&self, latent: &LatentTensor) -> Result<VideoTensor> {
        let (lf, lh, lw, lc) = latent.dims();
        let (sf, tf) = (self.spatial_factor, self.temporal_factor);
        if latent.spatial_factor != sf || latent.temporal_factor != tf {
            return Err(Error::Dimension(format!(
                "latent was encoded with factors ({}, {}), codec has ({}, {})",
                latent.spatial_factor, latent.temporal_factor, sf, tf
            )));
        }
        let block = sf * sf * tf;
        if lc % block != 0 {
            return Err(Error::Dimension(format!(
                "latent channel count {lc} not divisible by fold size {block}"
            )));
        }
        let c = lc / block;
        let mut frames = Array4::zeros((lf * tf, lh * sf, lw * sf, c));
        for t in 0..lf {
            for r in 0..lh {
                for col in 0..lw {
                    for dt in 0..tf {
                        for dr in 0..sf {
                            for dc in 0..sf {
                                let base = ((dt * sf + dr) * sf + dc) * c;
                                for ch in 0..c {
                                    frames[[t * tf + dt, r * sf + dr, col * sf + dc, ch]] =
                                        latent.data[[t, r, col, base + ch]];
                                }
                            }
                        }
                    }
                }
            }
        }
        // Latents during sampling are unbounded, so no clamping here; the
        // VideoTensor constructor only rejects non-finite values.
        VideoTensor::new(frames)
    }
}
