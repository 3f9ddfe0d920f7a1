//! Pixel-space domain types and PNG frame-directory I/O.
//!
//! Videos and masks are exchanged on disk as directories of zero-padded
//! `%05d.png` frames: RGB for videos, 8-bit grayscale for masks
//! (0 maps to 0.0, 255 to 1.0).

use crate::error::{Error, Result};
use ndarray::{Array3, Array4, ArrayView2, ArrayView3, Axis};
use std::path::Path;

/// F×H×W×C pixel video with values in [0,1] at pipeline boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub frames: Array4<f32>,
    /// Frames per second. Metadata only; no operation depends on it.
    pub frame_rate: f32,
}

impl VideoTensor {
    pub fn new(frames: Array4<f32>) -> Result<Self> {
        if frames.shape()[0] == 0 {
            return Err(Error::Dimension("video needs at least one frame".into()));
        }
        if !frames.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("video contains non-finite pixels".into()));
        }
        Ok(Self { frames, frame_rate: 8.0 })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// (F, H, W, C)
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.frames.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, f32> {
        self.frames.index_axis(Axis(0), t)
    }

    /// Wraps a single frame as a one-frame video.
    pub fn from_frame(frame: Array3<f32>) -> Result<Self> {
        let (h, w, c) = frame.dim();
        let mut frames = Array4::zeros((1, h, w, c));
        frames.index_axis_mut(Axis(0), 0).assign(&frame);
        Self::new(frames)
    }

    /// Clamps all pixels into [0,1]. Used at pipeline output boundaries where
    /// sampled latents may slightly overshoot.
    pub fn clamp_unit(&mut self) {
        self.frames.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let paths = list_frames(dir)?;
        let mut frames: Option<Array4<f32>> = None;
        for (t, p) in paths.iter().enumerate() {
            let img = image::open(p)?.to_rgb8();
            let (w, h) = img.dimensions();
            let arr = frames.get_or_insert_with(|| {
                Array4::zeros((paths.len(), h as usize, w as usize, 3))
            });
            if arr.shape()[1] != h as usize || arr.shape()[2] != w as usize {
                return Err(Error::Data(format!(
                    "frame {} in {} has size {}x{}, expected {}x{}",
                    t,
                    dir.display(),
                    h,
                    w,
                    arr.shape()[1],
                    arr.shape()[2]
                )));
            }
            for (r, row) in img.rows().enumerate() {
                for (c, px) in row.enumerate() {
                    for ch in 0..3 {
                        arr[[t, r, c, ch]] = px.0[ch] as f32 / 255.0;
                    }
                }
            }
        }
        VideoTensor::new(frames.ok_or_else(|| {
            Error::Data(format!("no PNG frames found in {}", dir.display()))
        })?)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (f, h, w, c) = self.dims();
        if c != 3 {
            return Err(Error::Dimension(format!("PNG video output needs C=3, got {c}")));
        }
        for t in 0..f {
            let mut img = image::RgbImage::new(w as u32, h as u32);
            for r in 0..h {
                for col in 0..w {
                    let px = [
                        quantize(self.frames[[t, r, col, 0]]),
                        quantize(self.frames[[t, r, col, 1]]),
                        quantize(self.frames[[t, r, col, 2]]),
                    ];
                    img.put_pixel(col as u32, r as u32, image::Rgb(px));
                }
            }
            img.save(dir.join(format!("{t:05}.png")))?;
        }
        Ok(())
    }
}

/// F×H×W soft mask video with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVideo {
    pub frames: Array3<f32>,
}

impl MaskVideo {
    pub fn new(frames: Array3<f32>) -> Result<Self> {
        if frames.shape()[0] == 0 {
            return Err(Error::Dimension("mask video needs at least one frame".into()));
        }
        if !frames.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::Data("mask values must be finite and in [0,1]".into()));
        }
        Ok(Self { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// (F, H, W)
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[0], s[1], s[2])
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f32> {
        self.frames.index_axis(Axis(0), t)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let paths = list_frames(dir)?;
        let mut frames: Option<Array3<f32>> = None;
        for (t, p) in paths.iter().enumerate() {
            let img = image::open(p)?.to_luma8();
            let (w, h) = img.dimensions();
            let arr = frames.get_or_insert_with(|| {
                Array3::zeros((paths.len(), h as usize, w as usize))
            });
            if arr.shape()[1] != h as usize || arr.shape()[2] != w as usize {
                return Err(Error::Data(format!(
                    "mask frame {} in {} has inconsistent size",
                    t,
                    dir.display()
                )));
            }
            for (r, row) in img.rows().enumerate() {
                for (c, px) in row.enumerate() {
                    arr[[t, r, c]] = px.0[0] as f32 / 255.0;
                }
            }
        }
        MaskVideo::new(frames.ok_or_else(|| {
            Error::Data(format!("no PNG frames found in {}", dir.display()))
        })?)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (f, h, w) = self.dims();
        for t in 0..f {
            let mut img = image::GrayImage::new(w as u32, h as u32);
            for r in 0..h {
                for c in 0..w {
                    img.put_pixel(c as u32, r as u32, image::Luma([quantize(self.frames[[t, r, c]])]));
                }
            }
            img.save(dir.join(format!("{t:05}.png")))?;
        }
        Ok(())
    }
}

/// A reference object image (H_r×W_r×C in [0,1]).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceImage {
    pub pixels: Array3<f32>,
}

impl ReferenceImage {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (h, w, _) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::Dimension("reference image must be at least 1x1".into()));
        }
        Ok(Self { pixels })
    }

    /// Height/width ratio, used for adaptive-mask aspect matching.
    pub fn aspect(&self) -> f64 {
        let (h, w, _) = self.pixels.dim();
        h as f64 / w as f64
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let mut pixels = Array3::zeros((h as usize, w as usize, 3));
        for (r, row) in img.rows().enumerate() {
            for (c, px) in row.enumerate() {
                for ch in 0..3 {
                    pixels[[r, c, ch]] = px.0[ch] as f32 / 255.0;
                }
            }
        }
        Self::new(pixels)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let (h, w, c) = self.pixels.dim();
        if c != 3 {
            return Err(Error::Dimension(format!("PNG reference needs C=3, got {c}")));
        }
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for r in 0..h {
            for col in 0..w {
                let px = [
                    quantize(self.pixels[[r, col, 0]]),
                    quantize(self.pixels[[r, col, 1]]),
                    quantize(self.pixels[[r, col, 2]]),
                ];
                img.put_pixel(col as u32, r as u32, image::Rgb(px));
            }
        }
        img.save(path)?;
        Ok(())
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lists `*.png` files in a directory sorted by file name.
fn list_frames(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "png").unwrap_or(false))
        .collect();
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn video_roundtrip_through_png_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut frames = Array4::zeros((2, 4, 5, 3));
        for v in frames.iter_mut() {
            *v = 0.25;
        }
        frames[[1, 2, 3, 1]] = 1.0;
        let vid = VideoTensor::new(frames).unwrap();
        vid.write_dir(dir.path()).unwrap();
        let back = VideoTensor::read_dir(dir.path()).unwrap();
        assert_eq!(back.dims(), (2, 4, 5, 3));
        // 0.25 quantizes to 64/255, not exactly 0.25
        assert!((back.frames[[0, 0, 0, 0]] - 64.0 / 255.0).abs() < 1e-6);
        assert_eq!(back.frames[[1, 2, 3, 1]], 1.0);
    }

    #[test]
    fn mask_roundtrip_and_range_check() {
        let dir = tempfile::tempdir().unwrap();
        let mut frames = ndarray::Array3::zeros((1, 3, 3));
        frames[[0, 1, 1]] = 1.0;
        let m = MaskVideo::new(frames).unwrap();
        m.write_dir(dir.path()).unwrap();
        let back = MaskVideo::read_dir(dir.path()).unwrap();
        assert_eq!(back.frames[[0, 1, 1]], 1.0);
        assert_eq!(back.frames[[0, 0, 0]], 0.0);

        let bad = ndarray::Array3::from_elem((1, 2, 2), 1.5f32);
        assert!(MaskVideo::new(bad).is_err());
    }

    #[test]
    fn empty_dir_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(VideoTensor::read_dir(dir.path()), Err(Error::Data(_))));
    }
}
