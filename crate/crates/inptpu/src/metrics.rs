//! Desk-scale evaluation metrics: PSNR for self-reenactment fidelity,
//! plus handcrafted subject-consistency and motion-smoothness scores for
//! overall video quality. The latter two are stated proxies built from
//! normalized crops and temporal differences — their absolute values are not
//! comparable to any pretrained-feature metric.

use crate::error::{Error, Result};
use crate::util::resize_bilinear_2d;
use crate::video::{MaskVideo, VideoTensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Per-frame `10*log10(1/MSE)` on the [0,1] range, averaged over frames.
/// Frames with MSE below 1e-10 are capped at 99 dB so exact matches stay
/// finite in reports.
pub fn psnr(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "psnr inputs disagree: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (f, h, w, c) = a.dims();
    let per_frame = (h * w * c) as f64;
    let mut total = 0.0;
    for t in 0..f {
        let mut mse = 0.0f64;
        for (x, y) in a.frame(t).iter().zip(b.frame(t).iter()) {
            let d = (*x - *y) as f64;
            mse += d * d;
        }
        mse /= per_frame;
        total += if mse < 1e-10 { 99.0 } else { 10.0 * (1.0 / mse).log10() };
    }
    Ok(total / f as f64)
}

/// 16x16 grayscale crop of the mask's bounding box, L2-normalized.
fn crop_feature(video: &VideoTensor, mask: &MaskVideo, t: usize) -> Result<Vec<f64>> {
    let (_, h, w, c) = video.dims();
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for ((r, col), &v) in mask.frame(t).indexed_iter() {
        if v >= 0.5 {
            bounds = Some(match bounds {
                None => (r, r, col, col),
                Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(col), c1.max(col)),
            });
        }
    }
    let (r0, r1, c0, c1) =
        bounds.ok_or_else(|| Error::EmptyMask(format!("frame {t} has no mask foreground")))?;
    let _ = (h, w);
    let mut gray = Array2::zeros((r1 - r0 + 1, c1 - c0 + 1));
    for r in r0..=r1 {
        for col in c0..=c1 {
            let mut acc = 0.0f32;
            for k in 0..c {
                acc += video.frames[[t, r, col, k]];
            }
            gray[[r - r0, col - c0]] = acc / c as f32;
        }
    }
    let small = resize_bilinear_2d(gray.view(), 16, 16);
    let mut feat: Vec<f64> = small.iter().map(|&v| v as f64).collect();
    let norm = feat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in &mut feat {
            *v /= norm;
        }
    }
    Ok(feat)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Appearance stability of the masked subject: for each frame the normalized
/// crop is compared (cosine) against both the first frame and the previous
/// frame, and the two are averaged. 1.0 means a perfectly stable subject.
pub fn subject_consistency(video: &VideoTensor, mask: &MaskVideo) -> Result<f64> {
    let (f, h, w, _) = video.dims();
    if mask.dims() != (f, h, w) {
        return Err(Error::ShapeMismatch("mask does not match video".into()));
    }
    let feats: Vec<Vec<f64>> = (0..f).map(|t| crop_feature(video, mask, t)).collect::<Result<_>>()?;
    if f == 1 {
        return Ok(1.0);
    }
    let mut acc = 0.0;
    for t in 1..f {
        acc += 0.5 * (cosine(&feats[t], &feats[0]) + cosine(&feats[t], &feats[t - 1]));
    }
    Ok((acc / (f - 1) as f64).clamp(0.0, 1.0))
}

/// Temporal jerk score: one minus the mean second difference relative to the
/// mean first difference, clamped to [0,1]. Static and constant-velocity
/// content scores 1; frame-to-frame oscillation scores 0.
pub fn motion_smoothness(video: &VideoTensor) -> Result<f64> {
    let (f, h, w, c) = video.dims();
    if f < 3 {
        return Err(Error::Dimension(format!("motion smoothness needs >= 3 frames, got {f}")));
    }
    let per_frame = (h * w * c) as f64;
    let l1 = |t1: usize, t0: usize| -> f64 {
        video
            .frame(t1)
            .iter()
            .zip(video.frame(t0).iter())
            .map(|(a, b)| ((a - b) as f64).abs())
            .sum::<f64>()
            / per_frame
    };
    let mut second = 0.0;
    for t in 1..f - 1 {
        let acc: f64 = video
            .frame(t + 1)
            .iter()
            .zip(video.frame(t).iter())
            .zip(video.frame(t - 1).iter())
            .map(|((a, b), c)| ((a - 2.0 * b + c) as f64).abs())
            .sum::<f64>();
        second += acc / per_frame;
    }
    second /= (f - 2) as f64;
    let mut first = 0.0;
    for t in 0..f - 1 {
        first += l1(t + 1, t);
    }
    first /= (f - 1) as f64;
    let s = 1.0 - second / (2.0 * first + 1e-8);
    Ok(s.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipScores {
    pub name: String,
    pub frames: usize,
    pub psnr_db: f64,
    pub subject_consistency: f64,
    pub motion_smoothness: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub clip_count: usize,
    pub mean_psnr_db: f64,
    pub mean_subject_consistency: f64,
    pub mean_motion_smoothness: f64,
    pub clips: Vec<ClipScores>,
    pub config: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub run_dir: PathBuf,
    pub gt_dir: PathBuf,
    pub mask_dir: PathBuf,
}

/// Locates a directory of frame PNGs for a clip: either the directory itself
/// or its `frames/` (or `masks/` for masks) child.
pub fn find_frame_dir(clip_dir: &Path, child: &str) -> Option<PathBuf> {
    let sub = clip_dir.join(child);
    if sub.is_dir() && has_png(&sub) {
        return Some(sub);
    }
    if has_png(clip_dir) {
        return Some(clip_dir.to_path_buf());
    }
    None
}

fn has_png(dir: &Path) -> bool {
    std::fs::read_dir(dir)
        .map(|entries| {
            entries
                .filter_map(|e| e.ok())
                .any(|e| e.path().extension().map(|x| x == "png").unwrap_or(false))
        })
        .unwrap_or(false)
}

/// Lists clip names in a run/gt directory: subdirectories that hold frames,
/// or the directory itself when it holds PNGs directly.
fn clip_names(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    let mut names = Vec::new();
    if has_png(dir) {
        names.push(String::new()); // the directory itself is one clip
        return Ok(names);
    }
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() && find_frame_dir(&path, "frames").is_some() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Scores every clip present in both `run_dir` and `gt_dir` against the
/// ground truth, reading object masks from `mask_dir`.
pub fn evaluate(run_dir: &Path, gt_dir: &Path, mask_dir: &Path) -> Result<EvalReport> {
    let run_clips = clip_names(run_dir)?;
    let gt_clips = clip_names(gt_dir)?;
    let common: Vec<String> =
        run_clips.iter().filter(|n| gt_clips.contains(n)).cloned().collect();
    if common.is_empty() {
        return Err(Error::Data(format!(
            "no clips shared between {} and {}",
            run_dir.display(),
            gt_dir.display()
        )));
    }
    let mut clips = Vec::new();
    for name in &common {
        let run_clip = if name.is_empty() { run_dir.to_path_buf() } else { run_dir.join(name) };
        let gt_clip = if name.is_empty() { gt_dir.to_path_buf() } else { gt_dir.join(name) };
        let mask_clip =
            if name.is_empty() { mask_dir.to_path_buf() } else { mask_dir.join(name) };
        let run_frames = find_frame_dir(&run_clip, "frames")
            .ok_or_else(|| Error::Data(format!("no frames for {}", run_clip.display())))?;
        let gt_frames = find_frame_dir(&gt_clip, "frames")
            .ok_or_else(|| Error::Data(format!("no frames for {}", gt_clip.display())))?;
        let mask_frames = find_frame_dir(&mask_clip, "masks")
            .ok_or_else(|| Error::Data(format!("no masks for {}", mask_clip.display())))?;
        let run = VideoTensor::read_dir(&run_frames)?;
        let gt = VideoTensor::read_dir(&gt_frames)?;
        let mask = MaskVideo::read_dir(&mask_frames)?;
        let display_name = if name.is_empty() {
            run_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        } else {
            name.clone()
        };
        clips.push(ClipScores {
            name: display_name,
            frames: run.num_frames(),
            psnr_db: psnr(&run, &gt)?,
            subject_consistency: subject_consistency(&run, &mask)?,
            motion_smoothness: motion_smoothness(&run)?,
        });
    }
    Ok(summarize(
        clips,
        EvalConfig {
            run_dir: run_dir.to_path_buf(),
            gt_dir: gt_dir.to_path_buf(),
            mask_dir: mask_dir.to_path_buf(),
        },
    ))
}

pub fn summarize(clips: Vec<ClipScores>, config: EvalConfig) -> EvalReport {
    let n = clips.len().max(1) as f64;
    EvalReport {
        clip_count: clips.len(),
        mean_psnr_db: clips.iter().map(|c| c.psnr_db).sum::<f64>() / n,
        mean_subject_consistency: clips.iter().map(|c| c.subject_consistency).sum::<f64>() / n,
        mean_motion_smoothness: clips.iter().map(|c| c.motion_smoothness).sum::<f64>() / n,
        clips,
        config,
    }
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:>8} {:>10} {:>12} {:>12}\n",
            "clip", "frames", "psnr_db", "subj_cons", "mot_smooth"
        ));
        for c in &self.clips {
            out.push_str(&format!(
                "{:<20} {:>8} {:>10.3} {:>12.4} {:>12.4}\n",
                c.name, c.frames, c.psnr_db, c.subject_consistency, c.motion_smoothness
            ));
        }
        out.push_str(&format!(
            "{:<20} {:>8} {:>10.3} {:>12.4} {:>12.4}\n",
            "mean",
            self.clip_count,
            self.mean_psnr_db,
            self.mean_subject_consistency,
            self.mean_motion_smoothness
        ));
        out
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join("report.txt"), self.to_table())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    fn flat_video(f: usize, v: f32) -> VideoTensor {
        VideoTensor::new(Array4::from_elem((f, 8, 8, 3), v)).unwrap()
    }

    #[test]
    fn identical_videos_hit_the_cap() {
        let a = flat_video(3, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
    }

    #[test]
    fn uniform_difference_gives_twenty_db() {
        let a = flat_video(2, 0.5);
        let b = flat_video(2, 0.6);
        let db = psnr(&a, &b).unwrap();
        // MSE = 0.01 -> 20 dB (closed form, checked numerically)
        assert!((db - 20.0).abs() < 1e-5, "{db}");
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let base = Array4::from_shape_fn((2, 8, 8, 3), |_| rng.random::<f32>() * 0.5 + 0.25);
        let noise = Array4::from_shape_fn((2, 8, 8, 3), |_| rng.random::<f32>() * 0.1 - 0.05);
        let a = VideoTensor::new(base.clone()).unwrap();
        let full = VideoTensor::new(&base + &noise).unwrap();
        let half = VideoTensor::new(&base + &(&noise * 0.5)).unwrap();
        assert!(psnr(&a, &full).unwrap() < psnr(&a, &half).unwrap());
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = flat_video(2, 0.2);
        let b = flat_video(2, 0.7);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    fn center_mask(f: usize) -> MaskVideo {
        let mut m = Array3::zeros((f, 8, 8));
        for t in 0..f {
            for r in 2..6 {
                for c in 2..6 {
                    m[[t, r, c]] = 1.0;
                }
            }
        }
        MaskVideo::new(m).unwrap()
    }

    #[test]
    fn static_video_scores_perfectly() {
        let v = flat_video(4, 0.4);
        let m = center_mask(4);
        assert_eq!(subject_consistency(&v, &m).unwrap(), 1.0);
        assert_eq!(motion_smoothness(&v).unwrap(), 1.0);
    }

    #[test]
    fn recolored_subject_drops_consistency() {
        // the subject has internal structure (bright left, dark right);
        // negating it mid-video flips the normalized crop's direction
        let mut frames = Array4::from_elem((4, 8, 8, 3), 0.2f32);
        for t in 0..4 {
            for r in 2..6 {
                for c in 2..6 {
                    let base = if c < 4 { 0.9 } else { 0.1 };
                    let v = if t >= 2 { 1.0 - base } else { base };
                    for k in 0..3 {
                        frames[[t, r, c, k]] = v;
                    }
                }
            }
        }
        let recolored = VideoTensor::new(frames).unwrap();
        let m = center_mask(4);
        let static_score = subject_consistency(&flat_video(4, 0.4), &m).unwrap();
        let recolored_score = subject_consistency(&recolored, &m).unwrap();
        assert!(recolored_score < static_score);
    }

    /// Two-frame case against an independent straight-line implementation of
    /// the crop-resize-normalize-cosine chain.
    #[test]
    fn two_frame_consistency_matches_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let frames = Array4::from_shape_fn((2, 8, 8, 3), |_| rng.random::<f32>());
        let video = VideoTensor::new(frames.clone()).unwrap();
        let mask = center_mask(2);
        let got = subject_consistency(&video, &mask).unwrap();

        // reference: crop rows/cols 2..6, gray, resize to 16x16, normalize
        let mut feats = Vec::new();
        for t in 0..2 {
            let mut gray = vec![0.0f64; 16];
            for r in 2..6 {
                for c in 2..6 {
                    let g = (frames[[t, r, c, 0]] + frames[[t, r, c, 1]] + frames[[t, r, c, 2]])
                        as f64
                        / 3.0;
                    gray[(r - 2) * 4 + (c - 2)] = g;
                }
            }
            // 4x4 -> 16x16 bilinear with half-pixel mapping
            let mut up = vec![0.0f64; 256];
            for oy in 0..16 {
                for ox in 0..16 {
                    let fy = ((oy as f64 + 0.5) * 0.25 - 0.5).clamp(0.0, 3.0);
                    let fx = ((ox as f64 + 0.5) * 0.25 - 0.5).clamp(0.0, 3.0);
                    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(3), (x0 + 1).min(3));
                    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                    up[oy * 16 + ox] = gray[y0 * 4 + x0] * (1.0 - ty) * (1.0 - tx)
                        + gray[y0 * 4 + x1] * (1.0 - ty) * tx
                        + gray[y1 * 4 + x0] * ty * (1.0 - tx)
                        + gray[y1 * 4 + x1] * ty * tx;
                }
            }
            let norm = up.iter().map(|v| v * v).sum::<f64>().sqrt();
            feats.push(up.into_iter().map(|v| v / norm).collect::<Vec<f64>>());
        }
        let cos: f64 = feats[0].iter().zip(&feats[1]).map(|(a, b)| a * b).sum();
        let expect = (0.5 * (cos + cos)).clamp(0.0, 1.0);
        // features are computed in f32, the reference in f64
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn alternating_frames_score_zero_smoothness() {
        let mut frames = Array4::zeros((6, 8, 8, 3));
        for t in 0..6 {
            let v = if t % 2 == 0 { 0.2 } else { 0.8 };
            frames.index_axis_mut(ndarray::Axis(0), t).fill(v);
        }
        let v = VideoTensor::new(frames).unwrap();
        let s = motion_smoothness(&v).unwrap();
        // second difference is exactly twice the first difference
        assert!(s < 1e-6, "{s}");
    }

    #[test]
    fn smoothness_needs_three_frames() {
        assert!(motion_smoothness(&flat_video(2, 0.5)).is_err());
    }

    #[test]
    fn brightness_shift_leaves_scores_unchanged() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let frames = Array4::from_shape_fn((4, 8, 8, 3), |_| rng.random::<f32>() * 0.5 + 0.1);
        let video = VideoTensor::new(frames.clone()).unwrap();
        let shifted = VideoTensor::new(&frames + 0.2f32).unwrap();
        let m = center_mask(4);
        let s0 = motion_smoothness(&video).unwrap();
        let s1 = motion_smoothness(&shifted).unwrap();
        // the shift cancels exactly in the differences up to f32 rounding
        assert!((s0 - s1).abs() < 1e-6);
        // consistency features are normalized crops; a global shift moves the
        // cosine only marginally
        let c0 = subject_consistency(&video, &m).unwrap();
        let c1 = subject_consistency(&shifted, &m).unwrap();
        assert!((c0 - c1).abs() < 0.05);
    }

    #[test]
    fn evaluate_run_equal_to_gt(){
        let root = tempfile::tempdir().unwrap();
        let gt = root.path().join("gt/clip_0000");
        let scene = crate::synthdata::random_scene((32, 32), 4, crate::synthdata::SpriteKind::Box, 3);
        crate::synthdata::render_clip(&scene, &gt).unwrap();
        let report = evaluate(
            &root.path().join("gt"),
            &root.path().join("gt"),
            &root.path().join("gt"),
        )
        .unwrap();
        assert_eq!(report.clip_count, 1);
        assert_eq!(report.clips[0].psnr_db, 99.0);
        // means equal the single clip's values
        assert_eq!(report.mean_subject_consistency, report.clips[0].subject_consistency);
        let out = tempfile::tempdir().unwrap();
        report.write(out.path()).unwrap();
        assert!(out.path().join("report.json").is_file());
        assert!(out.path().join("report.txt").is_file());
    }

    #[test]
    fn disjoint_clip_sets_are_a_data_error() {
        let root = tempfile::tempdir().unwrap();
        let a = root.path().join("a/clip_a");
        let b = root.path().join("b/clip_b");
        let scene = crate::synthdata::random_scene((32, 32), 4, crate::synthdata::SpriteKind::Box, 3);
        crate::synthdata::render_clip(&scene, &a).unwrap();
        crate::synthdata::render_clip(&scene, &b).unwrap();
        assert!(matches!(
            evaluate(&root.path().join("a"), &root.path().join("b"), &root.path().join("a")),
            Err(Error::Data(_))
        ));
    }
}
