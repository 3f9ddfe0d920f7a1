//! Two-stage reenactment orchestration: keyframe generation on a side-by-side
//! self-reconstruction canvas, keyframe-anchored video generation, long-video
//! chaining through the last frame, and the self/cross entry points.

use crate::dit::{sample, ModelBundle, NoiseSchedule, TrainSample};
use crate::error::{Error, Result};
use crate::inp_tpu::{ConditionBuilder, ConditionBundle, Stage};
use crate::masking::{adaptive_mask_video, masked_fill, place_reference};
use crate::metrics::find_frame_dir;
use crate::synthdata::Manifest;
use crate::tokenizer::{unpatchify, TokenProjection, TokenSequence};
use crate::util::derive_seed;
use crate::video::{MaskVideo, ReferenceImage, VideoTensor};
use ndarray::{s, Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Neutral fill for masked-out regions.
pub const MASK_FILL: f32 = 0.5;

const KEYFRAME_SEED_TAG: u64 = 0x6b65_79;
const VIDEO_SEED_TAG: u64 = 0x7669_64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Reconstruct the original object from its own reference crop.
    #[serde(rename = "self")]
    SelfReenact,
    /// Substitute a new object; masks are rebuilt adaptively per frame.
    Cross,
}

/// Ablation arms mirroring the two conditioning removals: no keyframe stage
/// (one-stage generation) and no reference fusion in the video stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Full,
    NoKeyframe,
    NoRefFusion,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Full, Arm::NoKeyframe, Arm::NoRefFusion];

    pub fn label(&self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoKeyframe => "no-keyframe",
            Arm::NoRefFusion => "no-ref-fusion",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReenactmentJob {
    pub source: VideoTensor,
    pub source_mask: MaskVideo,
    pub reference: ReferenceImage,
    pub mode: Mode,
    pub seed: u64,
    pub clip_length: usize,
}

impl ReenactmentJob {
    pub fn validate(&self) -> Result<()> {
        let (f, h, w, _) = self.source.dims();
        if self.source_mask.dims() != (f, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} does not match source {:?}",
                self.source_mask.dims(),
                (f, h, w)
            )));
        }
        if self.clip_length < 2 {
            return Err(Error::Dimension("clip length must be at least 2".into()));
        }
        if f < self.clip_length {
            return Err(Error::Dimension(format!(
                "source has {f} frames, clip length is {}",
                self.clip_length
            )));
        }
        Ok(())
    }

    /// The mask actually used for conditioning: the source mask in self mode,
    /// a per-frame adaptive ellipse matched to the reference in cross mode.
    pub fn effective_mask(&self) -> Result<MaskVideo> {
        match self.mode {
            Mode::SelfReenact => Ok(self.source_mask.clone()),
            Mode::Cross => adaptive_mask_video(&self.source_mask, self.reference.aspect()),
        }
    }

    fn window(&self, start: usize, len: usize) -> Result<ReenactmentJob> {
        let (f, _, _, _) = self.source.dims();
        if start + len > f {
            return Err(Error::Dimension(format!(
                "window {start}..{} exceeds {f} source frames",
                start + len
            )));
        }
        Ok(ReenactmentJob {
            source: VideoTensor::new(
                self.source.frames.slice(s![start..start + len, .., .., ..]).to_owned(),
            )?,
            source_mask: MaskVideo::new(
                self.source_mask.frames.slice(s![start..start + len, .., ..]).to_owned(),
            )?,
            reference: self.reference.clone(),
            mode: self.mode,
            seed: self.seed,
            clip_length: len,
        })
    }
}

#[derive(Debug, Clone)]
pub struct KeyFrameResult {
    pub keyframe: VideoTensor,
    pub reconstructed_reference: VideoTensor,
}

/// The two trained denoisers plus shared geometry and sampling settings.
pub struct Models {
    pub image: ModelBundle,
    pub video: ModelBundle,
    pub builder: ConditionBuilder,
    pub schedule: NoiseSchedule,
}

impl Models {
    pub fn new(image: ModelBundle, video: ModelBundle) -> Result<Self> {
        if image.stage != Stage::Image || video.stage != Stage::Video {
            return Err(Error::Data("model stages are swapped or wrong".into()));
        }
        Ok(Self {
            image,
            video,
            builder: ConditionBuilder::default(),
            schedule: NoiseSchedule::default(),
        })
    }

    pub fn load(img_dir: &Path, vid_dir: &Path) -> Result<Self> {
        let (image, _) = crate::dit::load_model(img_dir)?;
        let (video, _) = crate::dit::load_model(vid_dir)?;
        Self::new(image, video)
    }
}

/// Horizontal concatenation [left | right] of two same-height frames.
pub fn hcat_frames(left: &Array3<f32>, right: &Array3<f32>) -> Result<Array3<f32>> {
    let (hl, wl, cl) = left.dim();
    let (hr, wr, cr) = right.dim();
    if hl != hr || cl != cr {
        return Err(Error::ShapeMismatch(format!(
            "cannot concatenate {hl}x{wl}x{cl} with {hr}x{wr}x{cr}"
        )));
    }
    let mut out = Array3::zeros((hl, wl + wr, cl));
    out.slice_mut(s![.., 0..wl, ..]).assign(left);
    out.slice_mut(s![.., wl.., ..]).assign(right);
    Ok(out)
}

/// Splits a canvas back into (left, right) halves. Exact inverse of
/// `hcat_frames` for equal-width panels.
pub fn split_frame(canvas: &Array3<f32>) -> Result<(Array3<f32>, Array3<f32>)> {
    let (_, w, _) = canvas.dim();
    if w % 2 != 0 {
        return Err(Error::Dimension(format!("canvas width {w} is odd")));
    }
    let left = canvas.slice(s![.., 0..w / 2, ..]).to_owned();
    let right = canvas.slice(s![.., w / 2.., ..]).to_owned();
    Ok((left, right))
}

/// All pixel-space streams of the keyframe self-reconstruction canvas
/// `[reference panel | masked first frame]`. The reference panel is fully
/// masked-in (weight 1) so the model reconstructs the reference and the
/// keyframe simultaneously; `target` is what training reconstructs.
pub struct KeyframeCanvas {
    pub masked: VideoTensor,
    pub reference_stream: VideoTensor,
    pub mask: MaskVideo,
    pub target: VideoTensor,
}

pub fn keyframe_canvas(
    frame0: &Array3<f32>,
    mask0: ndarray::ArrayView2<f32>,
    reference: &ReferenceImage,
) -> Result<KeyframeCanvas> {
    let (h, w, c) = frame0.dim();
    let ones = Array2::from_elem((h, w), 1.0f32);
    let left_panel = place_reference(reference, ones.view(), (h, w))?;
    let right_placed = place_reference(reference, mask0, (h, w))?;

    let mask0_owned = mask0.to_owned();
    let frame0_video = VideoTensor::from_frame(frame0.clone())?;
    let mask_video =
        MaskVideo::new(mask0_owned.clone().insert_axis(Axis(0)).into_dimensionality().unwrap())?;
    let masked0 = masked_fill(&frame0_video, &mask_video, MASK_FILL)?;

    let gray = Array3::from_elem((h, w, c), MASK_FILL);
    let masked = VideoTensor::from_frame(hcat_frames(&gray, &masked0.frame(0).to_owned())?)?;
    let reference_stream =
        VideoTensor::from_frame(hcat_frames(&left_panel, &right_placed)?)?;
    let mut canvas_mask = Array2::zeros((h, 2 * w));
    canvas_mask.slice_mut(s![.., 0..w]).fill(1.0);
    canvas_mask.slice_mut(s![.., w..]).assign(&mask0_owned);
    let mask =
        MaskVideo::new(canvas_mask.insert_axis(Axis(0)).into_dimensionality().unwrap())?;
    let target = VideoTensor::from_frame(hcat_frames(&left_panel, frame0)?)?;
    Ok(KeyframeCanvas { masked, reference_stream, mask, target })
}

fn decode_tokens(
    builder: &ConditionBuilder,
    tokens: &TokenSequence,
    clamp: bool,
) -> Result<VideoTensor> {
    let latent = unpatchify(
        tokens,
        &TokenProjection::Identity,
        builder.codec.spatial_factor,
        builder.codec.temporal_factor,
    )?;
    let mut video = builder.codec.decode(&latent)?;
    if clamp {
        video.clamp_unit();
    }
    Ok(video)
}

/// Stage one: inpaints the first frame on the self-reconstruction canvas and
/// returns both panels.
pub fn generate_keyframe(m_img: &Models, job: &ReenactmentJob) -> Result<KeyFrameResult> {
    job.validate()?;
    let mask = job.effective_mask()?;
    let canvas = keyframe_canvas(
        &job.source.frame(0).to_owned(),
        mask.frame(0),
        &job.reference,
    )?;
    let bundle = m_img.builder.build_condition_prepared(
        &canvas.masked,
        &canvas.reference_stream,
        &canvas.mask,
    )?;
    let tokens = sample(
        &m_img.image,
        &bundle,
        &m_img.schedule,
        derive_seed(job.seed, KEYFRAME_SEED_TAG),
    )?;
    let out = decode_tokens(&m_img.builder, &tokens, true)?;
    let (left, right) = split_frame(&out.frame(0).to_owned())?;
    Ok(KeyFrameResult {
        keyframe: VideoTensor::from_frame(right)?,
        reconstructed_reference: VideoTensor::from_frame(left)?,
    })
}

/// Builds the video-stage condition bundle for a job window.
fn video_condition(
    models: &Models,
    job: &ReenactmentJob,
    keyframe: Option<&VideoTensor>,
    arm: Arm,
) -> Result<ConditionBundle> {
    let mask = job.effective_mask()?;
    let masked = masked_fill(&job.source, &mask, MASK_FILL)?;
    let mut bundle =
        models.builder.build_condition(&masked, &job.reference, &mask, Stage::Video)?;
    if arm == Arm::NoRefFusion {
        let x_tilde = models.builder.tokens_of(&masked)?;
        bundle = bundle.without_reference_fusion(&x_tilde)?;
    }
    if let Some(kf) = keyframe {
        let kf_tokens = models.builder.tokens_of(kf)?;
        bundle = bundle.with_keyframe(kf_tokens)?;
    }
    Ok(bundle)
}

/// Stage two: generates `clip_length` frames conditioned on the keyframe.
/// The decoded first frame equals the keyframe bit for bit.
pub fn generate_video(
    models: &Models,
    job: &ReenactmentJob,
    keyframe: &VideoTensor,
) -> Result<VideoTensor> {
    generate_video_arm(models, job, Some(keyframe), Arm::Full)
}

pub fn generate_video_arm(
    models: &Models,
    job: &ReenactmentJob,
    keyframe: Option<&VideoTensor>,
    arm: Arm,
) -> Result<VideoTensor> {
    job.validate()?;
    let job = job.window(0, job.clip_length)?;
    if let Some(kf) = keyframe {
        let (kf_f, kf_h, kf_w, kf_c) = kf.dims();
        let (_, h, w, c) = job.source.dims();
        if (kf_f, kf_h, kf_w, kf_c) != (1, h, w, c) {
            return Err(Error::ShapeMismatch(format!(
                "keyframe {:?} does not match source frames {:?}",
                (kf_f, kf_h, kf_w, kf_c),
                (1, h, w, c)
            )));
        }
    }
    let effective_kf = if arm == Arm::NoKeyframe { None } else { keyframe };
    let bundle = video_condition(models, &job, effective_kf, arm)?;
    let tokens = sample(
        &models.video,
        &bundle,
        &models.schedule,
        derive_seed(job.seed, VIDEO_SEED_TAG),
    )?;
    decode_tokens(&models.builder, &tokens, true)
}

/// Per-clip outputs of a chained long-video run, before boundary
/// deduplication. Clip k+1's keyframe is clip k's final frame.
pub fn generate_long_video_clips(
    models: &Models,
    job: &ReenactmentJob,
    n_clips: usize,
) -> Result<Vec<VideoTensor>> {
    if n_clips == 0 {
        return Err(Error::Dimension("need at least one clip".into()));
    }
    let f = job.clip_length;
    let needed = n_clips * (f - 1) + 1;
    let (have, _, _, _) = job.source.dims();
    if have < needed {
        return Err(Error::Dimension(format!(
            "chaining {n_clips} clips of {f} frames needs {needed} source frames, have {have}"
        )));
    }
    let mut clips = Vec::with_capacity(n_clips);
    let mut keyframe: Option<VideoTensor> = None;
    for k in 0..n_clips {
        let window = job.window(k * (f - 1), f)?;
        let kf = match keyframe.take() {
            Some(kf) => kf,
            None => generate_keyframe(models, &window)?.keyframe,
        };
        let clip = generate_video(models, &window, &kf)?;
        let last = VideoTensor::from_frame(clip.frame(f - 1).to_owned())?;
        keyframe = Some(last);
        clips.push(clip);
    }
    Ok(clips)
}

/// Chained generation: emits `n_clips * (clip_length - 1) + 1` frames, the
/// shared boundary frame written once.
pub fn generate_long_video(
    models: &Models,
    job: &ReenactmentJob,
    n_clips: usize,
) -> Result<VideoTensor> {
    let clips = generate_long_video_clips(models, job, n_clips)?;
    let f = job.clip_length;
    let (_, h, w, c) = clips[0].dims();
    let total = n_clips * (f - 1) + 1;
    let mut frames = Array4::zeros((total, h, w, c));
    let mut cursor = 0;
    for (k, clip) in clips.iter().enumerate() {
        let start = if k == 0 { 0 } else { 1 };
        for t in start..f {
            frames.index_axis_mut(Axis(0), cursor).assign(&clip.frame(t));
            cursor += 1;
        }
    }
    VideoTensor::new(frames)
}

/// Full two-stage reenactment of one clip window.
pub fn reenact(models: &Models, job: &ReenactmentJob) -> Result<VideoTensor> {
    reenact_arm(models, job, Arm::Full)
}

/// Reenactment with one ablation arm:
/// - `Full`: keyframe stage, then video stage with reference fusion;
/// - `NoKeyframe`: one-stage video generation (first frame left noisy);
/// - `NoRefFusion`: keyframe kept, token blending weights forced to zero.
pub fn reenact_arm(models: &Models, job: &ReenactmentJob, arm: Arm) -> Result<VideoTensor> {
    job.validate()?;
    match arm {
        Arm::NoKeyframe => generate_video_arm(models, job, None, arm),
        Arm::Full | Arm::NoRefFusion => {
            let kf = generate_keyframe(models, job)?;
            generate_video_arm(models, job, Some(&kf.keyframe), arm)
        }
    }
}

/// A gray-fill baseline: the source with its masked region flattened to
/// neutral gray. "Better than doing nothing" floor for PSNR comparisons.
pub fn gray_fill_baseline(job: &ReenactmentJob) -> Result<VideoTensor> {
    let mask = job.effective_mask()?;
    masked_fill(&job.source, &mask, MASK_FILL)
}

// ---------------------------------------------------------------------------
// training-sample preparation (shared by the CLI and the test suites)
// ---------------------------------------------------------------------------

/// Tokenizes the keyframe canvas of a clip into one image-stage sample.
pub fn image_stage_sample(
    builder: &ConditionBuilder,
    frame0: &Array3<f32>,
    mask0: ndarray::ArrayView2<f32>,
    reference: &ReferenceImage,
) -> Result<TrainSample> {
    let canvas = keyframe_canvas(frame0, mask0, reference)?;
    let x0 = builder.tokens_of(&canvas.target)?;
    let x_tilde = builder.tokens_of(&canvas.masked)?;
    let x_ref = builder.tokens_of(&canvas.reference_stream)?;
    let weights = builder.weights_of(&canvas.mask)?;
    Ok(TrainSample {
        x0: x0.tokens,
        x_tilde: x_tilde.tokens,
        x_ref: x_ref.tokens,
        weights: weights.weights,
        grid: x_tilde.grid,
        patch: x_tilde.patch,
    })
}

/// Tokenizes one clip window into a video-stage sample.
pub fn video_stage_sample(
    builder: &ConditionBuilder,
    video: &VideoTensor,
    mask: &MaskVideo,
    reference: &ReferenceImage,
) -> Result<TrainSample> {
    let masked = masked_fill(video, mask, MASK_FILL)?;
    let (f, h, w, _) = masked.dims();
    let mut ref_frames = Array4::zeros((f, h, w, 3));
    for t in 0..f {
        let placed = place_reference(reference, mask.frame(t), (h, w))?;
        ref_frames.index_axis_mut(Axis(0), t).assign(&placed);
    }
    let ref_video = VideoTensor::new(ref_frames)?;
    let x0 = builder.tokens_of(video)?;
    let x_tilde = builder.tokens_of(&masked)?;
    let x_ref = builder.tokens_of(&ref_video)?;
    let weights = builder.weights_of(mask)?;
    Ok(TrainSample {
        x0: x0.tokens,
        x_tilde: x_tilde.tokens,
        x_ref: x_ref.tokens,
        weights: weights.weights,
        grid: x_tilde.grid,
        patch: x_tilde.patch,
    })
}

/// Loads every clip of a dataset split as training samples for one stage.
pub fn load_training_set(
    root: &Path,
    split: &str,
    stage: Stage,
    builder: &ConditionBuilder,
    clip_length: usize,
) -> Result<Vec<TrainSample>> {
    let manifest = Manifest::load(root)?;
    let entries = manifest.split(split)?;
    use rayon::prelude::*;
    entries
        .par_iter()
        .map(|entry| {
            let clip_dir = root.join(&entry.path);
            let (video, mask, reference) = load_clip(&clip_dir)?;
            match stage {
                Stage::Image => image_stage_sample(
                    builder,
                    &video.frame(0).to_owned(),
                    mask.frame(0),
                    &reference,
                ),
                Stage::Video => {
                    let (f, _, _, _) = video.dims();
                    if f < clip_length {
                        return Err(Error::Data(format!(
                            "{} has {f} frames, need {clip_length}",
                            clip_dir.display()
                        )));
                    }
                    let window = VideoTensor::new(
                        video.frames.slice(s![0..clip_length, .., .., ..]).to_owned(),
                    )?;
                    let mwindow = MaskVideo::new(
                        mask.frames.slice(s![0..clip_length, .., ..]).to_owned(),
                    )?;
                    video_stage_sample(builder, &window, &mwindow, &reference)
                }
            }
        })
        .collect()
}

/// Reads the frames/masks/reference triplet of one clip directory.
pub fn load_clip(clip_dir: &Path) -> Result<(VideoTensor, MaskVideo, ReferenceImage)> {
    let frames = find_frame_dir(clip_dir, "frames")
        .ok_or_else(|| Error::Data(format!("no frames under {}", clip_dir.display())))?;
    let masks = clip_dir.join("masks");
    let video = VideoTensor::read_dir(&frames)?;
    let mask = MaskVideo::read_dir(&masks)?;
    let reference = ReferenceImage::read_png(&clip_dir.join("reference.png"))?;
    Ok((video, mask, reference))
}

// ---------------------------------------------------------------------------
// job files
// ---------------------------------------------------------------------------

/// On-disk description of one reenactment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub source_dir: PathBuf,
    pub mask_dir: PathBuf,
    pub reference_png: PathBuf,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clip_length")]
    pub clip_length: usize,
    #[serde(default = "default_n_clips")]
    pub n_clips: usize,
    pub checkpoint_img: PathBuf,
    pub checkpoint_vid: PathBuf,
    pub out_dir: PathBuf,
}

fn default_clip_length() -> usize {
    16
}

fn default_n_clips() -> usize {
    1
}

impl JobSpec {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn build_job(&self) -> Result<ReenactmentJob> {
        Ok(ReenactmentJob {
            source: VideoTensor::read_dir(&self.source_dir)?,
            source_mask: MaskVideo::read_dir(&self.mask_dir)?,
            reference: ReferenceImage::read_png(&self.reference_png)?,
            mode: self.mode,
            seed: self.seed,
            clip_length: self.clip_length,
        })
    }

    /// Runs the job end to end and writes the output frames plus a JSON echo
    /// of the resolved spec. Returns the generated video.
    pub fn run(&self) -> Result<VideoTensor> {
        let models = Models::load(&self.checkpoint_img, &self.checkpoint_vid)?;
        let job = self.build_job()?;
        if job.mode == Mode::Cross {
            assert_mask_coverage(&job)?;
        }
        let video = if self.n_clips > 1 {
            generate_long_video(&models, &job, self.n_clips)?
        } else {
            reenact(&models, &job)?
        };
        video.write_dir(&self.out_dir)?;
        std::fs::write(
            self.out_dir.join("job.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(video)
    }
}

/// Re-asserts the masking coverage invariant end to end: the adaptive mask
/// must hold every binarized source-mask pixel at full weight.
pub fn assert_mask_coverage(job: &ReenactmentJob) -> Result<()> {
    let adaptive = job.effective_mask()?;
    let (f, _, _) = job.source_mask.dims();
    for t in 0..f {
        let src = job.source_mask.frame(t);
        let ada = adaptive.frame(t);
        for ((r, c), &v) in src.indexed_iter() {
            if v >= 0.5 && ada[[r, c]] < 1.0 - 1e-6 {
                return Err(Error::Data(format!(
                    "adaptive mask drops foreground pixel ({r},{c}) of frame {t}: {}",
                    ada[[r, c]]
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluation studies over a dataset split
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipArmScore {
    pub clip: String,
    pub psnr_db: f64,
    pub baseline_psnr_db: f64,
    pub subject_consistency: f64,
    pub motion_smoothness: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub mean_psnr_db: f64,
    pub mean_subject_consistency: f64,
    pub mean_motion_smoothness: f64,
    pub clips: Vec<ClipArmScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub split: String,
    pub seed: u64,
    pub mean_baseline_psnr_db: f64,
    pub arms: Vec<ArmSummary>,
}

impl StudyReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>10} {:>12} {:>12}\n",
            "arm", "psnr_db", "subj_cons", "mot_smooth"
        ));
        for a in &self.arms {
            out.push_str(&format!(
                "{:<14} {:>10.3} {:>12.4} {:>12.4}\n",
                a.arm.label(),
                a.mean_psnr_db,
                a.mean_subject_consistency,
                a.mean_motion_smoothness
            ));
        }
        out.push_str(&format!(
            "{:<14} {:>10.3}\n",
            "gray-baseline", self.mean_baseline_psnr_db
        ));
        out
    }
}

/// Self-reenactment study over one dataset split: reenacts every clip with
/// each requested arm and scores it against the ground-truth window, plus the
/// gray-fill baseline. Generated frames are written under
/// `out_root/<arm>/<clip>/` when requested.
pub fn run_self_reenactment_study(
    models: &Models,
    root: &Path,
    split: &str,
    seed: u64,
    arms: &[Arm],
    out_root: Option<&Path>,
) -> Result<StudyReport> {
    let manifest = Manifest::load(root)?;
    let entries = manifest.split(split)?;
    if entries.is_empty() {
        return Err(Error::Data(format!("split {split} is empty")));
    }
    let clip_length = manifest.frames;

    use rayon::prelude::*;
    let per_clip: Vec<(String, f64, Vec<(Arm, ClipArmScore)>)> = entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| -> Result<_> {
            let clip_dir = root.join(&entry.path);
            let (video, mask, reference) = load_clip(&clip_dir)?;
            let job = ReenactmentJob {
                source: video,
                source_mask: mask,
                reference,
                mode: Mode::SelfReenact,
                seed: derive_seed(seed, i as u64),
                clip_length,
            };
            let gt = job.window(0, clip_length)?;
            let baseline = gray_fill_baseline(&gt)?;
            let baseline_psnr = crate::metrics::psnr(&baseline, &gt.source)?;
            let mut scores = Vec::new();
            for &arm in arms {
                let gen = reenact_arm(models, &job, arm)?;
                if let Some(out) = out_root {
                    gen.write_dir(&out.join(arm.label()).join(&entry.name))?;
                }
                let score = ClipArmScore {
                    clip: entry.name.clone(),
                    psnr_db: crate::metrics::psnr(&gen, &gt.source)?,
                    baseline_psnr_db: baseline_psnr,
                    subject_consistency: crate::metrics::subject_consistency(
                        &gen,
                        &gt.source_mask,
                    )?,
                    motion_smoothness: crate::metrics::motion_smoothness(&gen)?,
                };
                scores.push((arm, score));
            }
            Ok((entry.name.clone(), baseline_psnr, scores))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = per_clip.len() as f64;
    let mean_baseline = per_clip.iter().map(|(_, b, _)| b).sum::<f64>() / n;
    let mut arms_out = Vec::new();
    for &arm in arms {
        let clips: Vec<ClipArmScore> = per_clip
            .iter()
            .flat_map(|(_, _, scores)| {
                scores.iter().filter(|(a, _)| *a == arm).map(|(_, s)| s.clone())
            })
            .collect();
        arms_out.push(ArmSummary {
            arm,
            mean_psnr_db: clips.iter().map(|c| c.psnr_db).sum::<f64>() / n,
            mean_subject_consistency: clips.iter().map(|c| c.subject_consistency).sum::<f64>()
                / n,
            mean_motion_smoothness: clips.iter().map(|c| c.motion_smoothness).sum::<f64>() / n,
            clips,
        });
    }
    Ok(StudyReport {
        split: split.to_string(),
        seed,
        mean_baseline_psnr_db: mean_baseline,
        arms: arms_out,
    })
}

/// Cross-reenactment over the held-out split: each test clip is reenacted
/// with the reference of another test clip (a different sprite where
/// possible). Returns the mean subject consistency of the generated object
/// region under the given arm, asserting mask coverage and determinism on
/// the way.
pub fn cross_consistency_study(
    models: &Models,
    root: &Path,
    seed: u64,
    arm: Arm,
) -> Result<f64> {
    let manifest = Manifest::load(root)?;
    let entries = manifest.split("test")?;
    if entries.len() < 2 {
        return Err(Error::Data("cross study needs at least two test clips".into()));
    }
    use rayon::prelude::*;
    let scores: Vec<f64> = entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| -> Result<f64> {
            // pick a donor clip with a different sprite when available
            let donor = entries
                .iter()
                .cycle()
                .skip(i + 1)
                .take(entries.len() - 1)
                .find(|e| e.sprite_id != entry.sprite_id)
                .unwrap_or(&entries[(i + 1) % entries.len()]);
            let clip_dir = root.join(&entry.path);
            let donor_dir = root.join(&donor.path);
            let (video, mask, _) = load_clip(&clip_dir)?;
            let reference = ReferenceImage::read_png(&donor_dir.join("reference.png"))?;
            let job = ReenactmentJob {
                source: video,
                source_mask: mask,
                reference,
                mode: Mode::Cross,
                seed: derive_seed(seed, i as u64),
                clip_length: manifest.frames,
            };
            assert_mask_coverage(&job)?;
            let gen = reenact_arm(models, &job, arm)?;
            let gen2 = reenact_arm(models, &job, arm)?;
            if gen.frames != gen2.frames {
                return Err(Error::Data("cross reenactment is not deterministic".into()));
            }
            let adaptive = job.effective_mask()?;
            crate::metrics::subject_consistency(&gen, &adaptive)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
