//! Procedural sprite-HOI clip generator: a round "grabber" blob carries a
//! swappable object sprite along a smooth trajectory over a flat or gradient
//! background. Masks are the object sprite's exact alpha, so mask-dependent
//! invariants can be asserted without tolerance on synthetic data.
//!
//! Dataset layout on disk:
//! `root/{train,test}/clip_%04d/{frames,masks}/%05d.png` plus per-clip
//! `reference.png` and `meta.json`, and a `root/manifest.json` index.

use crate::error::{Error, Result};
use crate::util::derive_seed;
use crate::video::{MaskVideo, ReferenceImage, VideoTensor};
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// The eight sprite shapes. Aspect ratios vary on purpose so cross-swaps
/// exercise the aspect-matching adaptive mask (tall bottle vs squat can).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpriteKind {
    Bottle,
    Can,
    Box,
    Ellipse,
    Star,
    Capsule,
    Wedge,
    Ring,
}

impl SpriteKind {
    pub const ALL: [SpriteKind; 8] = [
        SpriteKind::Bottle,
        SpriteKind::Can,
        SpriteKind::Box,
        SpriteKind::Ellipse,
        SpriteKind::Star,
        SpriteKind::Capsule,
        SpriteKind::Wedge,
        SpriteKind::Ring,
    ];

    pub fn id(&self) -> usize {
        Self::ALL.iter().position(|k| k == self).unwrap()
    }

    /// (half-height, half-width) in pixels before scaling.
    fn half_extents(&self) -> (f64, f64) {
        match self {
            SpriteKind::Bottle => (11.0, 5.0),
            SpriteKind::Can => (6.0, 7.5),
            SpriteKind::Box => (7.0, 7.0),
            SpriteKind::Ellipse => (6.0, 8.5),
            SpriteKind::Star => (8.0, 8.0),
            SpriteKind::Capsule => (9.0, 5.0),
            SpriteKind::Wedge => (6.5, 7.5),
            SpriteKind::Ring => (7.5, 7.5),
        }
    }
}

/// Sprites used for the training split.
pub const TRAIN_SPRITES: [SpriteKind; 6] = [
    SpriteKind::Bottle,
    SpriteKind::Can,
    SpriteKind::Box,
    SpriteKind::Ellipse,
    SpriteKind::Capsule,
    SpriteKind::Wedge,
];

/// Held-out sprites that never appear in training clips.
pub const TEST_SPRITES: [SpriteKind; 2] = [SpriteKind::Star, SpriteKind::Ring];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub sprite: SpriteKind,
    pub scale: f64,
    pub tint: [f32; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Flat([f32; 3]),
    Gradient([f32; 3], [f32; 3]),
}

/// Grabber path: waypoints in (row, col) pixels, eased smoothly end to end.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<(f64, f64)>,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub canvas: (usize, usize),
    pub frames: usize,
    pub grabber: Trajectory,
    pub object: ObjectSpec,
    /// Object center offset from the grabber center (row, col).
    pub grip_offset: (f64, f64),
    pub background: Background,
    pub seed: u64,
}

/// Position along the eased trajectory at progress u in [0,1].
fn trajectory_position(tr: &Trajectory, u: f64) -> (f64, f64) {
    let pts = &tr.waypoints;
    if pts.len() == 1 {
        return pts[0];
    }
    // global ease-in-out, then piecewise-linear between waypoints
    let p = 0.5 * (1.0 - (std::f64::consts::PI * u).cos());
    let segs = (pts.len() - 1) as f64;
    let x = (p * segs).min(segs - 1e-9);
    let i = x.floor() as usize;
    let frac = x - i as f64;
    let (r0, c0) = pts[i];
    let (r1, c1) = pts[i + 1];
    (r0 + (r1 - r0) * frac, c0 + (c1 - c0) * frac)
}

/// Signed distance (negative inside) from a point in sprite-local pixel
/// coordinates (dy down, dx right) to the sprite boundary.
fn sprite_sdf(kind: SpriteKind, dy: f64, dx: f64, scale: f64) -> f64 {
    let (hh, hw) = kind.half_extents();
    let (hh, hw) = (hh * scale, hw * scale);
    match kind {
        SpriteKind::Box => rect_sdf(dy, dx, hh, hw),
        SpriteKind::Can => rect_sdf(dy, dx, hh - 1.0, hw - 1.0) - 1.0, // rounded corners
        SpriteKind::Bottle => {
            // neck (upper third, narrow) union body (lower two thirds)
            let body = rect_sdf(dy - hh * 0.34, dx, hh * 0.66, hw);
            let neck = rect_sdf(dy + hh * 0.62, dx, hh * 0.38, hw * 0.38);
            body.min(neck)
        }
        SpriteKind::Ellipse => {
            let rho = ((dy / hh).powi(2) + (dx / hw).powi(2)).sqrt();
            (rho - 1.0) * hh.min(hw)
        }
        SpriteKind::Star => {
            let r = (dy * dy + dx * dx).sqrt();
            let theta = dy.atan2(dx);
            let lobe = 0.5 * (1.0 + (5.0 * theta).cos());
            let boundary = hh * (0.45 + 0.55 * lobe);
            r - boundary
        }
        SpriteKind::Capsule => {
            // vertical segment of half-length hh - hw, thickness hw
            let seg = hh - hw;
            let cy = dy.clamp(-seg, seg);
            ((dy - cy).powi(2) + dx * dx).sqrt() - hw
        }
        SpriteKind::Wedge => {
            // downward-pointing triangle: flat top edge, apex at the bottom
            let top = -hh - dy; // above the top edge
            let slope = (dy - hh) * hw / (2.0 * hh) + dx.abs() - hw;
            top.max(slope / (1.0 + (hw / (2.0 * hh)).powi(2)).sqrt())
        }
        SpriteKind::Ring => {
            let r = (dy * dy + dx * dx).sqrt();
            (r - hh * 0.72).abs() - hh * 0.28
        }
    }
}

fn rect_sdf(dy: f64, dx: f64, hh: f64, hw: f64) -> f64 {
    let qy = dy.abs() - hh;
    let qx = dx.abs() - hw;
    let outside = (qy.max(0.0).powi(2) + qx.max(0.0).powi(2)).sqrt();
    outside + qy.max(qx).min(0.0)
}

fn alpha_from_sdf(sdf: f64) -> f32 {
    (0.5 - sdf).clamp(0.0, 1.0) as f32
}

fn background_pixel(bg: &Background, r: usize, c: usize, h: usize, w: usize) -> [f32; 3] {
    match bg {
        Background::Flat(col) => *col,
        Background::Gradient(a, b) => {
            let t = (r as f32 / (h - 1).max(1) as f32 + c as f32 / (w - 1).max(1) as f32) / 2.0;
            [
                a[0] + (b[0] - a[0]) * t,
                a[1] + (b[1] - a[1]) * t,
                a[2] + (b[2] - a[2]) * t,
            ]
        }
    }
}

const GRABBER_TINT: [f32; 3] = [0.45, 0.34, 0.30];

/// Paths of everything one rendered clip leaves on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub clip_dir: PathBuf,
    pub video_dir: PathBuf,
    pub mask_dir: PathBuf,
    pub reference_png: PathBuf,
    pub meta_json: PathBuf,
    pub sprite_id: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.canvas;
        if self.frames < 2 {
            return Err(Error::Spec("a clip needs at least 2 frames".into()));
        }
        if self.grabber.waypoints.is_empty() {
            return Err(Error::Spec("trajectory needs at least one waypoint".into()));
        }
        let (hh, hw) = self.object.half_extents_scaled();
        for t in 0..self.frames {
            let u = t as f64 / (self.frames - 1) as f64;
            let (gr, gc) = trajectory_position(&self.grabber, u);
            let (or, oc) = (gr + self.grip_offset.0, gc + self.grip_offset.1);
            let fits = or - hh >= 0.0
                && or + hh <= (h - 1) as f64
                && oc - hw >= 0.0
                && oc + hw <= (w - 1) as f64
                && gr - self.grabber.radius >= 0.0
                && gr + self.grabber.radius <= (h - 1) as f64
                && gc - self.grabber.radius >= 0.0
                && gc + self.grabber.radius <= (w - 1) as f64;
            if !fits {
                return Err(Error::Spec(format!(
                    "frame {t}: sprite or grabber leaves the {h}x{w} canvas"
                )));
            }
        }
        Ok(())
    }

    /// Renders the clip in memory: (video, exact object masks).
    pub fn render(&self) -> Result<(VideoTensor, MaskVideo)> {
        self.validate()?;
        let (h, w) = self.canvas;
        let f = self.frames;
        let mut frames = Array4::zeros((f, h, w, 3));
        let mut masks = Array3::zeros((f, h, w));
        for t in 0..f {
            let u = t as f64 / (f - 1) as f64;
            let (gr, gc) = trajectory_position(&self.grabber, u);
            let (or, oc) = (gr + self.grip_offset.0, gc + self.grip_offset.1);
            for r in 0..h {
                for c in 0..w {
                    let mut px = background_pixel(&self.background, r, c, h, w);
                    // grabber blob behind the object
                    let gd = ((r as f64 - gr).powi(2) + (c as f64 - gc).powi(2)).sqrt()
                        - self.grabber.radius;
                    let ga = alpha_from_sdf(gd);
                    if ga > 0.0 {
                        for k in 0..3 {
                            px[k] = px[k] * (1.0 - ga) + GRABBER_TINT[k] * ga;
                        }
                    }
                    let oa = alpha_from_sdf(sprite_sdf(
                        self.object.sprite,
                        r as f64 - or,
                        c as f64 - oc,
                        self.object.scale,
                    ));
                    if oa > 0.0 {
                        for k in 0..3 {
                            px[k] = px[k] * (1.0 - oa) + self.object.tint[k] * oa;
                        }
                    }
                    for k in 0..3 {
                        frames[[t, r, c, k]] = px[k];
                    }
                    masks[[t, r, c]] = oa;
                }
            }
        }
        Ok((VideoTensor::new(frames)?, MaskVideo::new(masks)?))
    }

    /// The object sprite alone on neutral gray, tight-cropped to its solid
    /// footprint.
    pub fn render_reference(&self) -> Result<ReferenceImage> {
        let (hh, hw) = self.object.half_extents_scaled();
        let h = (2.0 * hh).ceil() as usize + 6;
        let w = (2.0 * hw).ceil() as usize + 6;
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let mut pixels = Array3::from_elem((h, w, 3), 0.5f32);
        let mut alpha = Array2::zeros((h, w));
        for r in 0..h {
            for c in 0..w {
                let a = alpha_from_sdf(sprite_sdf(
                    self.object.sprite,
                    r as f64 - cy,
                    c as f64 - cx,
                    self.object.scale,
                ));
                alpha[[r, c]] = a;
                for k in 0..3 {
                    pixels[[r, c, k]] = 0.5 * (1.0 - a) + self.object.tint[k] * a;
                }
            }
        }
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for ((r, c), &a) in alpha.indexed_iter() {
            if a >= 0.5 {
                bounds = Some(match bounds {
                    None => (r, r, c, c),
                    Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                });
            }
        }
        let (r0, r1, c0, c1) =
            bounds.ok_or_else(|| Error::Spec("sprite rendered to nothing".into()))?;
        let crop = pixels.slice(ndarray::s![r0..=r1, c0..=c1, ..]).to_owned();
        ReferenceImage::new(crop)
    }
}

impl ObjectSpec {
    fn half_extents_scaled(&self) -> (f64, f64) {
        let (hh, hw) = self.sprite.half_extents();
        // +1.5 px for the soft edge
        (hh * self.scale + 1.5, hw * self.scale + 1.5)
    }
}

/// Renders one clip to `clip_dir` and returns the file layout.
pub fn render_clip(spec: &SceneSpec, clip_dir: &Path) -> Result<SampleRecord> {
    let (video, masks) = spec.render()?;
    let reference = spec.render_reference()?;
    let video_dir = clip_dir.join("frames");
    let mask_dir = clip_dir.join("masks");
    let reference_png = clip_dir.join("reference.png");
    let meta_json = clip_dir.join("meta.json");
    video.write_dir(&video_dir)?;
    masks.write_dir(&mask_dir)?;
    reference.write_png(&reference_png)?;
    std::fs::write(&meta_json, serde_json::to_string_pretty(spec)?)?;
    Ok(SampleRecord {
        clip_dir: clip_dir.to_path_buf(),
        video_dir,
        mask_dir,
        reference_png,
        meta_json,
        sprite_id: spec.object.sprite.id(),
    })
}

/// A random but renderable scene for the given sprite.
pub fn random_scene(
    canvas: (usize, usize),
    frames: usize,
    sprite: SpriteKind,
    seed: u64,
) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = canvas;
    let scale = 0.8 + rng.random::<f64>() * 0.4;
    let radius = 4.5 + rng.random::<f64>() * 1.5;
    let grip_len = radius * 0.5;
    let grip_angle = rng.random::<f64>() * std::f64::consts::TAU;
    let grip = (grip_len * grip_angle.sin(), grip_len * grip_angle.cos());
    let object = ObjectSpec { sprite, scale, tint: saturated_tint(&mut rng) };
    let (hh, hw) = object.half_extents_scaled();
    let margin_r = (hh + grip.0.abs()).max(radius) + 1.5;
    let margin_c = (hw + grip.1.abs()).max(radius) + 1.5;
    let n_points = 2 + rng.random_range(0..2);
    let waypoints: Vec<(f64, f64)> = (0..n_points)
        .map(|_| {
            (
                margin_r + rng.random::<f64>() * ((h - 1) as f64 - 2.0 * margin_r),
                margin_c + rng.random::<f64>() * ((w - 1) as f64 - 2.0 * margin_c),
            )
        })
        .collect();
    let background = if rng.random::<f32>() < 0.5 {
        Background::Flat(pastel_tint(&mut rng))
    } else {
        Background::Gradient(pastel_tint(&mut rng), pastel_tint(&mut rng))
    };
    SceneSpec {
        canvas,
        frames,
        grabber: Trajectory { waypoints, radius },
        object,
        grip_offset: grip,
        background,
        seed,
    }
}

fn saturated_tint(rng: &mut ChaCha8Rng) -> [f32; 3] {
    // one strong channel, two weak
    let strong = rng.random_range(0..3);
    let mut t = [0.0f32; 3];
    for (k, v) in t.iter_mut().enumerate() {
        *v = if k == strong {
            0.65 + rng.random::<f32>() * 0.35
        } else {
            rng.random::<f32>() * 0.35
        };
    }
    t
}

fn pastel_tint(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [
        0.55 + rng.random::<f32>() * 0.4,
        0.55 + rng.random::<f32>() * 0.4,
        0.55 + rng.random::<f32>() * 0.4,
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub sprite: SpriteKind,
    pub sprite_id: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub canvas: (usize, usize),
    pub frames: usize,
    pub split_ratio: f64,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        if !path.is_file() {
            return Err(Error::Data(format!("no manifest.json under {}", root.display())));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn split(&self, name: &str) -> Result<&[ManifestEntry]> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(Error::Data(format!("unknown split {other}"))),
        }
    }
}

/// Generates `n` clips under `root` with disjoint sprite pools per split:
/// test clips use sprites the training split never sees.
pub fn make_dataset(
    root: &Path,
    n: usize,
    split_ratio: f64,
    frames: usize,
    canvas: (usize, usize),
    seed: u64,
    workers: usize,
) -> Result<Manifest> {
    if n < 2 {
        return Err(Error::Spec(format!("need at least 2 clips for a split, got {n}")));
    }
    if !(0.0..=1.0).contains(&split_ratio) {
        return Err(Error::Spec(format!("split ratio {split_ratio} outside [0,1]")));
    }
    let n_train = ((n as f64 * split_ratio).round() as usize).clamp(1, n - 1);

    let mut jobs = Vec::with_capacity(n);
    for i in 0..n {
        let is_train = i < n_train;
        let pool: &[SpriteKind] = if is_train { &TRAIN_SPRITES } else { &TEST_SPRITES };
        let clip_seed = derive_seed(seed, i as u64);
        let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(clip_seed, 0x51));
        let sprite = pool[pick.random_range(0..pool.len())];
        let split = if is_train { "train" } else { "test" };
        let local = if is_train { i } else { i - n_train };
        let name = format!("clip_{local:04}");
        let dir = root.join(split).join(&name);
        jobs.push((is_train, name, dir, sprite, clip_seed));
    }

    let render_one = |job: &(bool, String, PathBuf, SpriteKind, u64)| -> Result<()> {
        let (_, _, dir, sprite, clip_seed) = job;
        let scene = random_scene(canvas, frames, *sprite, *clip_seed);
        render_clip(&scene, dir)?;
        Ok(())
    };
    if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Data(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            jobs.par_iter().map(render_one).collect::<Result<Vec<_>>>()
        })?;
    } else {
        for job in &jobs {
            render_one(job)?;
        }
    }

    let mut manifest = Manifest {
        seed,
        canvas,
        frames,
        split_ratio,
        train: Vec::new(),
        test: Vec::new(),
    };
    for (is_train, name, dir, sprite, clip_seed) in jobs {
        let entry = ManifestEntry {
            name,
            path: dir.strip_prefix(root).unwrap_or(&dir).to_path_buf(),
            sprite,
            sprite_id: sprite.id(),
            seed: clip_seed,
        };
        if is_train {
            manifest.train.push(entry);
        } else {
            manifest.test.push(entry);
        }
    }
    std::fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
