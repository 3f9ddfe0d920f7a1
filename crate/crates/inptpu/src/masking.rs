//! Adaptive masking for shape control and spatial reference placement.
//!
//! Coordinates: pixel (r, c) has its center at (r, c) and occupies the unit
//! square r±0.5 × c±0.5. Oriented boxes are measured over those unit squares,
//! so an axis-aligned run of 10 rows has height 10, not 9.

use crate::error::{Error, Result};
use crate::util::resize_bilinear_3d;
use crate::video::{MaskVideo, ReferenceImage, VideoTensor};
use ndarray::{Array2, Array3, ArrayView2, Axis};

/// Threshold above which a soft mask pixel counts as foreground.
pub const BINARIZE_THRESHOLD: f32 = 0.5;

/// Soft masks reach zero at this normalized elliptical radius.
pub const FALLOFF_END: f64 = 1.25;

/// Minimum-area oriented rectangle.
///
/// `angle` is the direction of the width axis relative to the column axis,
/// in radians within [-pi/2, pi/2). At angle 0 the height spans rows and the
/// width spans columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    /// (row, col) of the rectangle center.
    pub center: (f64, f64),
    pub h: f64,
    pub w: f64,
    pub angle: f64,
}

/// Minimum-area oriented rectangle over a set of (x, y) points.
///
/// The optimum is attained with one side collinear to a convex-hull edge, so
/// scanning hull-edge directions is exact.
pub fn min_area_rect(points: &[[f64; 2]]) -> Result<OrientedBox> {
    if points.is_empty() {
        return Err(Error::EmptyMask("no points for oriented box".into()));
    }
    let hull = convex_hull(points);
    if hull.len() == 1 {
        let p = hull[0];
        return Ok(OrientedBox { center: (p[1], p[0]), h: 0.0, w: 0.0, angle: 0.0 });
    }

    let mut best_area = f64::INFINITY;
    let mut best: Option<(f64, f64, f64, [f64; 2])> = None; // (angle of u, extent_u, extent_v, center xy)
    let n = hull.len();
    for i in 0..n {
        let p = hull[i];
        let q = hull[(i + 1) % n];
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let len = (dx * dx + dy * dy).sqrt();
        if len < 1e-12 {
            continue;
        }
        let u = [dx / len, dy / len];
        let v = [-u[1], u[0]];
        let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for h in &hull {
            let pu = h[0] * u[0] + h[1] * u[1];
            let pv = h[0] * v[0] + h[1] * v[1];
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let (eu, ev) = (umax - umin, vmax - vmin);
        let area = eu * ev;
        if area < best_area - 1e-12 {
            best_area = area;
            let cu = (umin + umax) / 2.0;
            let cv = (vmin + vmax) / 2.0;
            let center = [cu * u[0] + cv * v[0], cu * u[1] + cv * v[1]];
            best = Some((u[1].atan2(u[0]), eu, ev, center));
        }
    }

    let (phi, eu, ev, center) = best.ok_or_else(|| {
        // all hull points coincide
        Error::EmptyMask("degenerate hull".into())
    })?;
    let (angle, w, h) = normalize_box_angle(phi, eu, ev);
    Ok(OrientedBox { center: (center[1], center[0]), h, w, angle })
}

/// Reduces the rectangle's direction into [-pi/2, pi/2), choosing between the
/// two equivalent (angle, w, h) representations the one with the smaller
/// |angle| (ties go to the nonnegative angle).
fn normalize_box_angle(phi: f64, extent_along: f64, extent_across: f64) -> (f64, f64, f64) {
    let wrap = |mut a: f64| {
        while a < -std::f64::consts::FRAC_PI_2 {
            a += std::f64::consts::PI;
        }
        while a >= std::f64::consts::FRAC_PI_2 {
            a -= std::f64::consts::PI;
        }
        a
    };
    let a1 = wrap(phi);
    let a2 = wrap(phi + std::f64::consts::FRAC_PI_2);
    // representation 1: width axis along phi
    let r1 = (a1, extent_along, extent_across);
    // representation 2: width axis along phi + 90deg
    let r2 = (a2, extent_across, extent_along);
    if a1.abs() < a2.abs() - 1e-12 {
        r1
    } else if a2.abs() < a1.abs() - 1e-12 {
        r2
    } else if a1 >= 0.0 {
        r1
    } else {
        r2
    }
}

/// Andrew's monotone-chain convex hull over (x, y) points, counter-clockwise.
fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0
        {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Oriented bounding box of a soft mask frame, binarized at 0.5.
///
/// Foreground pixels are treated as unit squares (all four corners enter the
/// hull), and degenerate boxes are clamped to at least 1 px per side.
pub fn compute_obb(mask_frame: ArrayView2<f32>) -> Result<OrientedBox> {
    let (h, w) = mask_frame.dim();
    let mut corners: Vec<[f64; 2]> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask_frame[[r, c]] >= BINARIZE_THRESHOLD {
                let (x, y) = (c as f64, r as f64);
                corners.push([x - 0.5, y - 0.5]);
                corners.push([x - 0.5, y + 0.5]);
                corners.push([x + 0.5, y - 0.5]);
                corners.push([x + 0.5, y + 0.5]);
            }
        }
    }
    if corners.is_empty() {
        return Err(Error::EmptyMask("no foreground pixels above 0.5".into()));
    }
    let mut obb = min_area_rect(&corners)?;
    obb.h = obb.h.max(1.0);
    obb.w = obb.w.max(1.0);
    Ok(obb)
}

/// Soft elliptical placement mask derived from an oriented box: semi-axes are
/// the box half-sides enlarged by sqrt(2) (so the box corners land exactly on
/// the rho = 1 contour), then one axis is grown - never shrunk - until the
/// axis ratio matches `ref_aspect`. Value is 1 on the plateau rho <= 1 and
/// falls to 0 by raised cosine over rho in (1, 1.25].
pub fn adaptive_ellipse_mask(
    obb: &OrientedBox,
    ref_aspect: f64,
    frame_shape: (usize, usize),
) -> Result<Array2<f32>> {
    let (fh, fw) = frame_shape;
    if fh == 0 || fw == 0 {
        return Err(Error::Dimension("frame must be at least 1x1".into()));
    }
    if !(ref_aspect.is_finite() && ref_aspect > 0.0) {
        return Err(Error::Dimension(format!("ref_aspect must be positive, got {ref_aspect}")));
    }
    let (a, b) = adjusted_axes(obb, ref_aspect);
    let (cy, cx) = obb.center;
    let (sin_t, cos_t) = obb.angle.sin_cos();
    let mut out = Array2::zeros((fh, fw));
    for r in 0..fh {
        for c in 0..fw {
            let dx = c as f64 - cx;
            let dy = r as f64 - cy;
            let pw = dx * cos_t + dy * sin_t;
            let ph = -dx * sin_t + dy * cos_t;
            let rho2 = (ph / a).powi(2) + (pw / b).powi(2);
            out[[r, c]] = soft_profile(rho2) as f32;
        }
    }
    Ok(out)
}

/// Semi-axes (a along the height axis, b along the width axis) after the
/// sqrt(2) enlargement and grow-only aspect matching.
pub fn adjusted_axes(obb: &OrientedBox, ref_aspect: f64) -> (f64, f64) {
    let root2 = std::f64::consts::SQRT_2;
    let mut a = root2 * obb.h / 2.0;
    let mut b = root2 * obb.w / 2.0;
    let aspect = a / b;
    if aspect < ref_aspect {
        a = b * ref_aspect;
    } else if aspect > ref_aspect {
        b = a / ref_aspect;
    }
    (a, b)
}

fn soft_profile(rho2: f64) -> f64 {
    // tiny tolerance keeps exact corner points on the plateau despite
    // floating-point rounding of the sqrt(2) axes
    if rho2 <= 1.0 + 1e-9 {
        return 1.0;
    }
    let rho = rho2.sqrt();
    if rho >= FALLOFF_END {
        return 0.0;
    }
    0.5 * (1.0 + (std::f64::consts::PI * (rho - 1.0) / (FALLOFF_END - 1.0)).cos())
}

/// Scales the reference uniformly to 95% of the mask's plateau box and pastes
/// it, axis-aligned, onto a neutral gray canvas centered at the mask centroid.
pub fn place_reference(
    reference: &ReferenceImage,
    mask_frame: ArrayView2<f32>,
    frame_shape: (usize, usize),
) -> Result<Array3<f32>> {
    let (fh, fw) = frame_shape;
    if fh == 0 || fw == 0 {
        return Err(Error::Dimension("frame must be at least 1x1".into()));
    }
    let region = plateau_region(mask_frame)?;
    let (rmin, rmax, cmin, cmax) = region;
    let h_box = (rmax - rmin + 1) as f64;
    let w_box = (cmax - cmin + 1) as f64;

    // soft centroid over all mask mass
    let (mut sum, mut sum_r, mut sum_c) = (0.0f64, 0.0f64, 0.0f64);
    for ((r, c), &v) in mask_frame.indexed_iter() {
        let v = v as f64;
        sum += v;
        sum_r += v * r as f64;
        sum_c += v * c as f64;
    }
    let (cy, cx) = (sum_r / sum, sum_c / sum);

    let (hr, wr, ch) = reference.pixels.dim();
    let s = 0.95 * (h_box / hr as f64).min(w_box / wr as f64);
    let sh = ((hr as f64 * s).round() as usize).max(1);
    let sw = ((wr as f64 * s).round() as usize).max(1);
    let resized = resize_bilinear_3d(reference.pixels.view(), sh, sw);

    let mut canvas = Array3::from_elem((fh, fw, ch), 0.5f32);
    let top = (cy - (sh as f64 - 1.0) / 2.0).round() as i64;
    let left = (cx - (sw as f64 - 1.0) / 2.0).round() as i64;
    for r in 0..sh {
        for c in 0..sw {
            let rr = top + r as i64;
            let cc = left + c as i64;
            if rr < 0 || cc < 0 || rr >= fh as i64 || cc >= fw as i64 {
                continue;
            }
            for k in 0..ch {
                canvas[[rr as usize, cc as usize, k]] = resized[[r, c, k]];
            }
        }
    }
    Ok(canvas)
}

/// Axis-aligned bounds (rmin, rmax, cmin, cmax) of the mask plateau: pixels at
/// full weight when present, otherwise the binarized foreground.
fn plateau_region(mask_frame: ArrayView2<f32>) -> Result<(usize, usize, usize, usize)> {
    let bounds_at = |thr: f32| -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for ((r, c), &v) in mask_frame.indexed_iter() {
            if v >= thr {
                b = Some(match b {
                    None => (r, r, c, c),
                    Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                });
            }
        }
        b
    };
    bounds_at(1.0 - 1e-6)
        .or_else(|| bounds_at(BINARIZE_THRESHOLD))
        .ok_or_else(|| Error::EmptyMask("mask has no foreground for placement".into()))
}

/// Repeats one placed reference frame along the temporal axis.
pub fn extend_reference_temporal(frame: &Array3<f32>, num_frames: usize) -> Result<VideoTensor> {
    if num_frames == 0 {
        return Err(Error::Dimension("need at least one frame".into()));
    }
    let (h, w, c) = frame.dim();
    let mut frames = ndarray::Array4::zeros((num_frames, h, w, c));
    for t in 0..num_frames {
        frames.index_axis_mut(Axis(0), t).assign(frame);
    }
    VideoTensor::new(frames)
}

/// Blends a video toward a constant fill inside the mask:
/// `out = v*(1-m) + fill*m` per channel.
pub fn masked_fill(video: &VideoTensor, mask: &MaskVideo, fill: f32) -> Result<VideoTensor> {
    let (f, h, w, c) = video.dims();
    if mask.dims() != (f, h, w) {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} does not match video {:?}",
            mask.dims(),
            (f, h, w)
        )));
    }
    let mut out = video.frames.clone();
    for t in 0..f {
        for r in 0..h {
            for col in 0..w {
                let m = mask.frames[[t, r, col]];
                if m > 0.0 {
                    for k in 0..c {
                        let v = out[[t, r, col, k]];
                        out[[t, r, col, k]] = v * (1.0 - m) + fill * m;
                    }
                }
            }
        }
    }
    VideoTensor::new(out)
}

/// Recomputes the adaptive placement mask for every frame of a mask video,
/// matched to the target reference's aspect ratio.
pub fn adaptive_mask_video(mask: &MaskVideo, ref_aspect: f64) -> Result<MaskVideo> {
    let (f, h, w) = mask.dims();
    let mut out = ndarray::Array3::zeros((f, h, w));
    for t in 0..f {
        let obb = compute_obb(mask.frame(t))?;
        let frame = adaptive_ellipse_mask(&obb, ref_aspect, (h, w))?;
        out.index_axis_mut(Axis(0), t).assign(&frame);
    }
    MaskVideo::new(out)
}
