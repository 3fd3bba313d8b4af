//! Sparse optical flow: Shi-Tomasi corners tracked with pyramidal
//! Lucas-Kanade.
//!
//! Features are detected on the first image and tracked into the second, so
//! every displacement points along the motion from the first image to the
//! second.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{to_grayscale, Raster};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("image sizes differ: {a:?} vs {b:?}")]
    DimensionMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("expected a 1-channel image, got {0} channels")]
    NotGrayscale(usize),
    #[error("point ({x}, {y}) lies outside the image")]
    PointOutOfBounds { x: f32, y: f32 },
    #[error("invalid flow parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    #[default]
    Tracked,
    Lost,
}

impl TrackStatus {
    fn is_tracked(&self) -> bool {
        *self == TrackStatus::Tracked
    }
}

/// Displacement of one feature, in pixels per frame step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowVector {
    pub x: f32,
    pub y: f32,
    pub dx: f32,
    pub dy: f32,
    #[serde(default, skip_serializing_if = "TrackStatus::is_tracked")]
    pub status: TrackStatus,
}

impl FlowVector {
    pub fn tracked(x: f32, y: f32, dx: f32, dy: f32) -> Self {
        Self {
            x,
            y,
            dx,
            dy,
            status: TrackStatus::Tracked,
        }
    }

    pub fn magnitude(&self) -> f32 {
        self.dx.hypot(self.dy)
    }
}

/// Serializes as `{"source_size":[w,h],"vectors":[{"x":..,"y":..,"dx":..,"dy":..}]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VectorField {
    pub source_size: (usize, usize),
    pub vectors: Vec<FlowVector>,
}

impl VectorField {
    pub fn tracked(&self) -> impl Iterator<Item = &FlowVector> {
        self.vectors.iter().filter(|v| v.status.is_tracked())
    }

    pub fn max_displacement(&self) -> f32 {
        self.tracked()
            .map(FlowVector::magnitude)
            .fold(0.0, f32::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub max_features: usize,
    pub shi_tomasi_quality: f32,
    pub min_feature_distance: f32,
    /// Side of the square LK window; must be odd.
    pub window: usize,
    /// Total pyramid levels including full resolution.
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    pub epsilon: f32,
    pub min_eigen_threshold: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            max_features: 200,
            shi_tomasi_quality: 0.01,
            min_feature_distance: 5.0,
            window: 15,
            pyramid_levels: 3,
            max_iterations: 20,
            epsilon: 0.01,
            min_eigen_threshold: 1e-4,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<(), FlowError> {
        if self.window.is_multiple_of(2) || self.window < 3 {
            return Err(FlowError::InvalidParams(format!(
                "window {} must be odd and at least 3",
                self.window
            )));
        }
        if self.pyramid_levels < 1 {
            return Err(FlowError::InvalidParams(
                "pyramid_levels must be >= 1".into(),
            ));
        }
        if self.max_iterations < 1 {
            return Err(FlowError::InvalidParams(
                "max_iterations must be >= 1".into(),
            ));
        }
        if !(self.epsilon > 0.0) || !(self.min_eigen_threshold >= 0.0) {
            return Err(FlowError::InvalidParams(
                "epsilon must be positive and min_eigen_threshold non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.shi_tomasi_quality) || self.min_feature_distance < 0.0 {
            return Err(FlowError::InvalidParams(
                "quality must lie in [0, 1] and min distance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Single-channel float plane with replicated borders.
#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    fn from_raster(img: &Raster) -> Self {
        debug_assert_eq!(img.channels(), 1);
        Self {
            w: img.width(),
            h: img.height(),
            data: img.data().to_vec(),
        }
    }

    #[inline]
    fn at(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    #[inline]
    fn sample(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let (x0, y0) = (x.floor(), y.floor());
        let (ax, ay) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let top = self.at(xi, yi) * (1.0 - ax) + self.at(xi + 1, yi) * ax;
        let bottom = self.at(xi, yi + 1) * (1.0 - ax) + self.at(xi + 1, yi + 1) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    /// 5-tap binomial blur followed by 2x decimation.
    fn pyr_down(&self) -> Plane {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut horiz = vec![0.0f32; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                horiz[y * self.w + x] = (0..5)
                    .map(|k| K[k] * self.at(x as isize + k as isize - 2, y as isize))
                    .sum();
            }
        }
        let tmp = Plane {
            w: self.w,
            h: self.h,
            data: horiz,
        };
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                data.push((0..5).map(|k| K[k] * tmp.at(sx, sy + k as isize - 2)).sum());
            }
        }
        Plane { w, h, data }
    }

    /// Normalized Scharr derivatives, in intensity units per pixel.
    fn scharr(&self) -> (Plane, Plane) {
        let mut gx = vec![0.0f32; self.w * self.h];
        let mut gy = vec![0.0f32; self.w * self.h];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let i = y as usize * self.w + x as usize;
                gx[i] = (3.0 * (self.at(x + 1, y - 1) - self.at(x - 1, y - 1))
                    + 10.0 * (self.at(x + 1, y) - self.at(x - 1, y))
                    + 3.0 * (self.at(x + 1, y + 1) - self.at(x - 1, y + 1)))
                    / 32.0;
                gy[i] = (3.0 * (self.at(x - 1, y + 1) - self.at(x - 1, y - 1))
                    + 10.0 * (self.at(x, y + 1) - self.at(x, y - 1))
                    + 3.0 * (self.at(x + 1, y + 1) - self.at(x + 1, y - 1)))
                    / 32.0;
            }
        }
        let (w, h) = (self.w, self.h);
        (Plane { w, h, data: gx }, Plane { w, h, data: gy })
    }
}

#[inline]
fn min_eigenvalue(a: f32, b: f32, c: f32) -> f32 {
    let half_trace = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    half_trace - (half_diff * half_diff + b * b).sqrt()
}

fn require_gray(img: &Raster) -> Result<(), FlowError> {
    if img.channels() != 1 {
        return Err(FlowError::NotGrayscale(img.channels()));
    }
    Ok(())
}

/// Minimum-eigenvalue (Shi-Tomasi) corners, strongest first.
///
/// The structure tensor uses 3x3 Sobel gradients summed over a 3x3 block.
/// Candidates must exceed `quality * max_response`, be 3x3 local maxima and
/// keep `min_feature_distance` from every stronger accepted corner.
pub fn detect_features(img: &Raster, p: &FlowParams) -> Result<Vec<(f32, f32)>, FlowError> {
    require_gray(img)?;
    let plane = Plane::from_raster(img);
    let (w, h) = (plane.w, plane.h);
    let mut gxx = vec![0.0f32; w * h];
    let mut gxy = vec![0.0f32; w * h];
    let mut gyy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let at = |dx: isize, dy: isize| plane.at(x + dx, y + dy);
            let ix =
                (at(1, -1) + 2.0 * at(1, 0) + at(1, 1) - at(-1, -1) - 2.0 * at(-1, 0) - at(-1, 1))
                    / 8.0;
            let iy =
                (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1) - at(-1, -1) - 2.0 * at(0, -1) - at(1, -1))
                    / 8.0;
            let i = y as usize * w + x as usize;
            gxx[i] = ix * ix;
            gxy[i] = ix * iy;
            gyy[i] = iy * iy;
        }
    }
    let block_sum = |buf: &[f32], x: usize, y: usize| -> f32 {
        let mut s = 0.0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                s += buf[yy * w + xx];
            }
        }
        s
    };
    let mut response = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let e = min_eigenvalue(
                block_sum(&gxx, x, y),
                block_sum(&gxy, x, y),
                block_sum(&gyy, x, y),
            );
            response[y * w + x] = e.max(0.0);
        }
    }
    let max_response = response.iter().copied().fold(0.0f32, f32::max);
    if max_response <= f32::EPSILON * f32::EPSILON {
        return Ok(Vec::new());
    }
    let threshold = p.shi_tomasi_quality * max_response;

    let mut candidates: Vec<(f32, usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let r = response[y * w + x];
            if r <= threshold {
                continue;
            }
            let mut is_max = true;
            'nbhd: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    if response[yy as usize * w + xx as usize] > r {
                        is_max = false;
                        break 'nbhd;
                    }
                }
            }
            if is_max {
                candidates.push((r, x, y));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    let min_d2 = p.min_feature_distance * p.min_feature_distance;
    let mut accepted: Vec<(f32, f32)> = Vec::new();
    for (_, x, y) in candidates {
        if accepted.len() >= p.max_features {
            break;
        }
        let (fx, fy) = (x as f32, y as f32);
        if accepted
            .iter()
            .all(|&(ax, ay)| (ax - fx).powi(2) + (ay - fy).powi(2) >= min_d2)
        {
            accepted.push((fx, fy));
        }
    }
    Ok(accepted)
}

struct PyramidLevel {
    prev: Plane,
    next: Plane,
    gx: Plane,
    gy: Plane,
}

fn build_pyramids(prev: &Raster, next: &Raster, levels: usize) -> Vec<PyramidLevel> {
    let mut out = Vec::with_capacity(levels);
    let mut a = Plane::from_raster(prev);
    let mut b = Plane::from_raster(next);
    for lvl in 0..levels {
        if lvl > 0 {
            if a.w < 2 || a.h < 2 {
                break;
            }
            a = a.pyr_down();
            b = b.pyr_down();
        }
        let (gx, gy) = a.scharr();
        out.push(PyramidLevel {
            prev: a.clone(),
            next: b.clone(),
            gx,
            gy,
        });
    }
    out
}

/// Tracks one point coarse-to-fine. Loss conditions (degenerate tensor,
/// leaving the frame, no convergence) are fatal at full resolution only;
/// at coarser levels the level is skipped and the estimate carried down.
fn track_point(
    origin: (f32, f32),
    pyramid: &[PyramidLevel],
    p: &FlowParams,
) -> (f32, f32, TrackStatus) {
    let half = (p.window / 2) as isize;
    let n = (p.window * p.window) as f32;
    let mut guess = (0.0f32, 0.0f32);
    let mut patch = Vec::with_capacity(p.window * p.window);

    for (lvl, level) in pyramid.iter().enumerate().rev() {
        if lvl + 1 < pyramid.len() {
            guess = (guess.0 * 2.0, guess.1 * 2.0);
        }
        let finest = lvl == 0;
        let scale = 1.0 / (1u32 << lvl) as f32;
        let (px, py) = (origin.0 * scale, origin.1 * scale);
        let (w, h) = (level.prev.w as f32, level.prev.h as f32);

        patch.clear();
        let (mut a, mut b, mut c) = (0.0f32, 0.0f32, 0.0f32);
        for wy in -half..=half {
            for wx in -half..=half {
                let (sx, sy) = (px + wx as f32, py + wy as f32);
                let ix = level.gx.sample(sx, sy);
                let iy = level.gy.sample(sx, sy);
                patch.push((level.prev.sample(sx, sy), ix, iy, wx as f32, wy as f32));
                a += ix * ix;
                b += ix * iy;
                c += iy * iy;
            }
        }
        let det = a * c - b * b;
        if min_eigenvalue(a, b, c) / n < p.min_eigen_threshold || det.abs() < f32::EPSILON * n {
            if finest {
                return (guess.0, guess.1, TrackStatus::Lost);
            }
            continue;
        }
        let inv = 1.0 / det;

        let mut nu = (0.0f32, 0.0f32);
        let mut converged = false;
        let mut left_frame = false;
        for _ in 0..p.max_iterations {
            let (qx, qy) = (px + guess.0 + nu.0, py + guess.1 + nu.1);
            if qx < 0.0 || qy < 0.0 || qx > w - 1.0 || qy > h - 1.0 {
                left_frame = true;
                break;
            }
            let (mut bx, mut by) = (0.0f32, 0.0f32);
            for &(i0, ix, iy, ox, oy) in &patch {
                let diff = i0 - level.next.sample(qx + ox, qy + oy);
                bx += diff * ix;
                by += diff * iy;
            }
            let eta = ((c * bx - b * by) * inv, (a * by - b * bx) * inv);
            nu = (nu.0 + eta.0, nu.1 + eta.1);
            if eta.0.hypot(eta.1) < p.epsilon {
                converged = true;
                break;
            }
        }
        if left_frame || !converged {
            if finest {
                return (guess.0 + nu.0, guess.1 + nu.1, TrackStatus::Lost);
            }
            if left_frame {
                continue;
            }
        }
        guess = (guess.0 + nu.0, guess.1 + nu.1);
    }

    let (w, h) = (pyramid[0].prev.w as f32, pyramid[0].prev.h as f32);
    let (ex, ey) = (origin.0 + guess.0, origin.1 + guess.1);
    let status = if ex < 0.0 || ey < 0.0 || ex > w - 1.0 || ey > h - 1.0 {
        TrackStatus::Lost
    } else {
        TrackStatus::Tracked
    };
    (guess.0, guess.1, status)
}

/// Tracks `points` from `prev` into `next`. Every input point yields one
/// vector; untrackable points carry [`TrackStatus::Lost`].
pub fn track(
    prev: &Raster,
    next: &Raster,
    points: &[(f32, f32)],
    p: &FlowParams,
) -> Result<VectorField, FlowError> {
    p.validate()?;
    require_gray(prev)?;
    require_gray(next)?;
    let (w, h) = (prev.width(), prev.height());
    if (w, h) != (next.width(), next.height()) {
        return Err(FlowError::DimensionMismatch {
            a: (w, h),
            b: (next.width(), next.height()),
        });
    }
    if let Some(&(x, y)) = points
        .iter()
        .find(|&&(x, y)| !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f32 && y <= (h - 1) as f32))
    {
        return Err(FlowError::PointOutOfBounds { x, y });
    }
    let pyramid = build_pyramids(prev, next, p.pyramid_levels);
    let vectors = points
        .iter()
        .map(|&(x, y)| {
            let (dx, dy, status) = track_point((x, y), &pyramid, p);
            FlowVector {
                x,
                y,
                dx,
                dy,
                status,
            }
        })
        .collect();
    Ok(VectorField {
        source_size: (w, h),
        vectors,
    })
}

/// Motion from `input_img` to `predicted`: both are converted to gray,
/// corners are detected on the input and only tracked vectors are returned.
pub fn flow_between(
    input_img: &Raster,
    predicted: &Raster,
    p: &FlowParams,
) -> Result<VectorField, FlowError> {
    let size_a = (input_img.width(), input_img.height());
    let size_b = (predicted.width(), predicted.height());
    if size_a != size_b {
        return Err(FlowError::DimensionMismatch {
            a: size_a,
            b: size_b,
        });
    }
    let a = to_grayscale(input_img);
    let b = to_grayscale(predicted);
    let features = detect_features(&a, p)?;
    let mut field = track(&a, &b, &features, p)?;
    field.vectors.retain(|v| v.status.is_tracked());
    Ok(field)
}
