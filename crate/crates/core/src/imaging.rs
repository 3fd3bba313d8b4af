//! Rasters, grayscale conversion, PNG I/O, flow overlays and mirrored tiling.
//!
//! A [`Raster`] stores row-major, channel-interleaved intensities in `[0, 1]`.
//! Every image that moves through the generator and the evaluator is a
//! `Raster`; overlays are always drawn on a copy.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::VectorField;

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Default multiplier applied to displacements when drawing overlays.
pub const DEFAULT_AMPLITUDE_SCALE: f32 = 60.0;

/// Radius of the dot marking each vector origin.
pub const DOT_RADIUS: f32 = 2.0;

pub const YELLOW: [f32; 3] = [1.0, 1.0, 0.0];
pub const RED: [f32; 3] = [1.0, 0.0, 0.0];

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid raster dimensions {width}x{height}x{channels}")]
    InvalidDimensions {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("raster data has {actual} values, expected {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    IntensityOutOfRange { index: usize, value: f32 },
    #[error("vector origin ({x}, {y}) lies outside the {width}x{height} raster")]
    OriginOutOfBounds {
        x: f32,
        y: f32,
        width: usize,
        height: usize,
    },
    #[error("amplitude scale must be positive, got {0}")]
    InvalidScale(f32),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("PNG format error: {0}")]
    Format(String),
}

/// A width x height image with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    /// Creates a raster filled with `value` (clamped into `[0, 1]`).
    pub fn filled(
        width: usize,
        height: usize,
        channels: usize,
        value: f32,
    ) -> Result<Self, ImagingError> {
        check_dims(width, height, channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![clamp_unit(value); width * height * channels],
        })
    }

    pub fn from_data(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, ImagingError> {
        check_dims(width, height, channels)?;
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImagingError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImagingError::IntensityOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a raster by evaluating `f(x, y, channel)` for every sample.
    /// Values are clamped into `[0, 1]`; NaN maps to 0.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, ImagingError> {
        check_dims(width, height, channels)?;
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp_unit(f(x, y, c)));
                }
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Writes a sample, clamping into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        let idx = (y * self.width + x) * self.channels + c;
        self.data[idx] = clamp_unit(value);
    }

    /// Bilinear sample at a subpixel position; coordinates outside the
    /// raster read the nearest edge pixel.
    pub fn sample(&self, x: f32, y: f32, c: usize) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (ax, ay) = (x - x0 as f32, y - y0 as f32);
        let top = self.get(x0, y0, c) * (1.0 - ax) + self.get(x1, y0, c) * ax;
        let bottom = self.get(x0, y1, c) * (1.0 - ax) + self.get(x1, y1, c) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    fn set_rgb(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        debug_assert_eq!(self.channels, 3);
        let start = (y * self.width + x) * 3;
        self.data[start..start + 3].copy_from_slice(&rgb);
    }

    /// Gray rasters are replicated into three channels; RGB is returned as is.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Quantizes every sample to 8 bits.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(
        width: usize,
        height: usize,
        channels: usize,
        bytes: &[u8],
    ) -> Result<Self, ImagingError> {
        let data = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Self::from_data(width, height, channels, data)
    }
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<(), ImagingError> {
    if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
        return Err(ImagingError::InvalidDimensions {
            width,
            height,
            channels,
        });
    }
    Ok(())
}

#[inline]
fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

/// Luminance conversion; 1-channel rasters are returned unchanged.
pub fn to_grayscale(img: &Raster) -> Raster {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| {
            let y = LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2];
            clamp_unit(y)
        })
        .collect();
    Raster {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

/// What the overlay is drawn on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlayBackground {
    /// The evaluated image itself.
    #[default]
    Image,
    /// A plain white canvas of the same size.
    White,
}

/// Vectors drawn over a base image with their displacements magnified.
#[derive(Debug, Clone)]
pub struct FlowOverlay {
    pub base: Raster,
    pub vectors: VectorField,
    amplitude_scale: f32,
    pub background: OverlayBackground,
}

impl FlowOverlay {
    pub fn new(
        base: Raster,
        vectors: VectorField,
        amplitude_scale: f32,
    ) -> Result<Self, ImagingError> {
        if !(amplitude_scale > 0.0) || !amplitude_scale.is_finite() {
            return Err(ImagingError::InvalidScale(amplitude_scale));
        }
        Ok(Self {
            base,
            vectors,
            amplitude_scale,
            background: OverlayBackground::Image,
        })
    }

    pub fn with_background(mut self, background: OverlayBackground) -> Self {
        self.background = background;
        self
    }

    pub fn amplitude_scale(&self) -> f32 {
        self.amplitude_scale
    }

    pub fn render(&self) -> Result<Raster, ImagingError> {
        match self.background {
            OverlayBackground::Image => {
                render_overlay(&self.base, &self.vectors, self.amplitude_scale)
            }
            OverlayBackground::White => {
                let white = Raster::filled(self.base.width, self.base.height, 3, 1.0)?;
                render_overlay(&white, &self.vectors, self.amplitude_scale)
            }
        }
    }
}

/// Draws each vector as a red segment from its origin to
/// `origin + scale * displacement`, then a yellow dot on the origin.
/// The result is always RGB; segments are clipped to the raster.
pub fn render_overlay(
    base: &Raster,
    field: &VectorField,
    scale: f32,
) -> Result<Raster, ImagingError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(ImagingError::InvalidScale(scale));
    }
    let (w, h) = (base.width as f32, base.height as f32);
    for v in &field.vectors {
        if !(v.x >= 0.0 && v.y >= 0.0 && v.x <= w - 1.0 && v.y <= h - 1.0) {
            return Err(ImagingError::OriginOutOfBounds {
                x: v.x,
                y: v.y,
                width: base.width,
                height: base.height,
            });
        }
    }
    let mut out = base.to_rgb();
    for v in &field.vectors {
        let end = (v.x + scale * v.dx, v.y + scale * v.dy);
        draw_segment(&mut out, (v.x, v.y), end, RED);
    }
    for v in &field.vectors {
        draw_dot(&mut out, (v.x, v.y), DOT_RADIUS, YELLOW);
    }
    Ok(out)
}

/// Plots a 1 px wide segment, sampling the clipped segment at unit steps and
/// rounding each sample to the nearest pixel.
fn draw_segment(img: &mut Raster, start: (f32, f32), end: (f32, f32), rgb: [f32; 3]) {
    let Some((a, b)) = clip_segment(img, start, end) else {
        return;
    };
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let steps = dx.abs().max(dy.abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        let x = (a.0 + t * dx).round();
        let y = (a.1 + t * dy).round();
        if x >= 0.0 && y >= 0.0 && (x as usize) < img.width && (y as usize) < img.height {
            img.set_rgb(x as usize, y as usize, rgb);
        }
    }
}

/// Liang-Barsky clip against the pixel-center box `[0, w-1] x [0, h-1]`.
fn clip_segment(
    img: &Raster,
    start: (f32, f32),
    end: (f32, f32),
) -> Option<((f32, f32), (f32, f32))> {
    let (x_max, y_max) = ((img.width - 1) as f32, (img.height - 1) as f32);
    let (dx, dy) = (end.0 - start.0, end.1 - start.1);
    let mut t0 = 0.0f32;
    let mut t1 = 1.0f32;
    let edges = [
        (-dx, start.0),
        (dx, x_max - start.0),
        (-dy, start.1),
        (dy, y_max - start.1),
    ];
    for (p, q) in edges {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    Some((
        (start.0 + t0 * dx, start.1 + t0 * dy),
        (start.0 + t1 * dx, start.1 + t1 * dy),
    ))
}

fn draw_dot(img: &mut Raster, center: (f32, f32), radius: f32, rgb: [f32; 3]) {
    let x0 = (center.0 - radius).floor().max(0.0) as usize;
    let y0 = (center.1 - radius).floor().max(0.0) as usize;
    let x1 = ((center.0 + radius).ceil() as usize).min(img.width - 1);
    let y1 = ((center.1 + radius).ceil() as usize).min(img.height - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (ddx, ddy) = (x as f32 - center.0, y as f32 - center.1);
            if ddx * ddx + ddy * ddy <= radius * radius {
                img.set_rgb(x, y, rgb);
            }
        }
    }
}

/// Tiles `tile` into a `rows x cols` grid. With `alternate_mirror`, tiles in
/// odd columns are flipped horizontally and tiles in odd rows vertically.
pub fn compose_mirrored(
    tile: &Raster,
    rows: usize,
    cols: usize,
    alternate_mirror: bool,
) -> Result<Raster, ImagingError> {
    let (tw, th) = (tile.width, tile.height);
    if rows == 0 || cols == 0 {
        return Err(ImagingError::InvalidDimensions {
            width: cols * tw,
            height: rows * th,
            channels: tile.channels,
        });
    }
    let (w, h, ch) = (cols * tw, rows * th, tile.channels);
    let mut data = vec![0.0f32; w * h * ch];
    for y in 0..h {
        let (r, ty) = (y / th, y % th);
        let sy = if alternate_mirror && r % 2 == 1 {
            th - 1 - ty
        } else {
            ty
        };
        for x in 0..w {
            let (c, tx) = (x / tw, x % tw);
            let sx = if alternate_mirror && c % 2 == 1 {
                tw - 1 - tx
            } else {
                tx
            };
            let dst = (y * w + x) * ch;
            data[dst..dst + ch].copy_from_slice(tile.pixel(sx, sy));
        }
    }
    Ok(Raster {
        width: w,
        height: h,
        channels: ch,
        data,
    })
}

/// Writes an 8-bit gray or RGB PNG with fixed encoder settings, so identical
/// rasters always produce identical files.
pub fn save_png(img: &Raster, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(if img.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Balanced);
    encoder.set_filter(png::Filter::Adaptive);
    let mut writer = encoder
        .write_header()
        .map_err(|e| ImagingError::Format(e.to_string()))?;
    writer
        .write_image_data(&img.to_bytes())
        .map_err(|e| ImagingError::Format(e.to_string()))?;
    writer
        .finish()
        .map_err(|e| ImagingError::Format(e.to_string()))?;
    Ok(())
}

/// Reads a PNG as gray or RGB. Palettes are expanded, 16-bit samples are
/// reduced to 8 bits and any alpha channel is dropped.
pub fn load_png(path: impl AsRef<Path>) -> Result<Raster, ImagingError> {
    let file = File::open(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImagingError::Format(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImagingError::Format("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImagingError::Format(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let (channels, kept): (usize, Vec<u8>) = match info.color_type {
        png::ColorType::Grayscale => (1, bytes.to_vec()),
        png::ColorType::GrayscaleAlpha => (1, bytes.chunks_exact(2).map(|p| p[0]).collect()),
        png::ColorType::Rgb => (3, bytes.to_vec()),
        png::ColorType::Rgba => (
            3,
            bytes
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
        ),
        other => {
            return Err(ImagingError::Format(format!(
                "unsupported color type {other:?}"
            )))
        }
    };
    Raster::from_bytes(w, h, channels, &kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowVector, VectorField};

    fn field(vectors: Vec<FlowVector>, w: usize, h: usize) -> VectorField {
        VectorField {
            vectors,
            source_size: (w, h),
        }
    }

    #[test]
    fn grayscale_examples() {
        let white = Raster::from_data(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        assert!((to_grayscale(&white).get(0, 0, 0) - 1.0).abs() < 1e-6);
        let red = Raster::from_data(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let g = to_grayscale(&red);
        assert_eq!(g.channels(), 1);
        assert!((g.get(0, 0, 0) - 0.299).abs() < 1e-7);
        let gray = Raster::from_fn(4, 3, 1, |x, y, _| (x + y) as f32 / 10.0).unwrap();
        assert_eq!(to_grayscale(&gray), gray);
    }

    #[test]
    fn rejects_bad_rasters() {
        assert!(matches!(
            Raster::filled(0, 3, 1, 0.0),
            Err(ImagingError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            Raster::filled(2, 2, 2, 0.0),
            Err(ImagingError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            Raster::from_data(2, 2, 1, vec![0.0; 3]),
            Err(ImagingError::DataLength { .. })
        ));
        assert!(matches!(
            Raster::from_data(1, 1, 1, vec![1.5]),
            Err(ImagingError::IntensityOutOfRange { .. })
        ));
    }

    #[test]
    fn empty_overlay_is_rgb_copy() {
        let base = Raster::from_fn(8, 6, 1, |x, _, _| x as f32 / 8.0).unwrap();
        let out = render_overlay(&base, &field(vec![], 8, 6), 60.0).unwrap();
        assert_eq!(out, base.to_rgb());
    }

    #[test]
    fn overlay_segment_reaches_scaled_endpoint() {
        let base = Raster::filled(160, 120, 1, 0.0).unwrap();
        let v = FlowVector::tracked(10.0, 10.0, 0.5, 0.0);
        let out = render_overlay(&base, &field(vec![v], 160, 120), 60.0).unwrap();
        assert_eq!(out.pixel(40, 10), &RED);
        assert_eq!(out.pixel(25, 10), &RED);
        assert_eq!(out.pixel(41, 10), &[0.0, 0.0, 0.0]);
        assert_eq!(out.pixel(10, 10), &YELLOW);
        assert_eq!(out.pixel(12, 10), &YELLOW);
        assert_eq!(out.pixel(10, 13), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn overlay_clips_at_right_edge() {
        let base = Raster::filled(160, 120, 1, 0.0).unwrap();
        let v = FlowVector::tracked(150.0, 10.0, 10.0, 0.0);
        let out = render_overlay(&base, &field(vec![v], 160, 120), 60.0).unwrap();
        for x in 153..160 {
            assert_eq!(out.pixel(x, 10), &RED, "x = {x}");
        }
    }

    #[test]
    fn overlay_rejects_outside_origin() {
        let base = Raster::filled(16, 12, 1, 0.0).unwrap();
        let v = FlowVector::tracked(16.5, 3.0, 0.0, 0.0);
        assert!(matches!(
            render_overlay(&base, &field(vec![v], 16, 12), 60.0),
            Err(ImagingError::OriginOutOfBounds { .. })
        ));
        assert!(matches!(
            FlowOverlay::new(base, field(vec![], 16, 12), 0.0),
            Err(ImagingError::InvalidScale(_))
        ));
    }

    #[test]
    fn white_background_overlay() {
        let base = Raster::filled(16, 12, 1, 0.0).unwrap();
        let ov = FlowOverlay::new(base, field(vec![], 16, 12), 60.0)
            .unwrap()
            .with_background(OverlayBackground::White);
        let out = ov.render().unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mirrored_composition() {
        let mut tile = Raster::filled(10, 10, 1, 0.0).unwrap();
        tile.set(5, 5, 0, 1.0);
        assert_eq!(compose_mirrored(&tile, 1, 1, true).unwrap(), tile);

        let out = compose_mirrored(&tile, 1, 2, true).unwrap();
        assert_eq!((out.width(), out.height()), (20, 10));
        let lit: Vec<(usize, usize)> = (0..10)
            .flat_map(|y| (0..20).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get(x, y, 0) == 1.0)
            .collect();
        assert_eq!(lit, vec![(5, 5), (14, 5)]);

        let plain = compose_mirrored(&tile, 2, 2, false).unwrap();
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            for y in 0..10 {
                for x in 0..10 {
                    assert_eq!(plain.get(c * 10 + x, r * 10 + y, 0), tile.get(x, y, 0));
                }
            }
        }
        assert!(compose_mirrored(&tile, 0, 1, false).is_err());
    }

    #[test]
    fn png_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img =
            Raster::from_fn(160, 120, 1, |x, y, _| ((x * 7 + y * 3) % 97) as f32 / 96.0).unwrap();
        let path = dir.path().join("gray.png");
        save_png(&img, &path).unwrap();

        let decoder = png::Decoder::new(BufReader::new(File::open(&path).unwrap()));
        let info = decoder.read_info().unwrap();
        let info = info.info();
        assert_eq!((info.width, info.height), (160, 120));
        assert_eq!(info.color_type, png::ColorType::Grayscale);
        assert_eq!(info.bit_depth, png::BitDepth::Eight);

        let back = load_png(&path).unwrap();
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 1.0 / 255.0);

        let bytes = std::fs::read(&path).unwrap();
        let truncated = dir.path().join("trunc.png");
        std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_png(&truncated), Err(ImagingError::Format(_))));

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"definitely not a png").unwrap();
        assert!(matches!(load_png(&junk), Err(ImagingError::Format(_))));

        assert!(matches!(
            load_png(dir.path().join("missing.png")),
            Err(ImagingError::Io(_))
        ));
    }
}
