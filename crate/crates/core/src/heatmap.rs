//! Gaussian heatmap targets, peak extraction and the VPHM file format.
//!
//! VPHM layout (little endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `VPHM`                  |
//! | 4      | 1    | version (1)                   |
//! | 5      | 1    | dtype (1 = f32)               |
//! | 6      | 4    | height, u32                   |
//! | 10     | 4    | width, u32                    |
//! | 14     | 2    | reserved, zero                |
//! | 16     | 4·h·w| row-major f32 values          |

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageGeometry, Point};
use crate::vp_labeler::VpLabel;

pub const MAGIC: &[u8; 4] = b"VPHM";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    Fixed,
    /// Spread of the label's intersections, clipped.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmplitudeMode {
    /// Peak value 1.
    Unit,
    /// `1 / (sigma * sqrt(2 pi))`.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub sigma_mode: SigmaMode,
    pub sigma_fixed: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub amplitude_mode: AmplitudeMode,
    /// Center the Gaussian on the label's nearest pixel so the peak value
    /// lands exactly on the grid.
    pub snap_center: bool,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self {
            sigma_mode: SigmaMode::Fixed,
            sigma_fixed: 16.0,
            sigma_low: 6.0,
            sigma_high: 16.0,
            amplitude_mode: AmplitudeMode::Unit,
            snap_center: true,
        }
    }
}

impl GaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_fixed > 0.0 && self.sigma_fixed.is_finite()) {
            return Err(Error::InvalidSpec(format!("sigma {} must be positive", self.sigma_fixed)));
        }
        if !(self.sigma_low > 0.0 && self.sigma_low <= self.sigma_high && self.sigma_high.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "sigma clip range [{}, {}] is invalid",
                self.sigma_low, self.sigma_high
            )));
        }
        Ok(())
    }

    /// Width of the Gaussian for a label. Dynamic mode uses the RMS of the
    /// two per-axis spreads, clipped to `[sigma_low, sigma_high]`.
    pub fn sigma_for(&self, label: &VpLabel) -> f64 {
        match self.sigma_mode {
            SigmaMode::Fixed => self.sigma_fixed,
            SigmaMode::Dynamic => {
                let rms = ((label.sigma_x * label.sigma_x + label.sigma_y * label.sigma_y) / 2.0).sqrt();
                if rms.is_nan() {
                    self.sigma_high
                } else {
                    rms.clamp(self.sigma_low, self.sigma_high)
                }
            }
        }
    }

    pub fn amplitude(&self, sigma: f64) -> f64 {
        match self.amplitude_mode {
            AmplitudeMode::Unit => 1.0,
            AmplitudeMode::Normalized => 1.0 / (sigma * (2.0 * PI).sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub geometry: ImageGeometry,
    /// Row-major, `height * width` values.
    pub values: Vec<f32>,
}

impl Heatmap {
    pub fn zeros(geometry: ImageGeometry) -> Self {
        Self { geometry, values: vec![0.0; geometry.pixel_count()] }
    }

    pub fn from_values(geometry: ImageGeometry, values: Vec<f32>) -> Result<Self> {
        if values.len() != geometry.pixel_count() {
            return Err(Error::InvalidSpec(format!(
                "{} values for a {}x{} heatmap",
                values.len(),
                geometry.width,
                geometry.height
            )));
        }
        Ok(Self { geometry, values })
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.geometry.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        let w = self.geometry.width as usize;
        self.values[y as usize * w + x as usize] = v;
    }
}

/// Rendered target plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub heatmap: Heatmap,
    pub sigma: f64,
    pub amplitude: f64,
    pub center: Point,
}

/// Renders `A exp(-((c - cx)^2 + (r - cy)^2) / (2 sigma^2))` on the grid.
///
/// The center may lie off the grid (VPs above the frame); the visible tail
/// is still rendered.
pub fn render_target(label: &VpLabel, geometry: ImageGeometry, spec: &GaussianSpec) -> Result<Target> {
    if !label.valid || !label.vp.is_finite() {
        return Err(Error::NoLabel);
    }
    spec.validate()?;
    let sigma = spec.sigma_for(label);
    let amplitude = spec.amplitude(sigma);
    let center = if spec.snap_center {
        Point::new(label.vp.x.round(), label.vp.y.round())
    } else {
        label.vp
    };

    // exp of a sum factors into a column term times a row term
    let inv = 1.0 / (2.0 * sigma * sigma);
    let col: Vec<f64> = (0..geometry.width)
        .map(|c| {
            let d = f64::from(c) - center.x;
            (-d * d * inv).exp()
        })
        .collect();
    let mut values = Vec::with_capacity(geometry.pixel_count());
    for r in 0..geometry.height {
        let d = f64::from(r) - center.y;
        let row = amplitude * (-d * d * inv).exp();
        values.extend(col.iter().map(|&c| (row * c) as f32));
    }
    Ok(Target { heatmap: Heatmap { geometry, values }, sigma, amplitude, center })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakResult {
    pub x: u32,
    pub y: u32,
    pub confidence: f32,
}

impl PeakResult {
    pub fn point(&self) -> Point {
        Point::new(f64::from(self.x), f64::from(self.y))
    }
}

/// Integer argmax; ties go to the smallest row, then the smallest column.
pub fn extract_peak(h: &Heatmap) -> PeakResult {
    let w = h.geometry.width as usize;
    let mut best = 0usize;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in h.values.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    if best_v == f32::NEG_INFINITY {
        best_v = h.values.first().copied().unwrap_or(0.0);
    }
    PeakResult { x: (best % w) as u32, y: (best / w) as u32, confidence: best_v }
}

/// Sub-pixel peak from a three-point parabola along each axis. Falls back
/// to the integer location at borders or on flat neighbourhoods.
pub fn refine_peak(h: &Heatmap, peak: &PeakResult) -> Point {
    let offset = |m: f32, c: f32, p: f32| {
        let denom = f64::from(m) - 2.0 * f64::from(c) + f64::from(p);
        if denom < 0.0 {
            (0.5 * (f64::from(m) - f64::from(p)) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let (x, y) = (peak.x, peak.y);
    let c = h.get(x, y);
    let dx = if x > 0 && x + 1 < h.geometry.width { offset(h.get(x - 1, y), c, h.get(x + 1, y)) } else { 0.0 };
    let dy = if y > 0 && y + 1 < h.geometry.height { offset(h.get(x, y - 1), c, h.get(x, y + 1)) } else { 0.0 };
    Point::new(f64::from(x) + dx, f64::from(y) + dy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutcome {
    pub accepted: Vec<bool>,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

/// A peak is accepted when its confidence is strictly above `tau`.
pub fn threshold_detections<'a, I>(peaks: I, tau: f64) -> ThresholdOutcome
where
    I: IntoIterator<Item = &'a PeakResult>,
{
    let accepted: Vec<bool> = peaks.into_iter().map(|p| f64::from(p.confidence) > tau).collect();
    let n_accepted = accepted.iter().filter(|&&a| a).count();
    ThresholdOutcome { n_rejected: accepted.len() - n_accepted, accepted, n_accepted }
}

/// Placement of an image inside a zero-padded canvas. The image sits at
/// the top-left; padding goes right and bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub original: ImageGeometry,
    pub padded: ImageGeometry,
    pub offset_x: u32,
    pub offset_y: u32,
}

impl Padding {
    pub fn to_padded(&self, p: Point) -> Point {
        Point::new(p.x + f64::from(self.offset_x), p.y + f64::from(self.offset_y))
    }

    pub fn from_padded(&self, p: Point) -> Point {
        Point::new(p.x - f64::from(self.offset_x), p.y - f64::from(self.offset_y))
    }
}

pub fn pad_to_multiple(geometry: ImageGeometry, multiple: u32) -> Result<Padding> {
    if multiple == 0 {
        return Err(Error::InvalidSpec("padding multiple must be >= 1".into()));
    }
    let up = |v: u32| v.div_ceil(multiple) * multiple;
    Ok(Padding {
        original: geometry,
        padded: ImageGeometry { width: up(geometry.width), height: up(geometry.height) },
        offset_x: 0,
        offset_y: 0,
    })
}

/// Copies a heatmap into a zero canvas sized by `padding`.
pub fn pad_heatmap(h: &Heatmap, padding: &Padding) -> Heatmap {
    let mut out = Heatmap::zeros(padding.padded);
    let w = h.geometry.width as usize;
    let pw = padding.padded.width as usize;
    for (r, row) in h.values.chunks_exact(w).enumerate() {
        let start = (r + padding.offset_y as usize) * pw + padding.offset_x as usize;
        out.values[start..start + w].copy_from_slice(row);
    }
    out
}

/// Cuts the original region back out of a padded heatmap.
pub fn crop_heatmap(h: &Heatmap, padding: &Padding) -> Heatmap {
    let g = padding.original;
    let pw = h.geometry.width as usize;
    let mut values = Vec::with_capacity(g.pixel_count());
    for r in 0..g.height as usize {
        let start = (r + padding.offset_y as usize) * pw + padding.offset_x as usize;
        values.extend_from_slice(&h.values[start..start + g.width as usize]);
    }
    Heatmap { geometry: g, values }
}

pub fn encode_heatmap(h: &Heatmap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * h.values.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.extend_from_slice(&h.geometry.height.to_le_bytes());
    out.extend_from_slice(&h.geometry.width.to_le_bytes());
    out.extend_from_slice(&[0, 0]);
    for v in &h.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_heatmap(bytes: &[u8]) -> Result<Heatmap> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype {}", bytes[5])));
    }
    let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let (height, width) = (u32_at(6), u32_at(10));
    let geometry = ImageGeometry::new(width, height).map_err(|e| Error::Format(e.to_string()))?;
    let payload = &bytes[HEADER_LEN..];
    let expected = geometry.pixel_count() * 4;
    if payload.len() != expected {
        return Err(Error::Format(format!("payload is {} bytes, expected {expected}", payload.len())));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Heatmap { geometry, values })
}

pub fn write_heatmap(path: &Path, h: &Heatmap) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_heatmap(h))?;
    Ok(())
}

pub fn read_heatmap(path: &Path) -> Result<Heatmap> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_heatmap(&bytes)
}

/// 8-bit binary PGM preview (values × 255, rounded, clamped). Lossy.
pub fn encode_pgm(h: &Heatmap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", h.geometry.width, h.geometry.height).into_bytes();
    out.extend(h.values.iter().map(|v| (f64::from(*v) * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}
