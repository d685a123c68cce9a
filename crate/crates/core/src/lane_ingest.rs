//! Lane annotation readers.
//!
//! Two sources are supported: CULane `*.lines.txt` files (one lane per
//! line, `x y x y ...` in full-resolution pixels) and lane-instance
//! segmentation masks where each pixel value is a lane id and 0 is
//! background. Both produce a [`FrameAnnotation`] whose lanes are sorted by
//! ascending y, so `points[0]` is always the top-most annotation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageGeometry, Point};

/// Default row step when sampling mask centerlines.
pub const DEFAULT_ROW_INTERVAL: u32 = 5;
/// Lanes shorter than this along y are dropped from masks.
pub const DEFAULT_MIN_Y_EXTENT: u32 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePolyline {
    pub lane_id: u32,
    pub points: Vec<Point>,
}

impl LanePolyline {
    /// Builds a polyline, sorting the points by ascending y.
    ///
    /// Points may lie outside the image (extrapolated annotations do) but
    /// must be finite, and at least two are required.
    pub fn new(lane_id: u32, mut points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "lane {lane_id} has {} point(s), need at least 2",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "lane {lane_id} has non-finite point ({}, {})",
                p.x, p.y
            )));
        }
        points.sort_by(|a, b| a.y.total_cmp(&b.y));
        Ok(Self { lane_id, points })
    }

    pub fn top(&self) -> Point {
        self.points[0]
    }

    pub fn y_extent(&self) -> f64 {
        self.points[self.points.len() - 1].y - self.points[0].y
    }

    /// True when the lane has enough points for a polynomial of `degree`.
    pub fn supports_degree(&self, degree: usize) -> bool {
        self.points.len() > degree
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_id: String,
    pub geometry: ImageGeometry,
    pub lanes: Vec<LanePolyline>,
}

impl FrameAnnotation {
    pub fn new(frame_id: impl Into<String>, geometry: ImageGeometry, lanes: Vec<LanePolyline>) -> Result<Self> {
        let frame = Self { frame_id: frame_id.into(), geometry, lanes };
        let mut ids: Vec<u32> = frame.lanes.iter().map(|l| l.lane_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSpec(format!("duplicate lane id in frame {}", frame.frame_id)));
        }
        Ok(frame)
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    /// Frames with fewer than two lanes cannot produce an intersection.
    pub fn is_labelable(&self) -> bool {
        self.lanes.len() >= 2
    }
}

/// Result of reading a CULane lines file.
#[derive(Debug, Clone, PartialEq)]
pub struct CulaneParse {
    pub frame: FrameAnnotation,
    /// Lines that held fewer than two points and were skipped.
    pub dropped_lines: usize,
}

/// Parses a CULane `*.lines.txt` stream.
///
/// Each non-empty line becomes one lane, numbered in file order. Lines with
/// a single point are dropped and counted in [`CulaneParse::dropped_lines`].
pub fn parse_culane_lines<R: BufRead>(reader: R, frame_id: &str, geometry: ImageGeometry) -> Result<CulaneParse> {
    let mut lanes = Vec::new();
    let mut dropped_lines = 0;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() % 2 != 0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("odd coordinate count ({})", tokens.len()),
            });
        }
        let mut values = Vec::with_capacity(tokens.len());
        for tok in &tokens {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("malformed number {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite coordinate {tok:?}"),
                });
            }
            values.push(v);
        }
        let points: Vec<Point> = values.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        if points.len() < 2 {
            log::warn!("{frame_id}: line {line_no} has a single point, dropped");
            dropped_lines += 1;
            continue;
        }
        lanes.push(LanePolyline::new(lanes.len() as u32, points)?);
    }

    Ok(CulaneParse {
        frame: FrameAnnotation::new(frame_id, geometry, lanes)?,
        dropped_lines,
    })
}

pub fn parse_culane_str(text: &str, frame_id: &str, geometry: ImageGeometry) -> Result<CulaneParse> {
    parse_culane_lines(text.as_bytes(), frame_id, geometry)
}

/// Serializes lanes back to the CULane line format.
///
/// Coordinates use the shortest representation that parses back to the same
/// `f64`, so a parse of the output reproduces the points exactly.
pub fn write_culane_lines(frame: &FrameAnnotation) -> String {
    let mut out = String::new();
    for lane in &frame.lanes {
        let mut first = true;
        for p in &lane.points {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{} {}", p.x, p.y);
        }
        out.push('\n');
    }
    out
}

/// Dense lane-instance mask, row-major, 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    pub geometry: ImageGeometry,
    pub labels: Vec<u16>,
}

impl SegMask {
    pub fn new(geometry: ImageGeometry, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != geometry.pixel_count() {
            return Err(Error::InvalidSpec(format!(
                "mask has {} pixels, geometry {}x{} needs {}",
                labels.len(),
                geometry.width,
                geometry.height,
                geometry.pixel_count()
            )));
        }
        Ok(Self { geometry, labels })
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.labels[y as usize * self.geometry.width as usize + x as usize]
    }

    /// Reads an 8- or 16-bit single-channel raster (PGM or PNG). Pixel
    /// values are taken as lane ids without rescaling.
    pub fn load(path: &Path) -> Result<Self> {
        let mask_err = |message: String| Error::Mask { path: path.to_path_buf(), message };
        let img = image::open(path).map_err(|e| mask_err(e.to_string()))?;
        let geometry = ImageGeometry::new(img.width(), img.height())?;
        let labels = match img {
            DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
            DynamicImage::ImageLuma16(buf) => buf.into_raw(),
            other => return Err(mask_err(format!("expected single-channel mask, got {:?}", other.color()))),
        };
        Self::new(geometry, labels)
    }
}

/// Extracts one centerline per lane id from a mask.
///
/// Rows are sampled every `row_interval` pixels starting at the lane's own
/// top row. On each sampled row the point is the midpoint of the left-most
/// and right-most pixel carrying the lane id. Lanes spanning fewer than
/// `min_y_extent` rows (max y − min y) are dropped. Lane ids are the mask
/// values; disconnected components sharing an id stay one lane.
pub fn mask_to_centerlines(mask: &SegMask, frame_id: &str, row_interval: u32, min_y_extent: u32) -> Result<FrameAnnotation> {
    if row_interval == 0 {
        return Err(Error::InvalidSpec("row_interval must be >= 1".into()));
    }
    let width = mask.geometry.width as usize;
    let height = mask.geometry.height as usize;

    // per label: per row (left, right)
    let mut spans: BTreeMap<u16, Vec<Option<(u32, u32)>>> = BTreeMap::new();
    for (row, pixels) in mask.labels.chunks_exact(width).enumerate() {
        for (col, &id) in pixels.iter().enumerate() {
            if id == 0 {
                continue;
            }
            let rows = spans.entry(id).or_insert_with(|| vec![None; height]);
            let col = col as u32;
            rows[row] = Some(match rows[row] {
                Some((l, r)) => (l.min(col), r.max(col)),
                None => (col, col),
            });
        }
    }

    let mut lanes = Vec::new();
    for (id, rows) in spans {
        let Some(top) = rows.iter().position(Option::is_some) else { continue };
        let bottom = rows.iter().rposition(Option::is_some).unwrap_or(top);
        if ((bottom - top) as u32) < min_y_extent {
            continue;
        }
        let points: Vec<Point> = (top..=bottom)
            .step_by(row_interval as usize)
            .filter_map(|r| rows[r].map(|(l, rt)| Point::new((f64::from(l) + f64::from(rt)) / 2.0, r as f64)))
            .collect();
        if points.len() >= 2 {
            lanes.push(LanePolyline::new(u32::from(id), points)?);
        }
    }
    FrameAnnotation::new(frame_id, mask.geometry, lanes)
}

/// Reads a frame list, one relative path per line.
///
/// Only the first whitespace-separated token of each line is kept, so the
/// CULane `train_gt.txt` style (`path mask e1 e2 e3 e4`) also works. Blank
/// lines are skipped; order and duplicates are preserved.
pub fn scan_manifest<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if let Some(first) = line.split_whitespace().next() {
            ids.push(first.to_string());
        }
    }
    Ok(ids)
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path)?;
    scan_manifest(std::io::BufReader::new(file))
}

/// Resolves a frame id against the dataset root. Leading slashes in the id
/// (as in CULane lists) are ignored.
pub fn frame_path(root: &Path, frame_id: &str) -> PathBuf {
    root.join(frame_id.trim_start_matches('/'))
}

/// CULane stores `foo.jpg`'s lanes in `foo.lines.txt`.
pub fn culane_annotation_path(root: &Path, frame_id: &str) -> PathBuf {
    frame_path(root, frame_id).with_extension("lines.txt")
}
