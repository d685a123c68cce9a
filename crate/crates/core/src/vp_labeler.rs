//! Vanishing-point labels from pairwise intersections of fitted lanes.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageGeometry, Point};
use crate::lane_ingest::FrameAnnotation;
use crate::polyfit::{fit_with_method, FitMethod, PolyFit};
use crate::roots::real_roots;

/// Difference polynomials with every coefficient below this are treated as
/// the same curve.
pub const COINCIDENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Median => "median",
            Aggregation::Mean => "mean",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "median" => Ok(Aggregation::Median),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::InvalidSpec(format!("unknown aggregation {other:?} (median|mean)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Intersection(Point),
    /// Parallel or diverging inside the plausibility band.
    NoIntersection,
    /// Both fits describe the same curve.
    Coincident,
}

/// Classifies the crossing of two fitted lanes.
///
/// Real roots of `f - g` are searched in `y ∈ [-height, height]`; among them
/// the one closest to the higher of the two lanes' top annotations wins,
/// since the vanishing point sits just above the visible lane ends.
pub fn classify_pair(f: &PolyFit, g: &PolyFit, geometry: ImageGeometry) -> PairOutcome {
    let n = f.coeffs.len().max(g.coeffs.len());
    let diff: Vec<f64> = (0..n)
        .map(|k| f.coeffs.get(k).copied().unwrap_or(0.0) - g.coeffs.get(k).copied().unwrap_or(0.0))
        .collect();
    if diff.iter().all(|d| d.abs() < COINCIDENT_TOLERANCE) {
        return PairOutcome::Coincident;
    }

    // solve in t = y / height so the band is |t| <= 1
    let h = f64::from(geometry.height);
    let scaled: Vec<f64> = diff.iter().enumerate().map(|(k, d)| d * h.powi(k as i32)).collect();
    let y_ref = f.y_min.min(g.y_min);
    let best = real_roots(&scaled)
        .into_iter()
        .filter(|t| t.abs() <= 1.0)
        .map(|t| t * h)
        .min_by(|a, b| (a - y_ref).abs().total_cmp(&(b - y_ref).abs()));

    match best {
        Some(y) => PairOutcome::Intersection(Point::new(f.eval(y), y)),
        None => PairOutcome::NoIntersection,
    }
}

pub fn intersect_pair(f: &PolyFit, g: &PolyFit, geometry: ImageGeometry) -> Option<Point> {
    match classify_pair(f, g, geometry) {
        PairOutcome::Intersection(p) => Some(p),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntersectionSet {
    pub points: Vec<Point>,
    pub pair_ids: Vec<(u32, u32)>,
    /// `C(n, 2)` for the `n` lanes that produced a fit.
    pub expected_count: usize,
    /// Pairs skipped because the fits coincide.
    pub degenerate: usize,
    pub usable_lanes: usize,
}

impl IntersectionSet {
    pub fn n_int(&self) -> usize {
        self.points.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpLabel {
    /// NaN when the label is not valid.
    pub vp: Point,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub n_int: usize,
    pub aggregation: Aggregation,
    pub method: FitMethod,
    pub valid: bool,
}

impl VpLabel {
    pub fn invalid(method: FitMethod, aggregation: Aggregation) -> Self {
        Self {
            vp: Point::new(f64::NAN, f64::NAN),
            sigma_x: 0.0,
            sigma_y: 0.0,
            n_int: 0,
            aggregation,
            method,
            valid: false,
        }
    }

    /// A valid label at a known point with a single intersection.
    pub fn at(vp: Point, method: FitMethod) -> Self {
        Self {
            vp,
            sigma_x: 0.0,
            sigma_y: 0.0,
            n_int: 1,
            aggregation: Aggregation::Median,
            method,
            valid: true,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Per-axis center (median or mean) and population standard deviation of
/// a point set. `None` for an empty set.
pub fn aggregate(points: &[Point], aggregation: Aggregation) -> Option<(Point, f64, f64)> {
    if points.is_empty() {
        return None;
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let (sx, sy) = (std_dev(&xs), std_dev(&ys));
    let center = match aggregation {
        Aggregation::Median => Point::new(median(&mut xs), median(&mut ys)),
        Aggregation::Mean => Point::new(mean(&xs), mean(&ys)),
    };
    Some((center, sx, sy))
}

/// Fits every usable lane, intersects all pairs and aggregates the crossings.
pub fn label_frame(frame: &FrameAnnotation, method: &FitMethod, aggregation: Aggregation) -> (VpLabel, IntersectionSet) {
    let fits: Vec<(u32, PolyFit)> = frame
        .lanes
        .iter()
        .filter_map(|lane| fit_with_method(lane, method).map(|fit| (lane.lane_id, fit)))
        .collect();

    let n = fits.len();
    let mut set = IntersectionSet {
        expected_count: n * n.saturating_sub(1) / 2,
        usable_lanes: n,
        ..Default::default()
    };
    for i in 0..n {
        for j in i + 1..n {
            match classify_pair(&fits[i].1, &fits[j].1, frame.geometry) {
                PairOutcome::Intersection(p) => {
                    set.points.push(p);
                    set.pair_ids.push((fits[i].0, fits[j].0));
                }
                PairOutcome::Coincident => set.degenerate += 1,
                PairOutcome::NoIntersection => {}
            }
        }
    }

    let label = match aggregate(&set.points, aggregation) {
        Some((vp, sigma_x, sigma_y)) => VpLabel {
            vp,
            sigma_x,
            sigma_y,
            n_int: set.points.len(),
            aggregation,
            method: *method,
            valid: true,
        },
        None => VpLabel::invalid(*method, aggregation),
    };
    (label, set)
}

/// Label-quality thresholds; defaults keep labels with at least three
/// intersections and a vertical spread under 10 px.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelFilter {
    pub min_n_int: usize,
    pub max_sigma_y: f64,
    pub max_sigma_x: Option<f64>,
}

impl Default for LabelFilter {
    fn default() -> Self {
        Self { min_n_int: 3, max_sigma_y: 10.0, max_sigma_x: None }
    }
}

impl LabelFilter {
    pub fn validate(&self) -> Result<()> {
        if self.min_n_int < 1 {
            return Err(Error::InvalidSpec("min_n_int must be >= 1".into()));
        }
        if !(self.max_sigma_y >= 0.0) || self.max_sigma_x.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::InvalidSpec("sigma thresholds must be >= 0".into()));
        }
        Ok(())
    }
}

/// Sigma thresholds are strict (`sigma < max`).
pub fn apply_filter(label: &VpLabel, filter: &LabelFilter) -> bool {
    label.valid
        && label.n_int >= filter.min_n_int
        && label.sigma_y < filter.max_sigma_y
        && filter.max_sigma_x.is_none_or(|m| label.sigma_x < m)
}

/// A label tied to its frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub frame_id: String,
    #[serde(flatten)]
    pub label: VpLabel,
}

pub const LABEL_HEADER: &str = "frame_id\tmethod\tvp_x\tvp_y\tsigma_x\tsigma_y\tn_int\tvalid";

pub fn format_label_row(frame_id: &str, label: &VpLabel) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        frame_id,
        label.method.tag(),
        label.vp.x,
        label.vp.y,
        label.sigma_x,
        label.sigma_y,
        label.n_int,
        label.valid
    )
}

pub fn write_label_rows<W: Write>(mut out: W, labels: &[FrameLabel]) -> Result<()> {
    writeln!(out, "{LABEL_HEADER}")?;
    for l in labels {
        writeln!(out, "{}", format_label_row(&l.frame_id, &l.label))?;
    }
    Ok(())
}

/// Reads rows written by [`write_label_rows`]. The aggregation is not part
/// of the row and comes back as the default (median).
pub fn read_label_rows<R: BufRead>(reader: R) -> Result<Vec<FrameLabel>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() || line.starts_with("frame_id\t") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |message: String| Error::Parse { line: line_no, message };
        if fields.len() != 8 {
            return Err(bad(format!("expected 8 fields, got {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let label = VpLabel {
            vp: Point::new(num(fields[2])?, num(fields[3])?),
            sigma_x: num(fields[4])?,
            sigma_y: num(fields[5])?,
            n_int: fields[6].parse().map_err(|_| bad(format!("bad count {:?}", fields[6])))?,
            aggregation: Aggregation::Median,
            method: fields[1].parse()?,
            valid: fields[7].parse().map_err(|_| bad(format!("bad flag {:?}", fields[7])))?,
        };
        out.push(FrameLabel { frame_id: fields[0].to_string(), label });
    }
    Ok(out)
}

/// Fixed-width histogram with an overflow bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: u32,
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(bin_width: u32, bins: usize) -> Self {
        Self { bin_width, counts: vec![0; bins], overflow: 0 }
    }

    pub fn add(&mut self, value: f64) {
        let bin = (value / f64::from(self.bin_width)).floor();
        if bin >= 0.0 && (bin as usize) < self.counts.len() {
            self.counts[bin as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.overflow += other.overflow;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountFraction {
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub frames_total: u64,
    pub valid_labels: u64,
    /// Lanes per frame: bins 0..=4, overflow is 5 or more.
    pub lane_count_hist: Histogram,
    /// Intersections per frame: bins 0..=10.
    pub n_int_hist: Histogram,
    /// Spread of intersections over valid labels, 2 px bins up to 50 px.
    pub sigma_x_hist: Histogram,
    pub sigma_y_hist: Histogram,
    pub frames_ge2_lanes: CountFraction,
}

/// Mergeable accumulator behind [`dataset_label_stats`]. Bin edges are
/// fixed, so partial results from parallel workers merge in any order.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    frames_total: u64,
    valid_labels: u64,
    frames_ge2: u64,
    lane_count: Histogram,
    n_int: Histogram,
    sigma_x: Histogram,
    sigma_y: Histogram,
}

impl Default for StatsAccumulator {
    fn default() -> Self {
        Self {
            frames_total: 0,
            valid_labels: 0,
            frames_ge2: 0,
            lane_count: Histogram::new(1, 5),
            n_int: Histogram::new(1, 11),
            sigma_x: Histogram::new(2, 25),
            sigma_y: Histogram::new(2, 25),
        }
    }
}

impl StatsAccumulator {
    pub fn add(&mut self, frame: &FrameAnnotation, label: &VpLabel) {
        self.frames_total += 1;
        let lanes = frame.lane_count();
        self.lane_count.add(lanes as f64);
        if lanes >= 2 {
            self.frames_ge2 += 1;
        }
        self.n_int.add(label.n_int as f64);
        if label.valid {
            self.valid_labels += 1;
            self.sigma_x.add(label.sigma_x);
            self.sigma_y.add(label.sigma_y);
        }
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.frames_total += other.frames_total;
        self.valid_labels += other.valid_labels;
        self.frames_ge2 += other.frames_ge2;
        self.lane_count.merge(&other.lane_count);
        self.n_int.merge(&other.n_int);
        self.sigma_x.merge(&other.sigma_x);
        self.sigma_y.merge(&other.sigma_y);
    }

    pub fn finish(&self) -> StatsReport {
        let fraction = if self.frames_total == 0 { 0.0 } else { self.frames_ge2 as f64 / self.frames_total as f64 };
        StatsReport {
            frames_total: self.frames_total,
            valid_labels: self.valid_labels,
            lane_count_hist: self.lane_count.clone(),
            n_int_hist: self.n_int.clone(),
            sigma_x_hist: self.sigma_x.clone(),
            sigma_y_hist: self.sigma_y.clone(),
            frames_ge2_lanes: CountFraction { count: self.frames_ge2, fraction },
        }
    }
}

/// Dataset-level label statistics. Both streams must list the same frames
/// in the same order.
pub fn dataset_label_stats<'a, L, F>(labels: L, frames: F) -> Result<StatsReport>
where
    L: IntoIterator<Item = &'a FrameLabel>,
    F: IntoIterator<Item = &'a FrameAnnotation>,
{
    let mut acc = StatsAccumulator::default();
    let mut labels = labels.into_iter();
    let mut frames = frames.into_iter();
    loop {
        match (labels.next(), frames.next()) {
            (Some(l), Some(f)) => {
                if l.frame_id != f.frame_id {
                    return Err(Error::Alignment(format!("label {} vs frame {}", l.frame_id, f.frame_id)));
                }
                acc.add(f, &l.label);
            }
            (None, None) => break,
            (Some(l), None) => return Err(Error::Alignment(format!("label {} has no frame", l.frame_id))),
            (None, Some(f)) => return Err(Error::Alignment(format!("frame {} has no label", f.frame_id))),
        }
    }
    Ok(acc.finish())
}
