//! Detection metrics: per-axis MAE at full resolution, NormDist (error over
//! the image diagonal), threshold fractions and the cumulative error curve,
//! plus the two-stage lane-fitting baseline and horizon-line estimation.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageGeometry, Point};
use crate::heatmap::PeakResult;
use crate::lane_ingest::FrameAnnotation;
use crate::polyfit::{fit_lane, FitMethod};
use crate::vp_labeler::{label_frame, Aggregation};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.01, 0.02];

/// Independent per-axis scaling between resolutions.
pub fn rescale_coords(p: Point, from: ImageGeometry, to: ImageGeometry) -> Point {
    Point::new(
        p.x * f64::from(to.width) / f64::from(from.width),
        p.y * f64::from(to.height) / f64::from(from.height),
    )
}

pub fn norm_dist(pred: Point, gt: Point, geometry: ImageGeometry) -> f64 {
    pred.distance(&gt) / geometry.diagonal()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub frame_id: String,
    pub pred: Option<Point>,
    pub gt: Point,
    pub confidence: f64,
    /// Infinite when there is no prediction.
    pub norm_dist: f64,
    pub abs_err_x: f64,
    pub abs_err_y: f64,
}

impl EvalRecord {
    /// `pred` and `gt` must both be in `geometry` coordinates (normally the
    /// full dataset resolution). A missing prediction is a failure.
    pub fn new(frame_id: impl Into<String>, pred: Option<Point>, gt: Point, confidence: f64, geometry: ImageGeometry) -> Self {
        let (norm, ex, ey) = match pred {
            Some(p) => (norm_dist(p, gt, geometry), (p.x - gt.x).abs(), (p.y - gt.y).abs()),
            None => (f64::INFINITY, f64::INFINITY, f64::INFINITY),
        };
        Self { frame_id: frame_id.into(), pred, gt, confidence, norm_dist: norm, abs_err_x: ex, abs_err_y: ey }
    }

    pub fn failed(&self) -> bool {
        self.pred.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFraction {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub norm_dist: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_total: usize,
    pub n_failed: usize,
    /// Over records with a prediction; NaN when there are none.
    pub mae_x: f64,
    pub mae_y: f64,
    pub mean_norm_dist: f64,
    /// `count(norm_dist < t) / n_total`; failures count in the denominator.
    pub frac_under: Vec<ThresholdFraction>,
    /// Sorted finite errors with cumulative fraction of `n_total`.
    pub curve: Vec<CurvePoint>,
}

impl EvalReport {
    pub fn fraction_under(&self, threshold: f64) -> Option<f64> {
        self.frac_under.iter().find(|f| f.threshold == threshold).map(|f| f.fraction)
    }
}

fn sorted_mean(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    // fixed summation order keeps the result independent of record order
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn evaluate(records: &[EvalRecord], thresholds: &[f64]) -> EvalReport {
    let n_total = records.len();
    let ok: Vec<&EvalRecord> = records.iter().filter(|r| !r.failed()).collect();
    let mut dists: Vec<f64> = ok.iter().map(|r| r.norm_dist).collect();
    dists.sort_by(f64::total_cmp);

    let frac = |count: usize| if n_total == 0 { 0.0 } else { count as f64 / n_total as f64 };
    let frac_under = thresholds
        .iter()
        .map(|&t| ThresholdFraction { threshold: t, fraction: frac(dists.partition_point(|&d| d < t)) })
        .collect();
    let curve = dists
        .iter()
        .enumerate()
        .map(|(i, &d)| CurvePoint { norm_dist: d, fraction: frac(i + 1) })
        .collect();

    EvalReport {
        n_total,
        n_failed: n_total - ok.len(),
        mae_x: sorted_mean(ok.iter().map(|r| r.abs_err_x).collect()),
        mae_y: sorted_mean(ok.iter().map(|r| r.abs_err_y).collect()),
        mean_norm_dist: sorted_mean(dists.clone()),
        frac_under,
        curve,
    }
}

/// One row of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub frame_id: String,
    /// Location and confidence, or `None` for a detector failure.
    pub vp: Option<(Point, f64)>,
}

/// Reads `frame_id pred_x pred_y confidence` rows; `frame_id NONE` marks a
/// failure. Blank lines and `#` comments are skipped.
pub fn parse_predictions<R: BufRead>(reader: R) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |message: String| Error::Parse { line: line_no, message };
        match fields.as_slice() {
            [id, none] if none.eq_ignore_ascii_case("none") => out.push(Prediction { frame_id: id.to_string(), vp: None }),
            [id, x, y, c] => {
                let num = |s: &str| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad(format!("bad number {s:?}")))
                };
                out.push(Prediction { frame_id: id.to_string(), vp: Some((Point::new(num(x)?, num(y)?), num(c)?)) });
            }
            _ => return Err(bad(format!("expected 'frame_id x y confidence' or 'frame_id NONE', got {} fields", fields.len()))),
        }
    }
    Ok(out)
}

pub fn format_prediction(p: &Prediction) -> String {
    match p.vp {
        Some((pt, c)) => format!("{} {} {} {}", p.frame_id, pt.x, pt.y, c),
        None => format!("{} NONE", p.frame_id),
    }
}

/// VP from detected (or annotated) lanes using the labelling pipeline.
/// `None` when fewer than two lanes fit or no pair crosses.
pub fn two_stage_vp(frame: &FrameAnnotation, method: &FitMethod) -> Option<Point> {
    let (label, set) = label_frame(frame, method, Aggregation::Median);
    (set.usable_lanes >= 2 && label.valid).then_some(label.vp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub angle_deg: f64,
    pub n_frames: usize,
    pub n_columns: usize,
}

/// Fits a horizon line through accumulated peak confidences.
///
/// Each peak adds its confidence at its pixel. For every column with
/// positive mass the row of the column maximum is taken (ties to the
/// smallest row), and `y = slope * x + intercept` is fitted to those
/// `(column, row)` pairs by least squares.
pub fn estimate_horizon(peaks: &[PeakResult], geometry: ImageGeometry) -> Result<HorizonEstimate> {
    let w = geometry.width as usize;
    let mut grid = vec![0.0f64; geometry.pixel_count()];
    for p in peaks {
        if p.x >= geometry.width || p.y >= geometry.height {
            return Err(Error::InvalidSpec(format!("peak ({}, {}) outside {}x{}", p.x, p.y, geometry.width, geometry.height)));
        }
        grid[p.y as usize * w + p.x as usize] += f64::from(p.confidence);
    }

    // (x = row, y = column) so the fit gives row as a function of column
    let mut samples = Vec::new();
    for col in 0..w {
        let mut best_row = 0usize;
        let mut best = 0.0f64;
        for row in 0..geometry.height as usize {
            let v = grid[row * w + col];
            if v > best {
                best = v;
                best_row = row;
            }
        }
        if best > 0.0 {
            samples.push(Point::new(best_row as f64, col as f64));
        }
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("{} populated column(s), need 2", samples.len())));
    }
    let fit = fit_lane(&samples, 1)?;
    let slope = fit.coeffs[1];
    Ok(HorizonEstimate {
        slope,
        intercept: fit.coeffs[0],
        angle_deg: slope.atan().to_degrees(),
        n_frames: peaks.len(),
        n_columns: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::lane_ingest::LanePolyline;

    const G: ImageGeometry = ImageGeometry::CULANE;

    #[test]
    fn rescale_examples() {
        let work = ImageGeometry::new(820, 295).unwrap();
        assert_eq!(rescale_coords(Point::new(410.0, 147.5), work, G), Point::new(820.0, 295.0));
        assert_eq!(rescale_coords(Point::new(3.0, 4.0), G, G), Point::new(3.0, 4.0));
        let tiny = ImageGeometry::new(208, 80).unwrap();
        let p = rescale_coords(Point::new(100.0, 50.0), tiny, G);
        assert_abs_diff_eq!(p.x, 100.0 * 1640.0 / 208.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.x, 788.4615384615385, epsilon = 1e-9);
        assert_eq!(p.y, 368.75);
    }

    #[test]
    fn norm_dist_examples() {
        assert_eq!(norm_dist(Point::new(5.0, 5.0), Point::new(5.0, 5.0), G), 0.0);
        let d = norm_dist(Point::new(820.0, 295.0), Point::new(820.0, 312.0), G);
        assert_abs_diff_eq!(d, 17.0 / 1742.8998823799375, epsilon = 1e-12);
        assert_abs_diff_eq!(d, 0.009754, epsilon = 5e-7);
    }

    #[test]
    fn perfect_prediction_report() {
        let r = EvalRecord::new("a", Some(Point::new(1.0, 2.0)), Point::new(1.0, 2.0), 1.0, G);
        let rep = evaluate(&[r], &DEFAULT_THRESHOLDS);
        assert_eq!((rep.mae_x, rep.mae_y, rep.mean_norm_dist), (0.0, 0.0, 0.0));
        assert!(rep.frac_under.iter().all(|f| f.fraction == 1.0));
    }

    fn record_with_norm(id: &str, nd: Option<f64>) -> EvalRecord {
        let gt = Point::new(800.0, 300.0);
        let pred = nd.map(|d| Point::new(gt.x + d * G.diagonal(), gt.y));
        EvalRecord::new(id, pred, gt, 0.9, G)
    }

    #[test]
    fn failures_are_infinite_and_in_denominator() {
        let recs = [record_with_norm("a", Some(0.005)), record_with_norm("b", Some(0.015)), record_with_norm("c", None)];
        assert!(recs[2].norm_dist.is_infinite());
        let rep = evaluate(&recs, &DEFAULT_THRESHOLDS);
        assert_eq!(rep.n_failed, 1);
        assert_abs_diff_eq!(rep.fraction_under(0.01).unwrap(), 1.0 / 3.0);
        assert_abs_diff_eq!(rep.fraction_under(0.02).unwrap(), 2.0 / 3.0);
        assert_eq!(rep.curve.len(), 2);
        assert_abs_diff_eq!(rep.curve[1].fraction, 2.0 / 3.0);
        assert_abs_diff_eq!(rep.mean_norm_dist, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn empty_stream() {
        let rep = evaluate(&[], &DEFAULT_THRESHOLDS);
        assert_eq!(rep.n_total, 0);
        assert!(rep.mae_x.is_nan());
        assert!(rep.frac_under.iter().all(|f| f.fraction == 0.0));
    }

    #[test]
    fn prediction_rows() {
        let text = "# header\n/a.jpg 410.5 147 0.98\n/b.jpg NONE\n\n";
        let preds = parse_predictions(text.as_bytes()).unwrap();
        assert_eq!(preds.len(), 2);
        assert_eq!(preds[0].vp, Some((Point::new(410.5, 147.0), 0.98)));
        assert_eq!(preds[1].vp, None);
        assert_eq!(format_prediction(&preds[1]), "/b.jpg NONE");
        assert!(parse_predictions("/a.jpg 1 2\n".as_bytes()).is_err());
        assert!(parse_predictions("/a.jpg 1 x 3\n".as_bytes()).is_err());
    }

    fn lane(id: u32, vp: Point, slope: f64) -> LanePolyline {
        let pts = (0..8).map(|k| {
            let y = 300.0 + 40.0 * k as f64;
            Point::new(vp.x + slope * (y - vp.y), y)
        });
        LanePolyline::new(id, pts.collect()).unwrap()
    }

    #[test]
    fn two_stage_examples() {
        let vp = Point::new(800.0, 270.0);
        let frame = FrameAnnotation::new("f", G, vec![lane(0, vp, -2.0), lane(1, vp, 0.5), lane(2, vp, 2.0)]).unwrap();
        let p = two_stage_vp(&frame, &FitMethod::three_d()).unwrap();
        assert_abs_diff_eq!(p.x, 800.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.y, 270.0, epsilon = 1e-6);
        let (label, _) = label_frame(&frame, &FitMethod::three_d(), Aggregation::Median);
        assert_eq!(p, label.vp);

        let single = FrameAnnotation::new("g", G, vec![lane(0, vp, -2.0)]).unwrap();
        assert_eq!(two_stage_vp(&single, &FitMethod::three_d()), None);
    }

    #[test]
    fn flat_horizon() {
        let peaks: Vec<PeakResult> = (100..900).step_by(7).map(|x| PeakResult { x, y: 270, confidence: 0.9 }).collect();
        let h = estimate_horizon(&peaks, G).unwrap();
        assert_abs_diff_eq!(h.slope, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.angle_deg, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(h.intercept, 270.0, epsilon = 1e-9);
    }

    #[test]
    fn two_columns_interpolate() {
        let peaks = [PeakResult { x: 100, y: 200, confidence: 0.5 }, PeakResult { x: 300, y: 210, confidence: 0.7 }];
        let h = estimate_horizon(&peaks, G).unwrap();
        assert_abs_diff_eq!(h.slope, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(h.intercept, 195.0, epsilon = 1e-9);
    }

    #[test]
    fn column_maximum_wins_over_counts() {
        // column 100: two weak peaks on row 50 lose to one strong on row 60
        let peaks = [
            PeakResult { x: 100, y: 50, confidence: 0.3 },
            PeakResult { x: 100, y: 50, confidence: 0.3 },
            PeakResult { x: 100, y: 60, confidence: 0.9 },
            PeakResult { x: 200, y: 60, confidence: 0.9 },
        ];
        let h = estimate_horizon(&peaks, G).unwrap();
        assert_abs_diff_eq!(h.slope, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn horizon_needs_two_columns() {
        let peaks = [PeakResult { x: 5, y: 5, confidence: 1.0 }, PeakResult { x: 5, y: 9, confidence: 1.0 }];
        assert!(matches!(estimate_horizon(&peaks, G), Err(Error::InsufficientData(_))));
        let zero = [PeakResult { x: 5, y: 5, confidence: 0.0 }, PeakResult { x: 9, y: 5, confidence: 0.0 }];
        assert!(matches!(estimate_horizon(&zero, G), Err(Error::InsufficientData(_))));
        let outside = [PeakResult { x: 5000, y: 5, confidence: 1.0 }];
        assert!(estimate_horizon(&outside, G).is_err());
    }
}
