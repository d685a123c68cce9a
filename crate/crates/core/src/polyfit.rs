//! Least-squares polynomial fits `x = a_n y^n + ... + a_1 y + a_0` of lane
//! points.
//!
//! The system is solved by Householder QR on a Vandermonde matrix in the
//! normalized variable `t = (y - y_min) / (y_max - y_min)`, then mapped back
//! to raw-pixel coefficients. Raw cubic Vandermonde columns span ~10^8 in
//! magnitude over a 590 px frame, which squares badly in normal equations.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::lane_ingest::LanePolyline;

/// Width of the near-range band used by 1D-close fitting.
pub const DEFAULT_CLOSE_BAND: f64 = 100.0;

/// Fitting configuration: polynomial degree plus the optional
/// near-range restriction ("1D-close").
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMethod {
    pub degree: usize,
    pub close_range_only: bool,
    pub close_band: f64,
}

impl FitMethod {
    pub fn degree(degree: usize) -> Result<Self> {
        let m = Self { degree, close_range_only: false, close_band: DEFAULT_CLOSE_BAND };
        m.validate()?;
        Ok(m)
    }

    pub fn one_d() -> Self {
        Self { degree: 1, close_range_only: false, close_band: DEFAULT_CLOSE_BAND }
    }

    pub fn three_d() -> Self {
        Self { degree: 3, close_range_only: false, close_band: DEFAULT_CLOSE_BAND }
    }

    /// Degree-1 fit of the points at least `band` pixels below the lane's
    /// top-most annotation.
    pub fn close(band: f64) -> Result<Self> {
        let m = Self { degree: 1, close_range_only: true, close_band: band };
        m.validate()?;
        Ok(m)
    }

    pub fn one_d_close() -> Self {
        Self { degree: 1, close_range_only: true, close_band: DEFAULT_CLOSE_BAND }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.degree) {
            return Err(Error::InvalidSpec(format!("fit degree {} not in 1..=3", self.degree)));
        }
        if self.close_range_only && self.degree != 1 {
            return Err(Error::InvalidSpec("close-range fitting requires degree 1".into()));
        }
        if !(self.close_band > 0.0 && self.close_band.is_finite()) {
            return Err(Error::InvalidSpec(format!("close band {} must be positive", self.close_band)));
        }
        Ok(())
    }

    /// Short tag used in label files: `1d`, `2d`, `3d` or `1d-close`.
    pub fn tag(&self) -> String {
        if self.close_range_only {
            "1d-close".to_string()
        } else {
            format!("{}d", self.degree)
        }
    }
}

impl Default for FitMethod {
    fn default() -> Self {
        Self::three_d()
    }
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1d" => Ok(Self::one_d()),
            "2d" => Self::degree(2),
            "3d" => Ok(Self::three_d()),
            "1d-close" | "1d_close" => Ok(Self::one_d_close()),
            other => Err(Error::InvalidSpec(format!("unknown fit method {other:?} (1d|1d-close|2d|3d)"))),
        }
    }
}

/// Points chosen for a fit and whether there are enough of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub points: Vec<Point>,
    pub usable: bool,
}

/// Picks the lane points a method fits. Close-range methods keep points with
/// `y >= top_y + close_band`; others keep everything. Assumes the lane is
/// sorted by ascending y.
pub fn select_fit_points(lane: &LanePolyline, method: &FitMethod) -> Selection {
    let points: Vec<Point> = if method.close_range_only {
        let cut = lane.top().y + method.close_band;
        lane.points.iter().copied().filter(|p| p.y >= cut).collect()
    } else {
        lane.points.clone()
    };
    let usable = points.len() > method.degree;
    Selection { points, usable }
}

/// A fitted lane curve `x = f(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    /// Raw-pixel coefficients, lowest order first (`a_0 .. a_n`).
    pub coeffs: Vec<f64>,
    pub degree: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub residual_rms: f64,
    pub n_points: usize,
    normalized: Vec<f64>,
}

impl PolyFit {
    /// Builds a fit from known raw coefficients (no data behind it).
    pub fn from_coeffs(coeffs: Vec<f64>, y_min: f64, y_max: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidSpec("empty coefficient list".into()));
        }
        if !(y_min < y_max) {
            return Err(Error::InvalidSpec(format!("y range [{y_min}, {y_max}] is empty")));
        }
        let degree = coeffs.len() - 1;
        let normalized = to_normalized_basis(&coeffs, y_min, y_max - y_min);
        Ok(Self { coeffs, degree, y_min, y_max, residual_rms: 0.0, n_points: 0, normalized })
    }

    /// Horner evaluation in raw coordinates. Extrapolation is intended.
    pub fn eval(&self, y: f64) -> f64 {
        horner(&self.coeffs, y)
    }

    /// Evaluation through the normalized-variable coefficients the solver
    /// produced.
    pub fn eval_normalized(&self, y: f64) -> f64 {
        horner(&self.normalized, (y - self.y_min) / (self.y_max - self.y_min))
    }
}

pub fn eval_poly(fit: &PolyFit, y: f64) -> f64 {
    fit.eval(y)
}

pub(crate) fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Least-squares fit of `x` as a polynomial in `y`.
///
/// Needs at least `degree + 1` points with at least `degree + 1` distinct
/// y values; otherwise the design is rank deficient and
/// [`Error::SingularFit`] is returned.
pub fn fit_lane(points: &[Point], degree: usize) -> Result<PolyFit> {
    let n = degree + 1;
    if points.len() < n {
        return Err(Error::SingularFit(format!("{} point(s) for degree {degree}", points.len())));
    }
    let mut ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    ys.sort_by(f64::total_cmp);
    let distinct = 1 + ys.windows(2).filter(|w| w[0] != w[1]).count();
    if distinct < n {
        return Err(Error::SingularFit(format!("{distinct} distinct y value(s) for degree {degree}")));
    }
    let y_min = ys[0];
    let y_max = ys[ys.len() - 1];
    let span = y_max - y_min;

    let m = points.len();
    let design = DMatrix::from_fn(m, n, |i, j| ((points[i].y - y_min) / span).powi(j as i32));
    let rhs = DVector::from_iterator(m, points.iter().map(|p| p.x));

    let qr = design.qr();
    let r = qr.r();
    let max_diag = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..n).any(|i| r[(i, i)].abs() <= 1e-12 * max_diag) {
        return Err(Error::SingularFit("rank-deficient Vandermonde matrix".into()));
    }
    let qt_b = qr.q().transpose() * rhs;
    let sol = r
        .solve_upper_triangular(&qt_b)
        .ok_or_else(|| Error::SingularFit("triangular solve failed".into()))?;
    let normalized: Vec<f64> = sol.iter().copied().collect();

    let sq: f64 = points
        .iter()
        .map(|p| {
            let e = p.x - horner(&normalized, (p.y - y_min) / span);
            e * e
        })
        .sum();
    let residual_rms = (sq / m as f64).sqrt();

    Ok(PolyFit {
        coeffs: to_raw_basis(&normalized, y_min, span),
        degree,
        y_min,
        y_max,
        residual_rms,
        n_points: m,
        normalized,
    })
}

/// Fits a lane with a method, or `None` when the selection is too small or
/// singular.
pub fn fit_with_method(lane: &LanePolyline, method: &FitMethod) -> Option<PolyFit> {
    let sel = select_fit_points(lane, method);
    if !sel.usable {
        return None;
    }
    fit_lane(&sel.points, method.degree).ok()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `sum_k c_k ((y - offset) / scale)^k` expanded in powers of `y`.
fn to_raw_basis(c: &[f64], offset: f64, scale: f64) -> Vec<f64> {
    let n = c.len();
    (0..n)
        .map(|j| {
            (j..n)
                .map(|k| c[k] * binomial(k, j) * (-offset).powi((k - j) as i32) / scale.powi(k as i32))
                .sum()
        })
        .collect()
}

/// Inverse of [`to_raw_basis`]: `y = offset + scale * t`.
fn to_normalized_basis(a: &[f64], offset: f64, scale: f64) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|k| {
            (k..n)
                .map(|j| a[j] * binomial(j, k) * offset.powi((j - k) as i32) * scale.powi(k as i32))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn pts(f: impl Fn(f64) -> f64, ys: &[f64]) -> Vec<Point> {
        ys.iter().map(|&y| Point::new(f(y), y)).collect()
    }

    #[test]
    fn method_tags_roundtrip() {
        for tag in ["1d", "2d", "3d", "1d-close"] {
            assert_eq!(tag.parse::<FitMethod>().unwrap().tag(), tag);
        }
        assert!("4d".parse::<FitMethod>().is_err());
    }

    #[test]
    fn close_range_requires_degree_one() {
        let bad = FitMethod { degree: 3, close_range_only: true, close_band: 100.0 };
        assert!(bad.validate().is_err());
        assert!(FitMethod::close(0.0).is_err());
    }

    #[test]
    fn close_selection_keeps_points_below_band() {
        let lane = LanePolyline::new(0, pts(|y| y, &[300.0, 350.0, 400.0, 450.0])).unwrap();
        let sel = select_fit_points(&lane, &FitMethod::one_d_close());
        let ys: Vec<f64> = sel.points.iter().map(|p| p.y).collect();
        assert_eq!(ys, vec![400.0, 450.0]);
        assert!(sel.usable);
    }

    #[test]
    fn plain_selection_is_identity() {
        let lane = LanePolyline::new(0, pts(|y| y, &[300.0, 350.0, 400.0])).unwrap();
        let sel = select_fit_points(&lane, &FitMethod::three_d());
        assert_eq!(sel.points, lane.points);
        assert!(!sel.usable);
    }

    #[test]
    fn short_lane_is_unusable_for_close_fit() {
        let lane = LanePolyline::new(0, pts(|y| y, &[300.0, 350.0])).unwrap();
        let sel = select_fit_points(&lane, &FitMethod::one_d_close());
        assert!(sel.points.is_empty());
        assert!(!sel.usable);
    }

    #[test]
    fn exact_line() {
        let fit = fit_lane(&pts(|y| 2.0 * y + 3.0, &[10.0, 50.0, 120.0, 300.0]), 1).unwrap();
        assert_abs_diff_eq!(fit.coeffs[1], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.coeffs[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.eval(10.0), 23.0, epsilon = 1e-9);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn cubic_eval() {
        let fit = PolyFit::from_coeffs(vec![0.0, 0.0, 0.0, 1.0], 0.0, 1.0).unwrap();
        assert_eq!(eval_poly(&fit, 2.0), 8.0);
    }

    #[test]
    fn collinear_points_with_cubic() {
        let data = pts(|y| -0.5 * y + 700.0, &[250.0, 330.0, 460.0, 590.0]);
        let fit = fit_lane(&data, 3).unwrap();
        assert!(fit.residual_rms < 1e-7 * 700.0);
        assert!(fit.coeffs[2].abs() < 1e-7 * fit.coeffs[0].abs());
        assert!(fit.coeffs[3].abs() < 1e-7 * fit.coeffs[0].abs());
    }

    #[test]
    fn identical_y_is_singular() {
        let data = vec![Point::new(1.0, 5.0), Point::new(2.0, 5.0), Point::new(3.0, 5.0)];
        assert!(matches!(fit_lane(&data, 1), Err(Error::SingularFit(_))));
    }

    #[test]
    fn too_few_distinct_y_is_singular() {
        let data = vec![Point::new(1.0, 5.0), Point::new(2.0, 5.0), Point::new(3.0, 6.0), Point::new(4.0, 6.0)];
        assert!(matches!(fit_lane(&data, 2), Err(Error::SingularFit(_))));
        assert!(fit_lane(&data, 1).is_ok());
    }

    #[test]
    fn too_few_points_is_singular() {
        let data = pts(|y| y, &[1.0, 2.0]);
        assert!(matches!(fit_lane(&data, 2), Err(Error::SingularFit(_))));
    }

    #[test]
    fn basis_conversion_roundtrip() {
        let a = vec![400.0, -1.0, 0.001, -2e-6];
        let c = to_normalized_basis(&a, 250.0, 340.0);
        let back = to_raw_basis(&c, 250.0, 340.0);
        for (x, y) in a.iter().zip(&back) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn eval_at_y_min_is_near_source_point() {
        let ys = [240.0, 280.0, 330.0, 400.0, 470.0, 590.0];
        let data: Vec<Point> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| Point::new(0.4 * y + 20.0 + if i % 2 == 0 { 0.7 } else { -0.7 }, y))
            .collect();
        for degree in 1..=3 {
            let fit = fit_lane(&data, degree).unwrap();
            let bound = fit.residual_rms * (data.len() as f64).sqrt();
            assert!((fit.eval(fit.y_min) - data[0].x).abs() <= bound + 1e-9);
        }
    }
}
