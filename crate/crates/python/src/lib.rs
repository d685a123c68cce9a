//! Python bindings: lane parsing, fitting, labelling, heatmap targets,
//! shift sampling, evaluation and synthetic scenes.

use std::path::PathBuf;

use lanevp::augment::{frame_rng, sample_shift as core_sample_shift};
use lanevp::eval::{self, EvalRecord};
use lanevp::heatmap::{self, AmplitudeMode, GaussianSpec, PeakResult, SigmaMode};
use lanevp::lane_ingest::{parse_culane_str, LanePolyline};
use lanevp::polyfit;
use lanevp::{vp_labeler, Aggregation, FitMethod, FrameAnnotation, ImageGeometry, Point};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: lanevp::Error) -> PyErr {
    match e {
        lanevp::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn geometry(size: (u32, u32)) -> PyResult<ImageGeometry> {
    ImageGeometry::new(size.0, size.1).map_err(err)
}

fn method(name: &str, close_band: f64) -> PyResult<FitMethod> {
    match name {
        "1d" => FitMethod::degree(1),
        "2d" => FitMethod::degree(2),
        "3d" => FitMethod::degree(3),
        "1d-close" => FitMethod::close(close_band),
        _ => return Err(PyValueError::new_err(format!("unknown method {name:?}"))),
    }
    .map_err(err)
}

fn points(p: Vec<(f64, f64)>) -> Vec<Point> {
    p.into_iter().map(Point::from).collect()
}

fn frame(lanes: Vec<Vec<(f64, f64)>>, size: (u32, u32)) -> PyResult<FrameAnnotation> {
    let lanes = lanes
        .into_iter()
        .enumerate()
        .map(|(i, l)| LanePolyline::new(i as u32, points(l)))
        .collect::<lanevp::Result<Vec<_>>>()
        .map_err(err)?;
    FrameAnnotation::new("python", geometry(size)?, lanes).map_err(err)
}

/// Fitted `x = f(y)` lane curve.
#[pyclass(name = "PolyFit", frozen)]
struct PyPolyFit(polyfit::PolyFit);

#[pymethods]
impl PyPolyFit {
    /// Raw-pixel coefficients, lowest order first.
    #[getter]
    fn coeffs(&self) -> Vec<f64> {
        self.0.coeffs.clone()
    }

    #[getter]
    fn degree(&self) -> usize {
        self.0.degree
    }

    #[getter]
    fn y_range(&self) -> (f64, f64) {
        (self.0.y_min, self.0.y_max)
    }

    #[getter]
    fn residual_rms(&self) -> f64 {
        self.0.residual_rms
    }

    fn __call__(&self, y: f64) -> f64 {
        self.0.eval(y)
    }

    fn __repr__(&self) -> String {
        format!("PolyFit(coeffs={:?}, y_range=({}, {}))", self.0.coeffs, self.0.y_min, self.0.y_max)
    }
}

/// Vanishing-point label for one frame.
#[pyclass(name = "VpLabel", frozen)]
struct PyVpLabel(vp_labeler::VpLabel);

#[pymethods]
impl PyVpLabel {
    /// `(x, y)`, NaN when not valid.
    #[getter]
    fn vp(&self) -> (f64, f64) {
        (self.0.vp.x, self.0.vp.y)
    }

    #[getter]
    fn sigma(&self) -> (f64, f64) {
        (self.0.sigma_x, self.0.sigma_y)
    }

    #[getter]
    fn n_int(&self) -> usize {
        self.0.n_int
    }

    #[getter]
    fn valid(&self) -> bool {
        self.0.valid
    }

    #[getter]
    fn method(&self) -> String {
        self.0.method.tag()
    }

    /// Passes the quality filter (defaults: 3 intersections, sigma_y < 10).
    #[pyo3(signature = (min_n_int=3, max_sigma_y=10.0, max_sigma_x=None))]
    fn passes(&self, min_n_int: usize, max_sigma_y: f64, max_sigma_x: Option<f64>) -> PyResult<bool> {
        let f = vp_labeler::LabelFilter { min_n_int, max_sigma_y, max_sigma_x };
        f.validate().map_err(err)?;
        Ok(vp_labeler::apply_filter(&self.0, &f))
    }

    fn __repr__(&self) -> String {
        format!(
            "VpLabel(vp=({}, {}), sigma=({}, {}), n_int={}, valid={})",
            self.0.vp.x, self.0.vp.y, self.0.sigma_x, self.0.sigma_y, self.0.n_int, self.0.valid
        )
    }
}

/// Single-channel float32 heatmap, row-major.
#[pyclass(name = "Heatmap")]
struct PyHeatmap(heatmap::Heatmap);

#[pymethods]
impl PyHeatmap {
    #[new]
    fn new(width: u32, height: u32, values: Vec<f32>) -> PyResult<Self> {
        Ok(Self(heatmap::Heatmap::from_values(geometry((width, height))?, values).map_err(err)?))
    }

    #[getter]
    fn size(&self) -> (u32, u32) {
        (self.0.geometry.width, self.0.geometry.height)
    }

    #[getter]
    fn values(&self) -> Vec<f32> {
        self.0.values.clone()
    }

    fn get(&self, x: u32, y: u32) -> PyResult<f32> {
        if x >= self.0.geometry.width || y >= self.0.geometry.height {
            return Err(PyValueError::new_err(format!("({x}, {y}) outside the heatmap")));
        }
        Ok(self.0.get(x, y))
    }

    /// `(x, y, confidence)` of the integer argmax.
    fn peak(&self) -> (u32, u32, f32) {
        let p = heatmap::extract_peak(&self.0);
        (p.x, p.y, p.confidence)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        heatmap::write_heatmap(&path, &self.0).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(heatmap::read_heatmap(&path).map_err(err)?))
    }

    fn to_bytes(&self) -> Vec<u8> {
        heatmap::encode_heatmap(&self.0)
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(Self(heatmap::decode_heatmap(&data).map_err(err)?))
    }
}

/// Parses CULane `.lines.txt` text into lanes of `(x, y)` points.
#[pyfunction]
#[pyo3(signature = (text, size=(1640, 590)))]
fn parse_culane_lines(text: &str, size: (u32, u32)) -> PyResult<Vec<Vec<(f64, f64)>>> {
    let parsed = parse_culane_str(text, "python", geometry(size)?).map_err(err)?;
    Ok(parsed.frame.lanes.iter().map(|l| l.points.iter().map(|p| (p.x, p.y)).collect()).collect())
}

#[pyfunction]
fn fit_lane(points_xy: Vec<(f64, f64)>, degree: usize) -> PyResult<PyPolyFit> {
    Ok(PyPolyFit(polyfit::fit_lane(&points(points_xy), degree).map_err(err)?))
}

/// Labels one frame: returns the label and the pairwise intersections.
#[pyfunction]
#[pyo3(signature = (lanes, size=(1640, 590), method="3d", aggregation="median", close_band=100.0))]
fn label_frame(
    lanes: Vec<Vec<(f64, f64)>>,
    size: (u32, u32),
    method: &str,
    aggregation: &str,
    close_band: f64,
) -> PyResult<(PyVpLabel, Vec<(f64, f64)>)> {
    let m = self::method(method, close_band)?;
    let agg: Aggregation = aggregation.parse().map_err(err)?;
    let (label, set) = vp_labeler::label_frame(&frame(lanes, size)?, &m, agg);
    Ok((PyVpLabel(label), set.points.iter().map(|p| (p.x, p.y)).collect()))
}

/// Gaussian target centered on a vanishing point.
#[pyfunction]
#[pyo3(signature = (vp, size, sigma=16.0, normalized=false, snap_center=true))]
fn render_target(vp: (f64, f64), size: (u32, u32), sigma: f64, normalized: bool, snap_center: bool) -> PyResult<PyHeatmap> {
    let spec = GaussianSpec {
        sigma_mode: SigmaMode::Fixed,
        sigma_fixed: sigma,
        amplitude_mode: if normalized { AmplitudeMode::Normalized } else { AmplitudeMode::Unit },
        snap_center,
        ..GaussianSpec::default()
    };
    let label = vp_labeler::VpLabel::at(vp.into(), FitMethod::three_d());
    Ok(PyHeatmap(heatmap::render_target(&label, geometry(size)?, &spec).map_err(err)?.heatmap))
}

#[pyfunction]
fn extract_peak(h: &PyHeatmap) -> (u32, u32, f32) {
    h.peak()
}

/// Euclidean distance divided by the image diagonal.
#[pyfunction]
#[pyo3(signature = (pred, gt, size=(1640, 590)))]
fn norm_dist(pred: (f64, f64), gt: (f64, f64), size: (u32, u32)) -> PyResult<f64> {
    Ok(eval::norm_dist(pred.into(), gt.into(), geometry(size)?))
}

#[pyfunction]
fn rescale_coords(p: (f64, f64), from_size: (u32, u32), to_size: (u32, u32)) -> PyResult<(f64, f64)> {
    let q = eval::rescale_coords(p.into(), geometry(from_size)?, geometry(to_size)?);
    Ok((q.x, q.y))
}

/// Scores `(pred or None, gt, confidence)` triples; returns a dict.
#[pyfunction]
#[pyo3(signature = (records, size=(1640, 590), thresholds=vec![0.01, 0.02, 0.05, 0.1]))]
fn evaluate<'py>(
    py: Python<'py>,
    records: Vec<(Option<(f64, f64)>, (f64, f64), f64)>,
    size: (u32, u32),
    thresholds: Vec<f64>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let g = geometry(size)?;
    let recs: Vec<EvalRecord> = records
        .into_iter()
        .enumerate()
        .map(|(i, (p, gt, c))| EvalRecord::new(i.to_string(), p.map(Point::from), gt.into(), c, g))
        .collect();
    let r = eval::evaluate(&recs, &thresholds);
    let d = pyo3::types::PyDict::new(py);
    d.set_item("n_total", r.n_total)?;
    d.set_item("n_failed", r.n_failed)?;
    d.set_item("mae_x", r.mae_x)?;
    d.set_item("mae_y", r.mae_y)?;
    d.set_item("mean_norm_dist", r.mean_norm_dist)?;
    d.set_item("frac_under", r.frac_under.iter().map(|f| (f.threshold, f.fraction)).collect::<Vec<_>>())?;
    Ok(d)
}

/// Horizon line through peak positions: `(slope, intercept, angle_deg)`.
#[pyfunction]
fn estimate_horizon(peaks: Vec<(u32, u32, f32)>, size: (u32, u32)) -> PyResult<(f64, f64, f64)> {
    let peaks: Vec<PeakResult> = peaks.into_iter().map(|(x, y, confidence)| PeakResult { x, y, confidence }).collect();
    let h = eval::estimate_horizon(&peaks, geometry(size)?).map_err(err)?;
    Ok((h.slope, h.intercept, h.angle_deg))
}

/// Vertical shift in pixels for a relative VP row, or None when the VP
/// lies outside the admissible band. Seeded per `(seed, key)`.
#[pyfunction]
#[pyo3(signature = (vp_y_rel, height, seed, key, h_edge=0.05))]
fn sample_shift(vp_y_rel: f64, height: u32, seed: u64, key: &str, h_edge: f64) -> PyResult<Option<f64>> {
    let mut rng = frame_rng(seed, "python-shift", key);
    Ok(core_sample_shift(vp_y_rel, h_edge, &mut rng).map_err(err)?.map(|s| s * f64::from(height)))
}

/// The synthetic suite: list of `(name, vp_true, lanes)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn scene_suite(seed: u64) -> Vec<(String, (f64, f64), Vec<Vec<(f64, f64)>>)> {
    lanevp::synth::scene_suite(seed)
        .into_iter()
        .map(|(spec, t)| {
            let lanes = t.lanes.lanes.iter().map(|l| l.points.iter().map(|p| (p.x, p.y)).collect()).collect();
            (spec.name, (t.vp_true.x, t.vp_true.y), lanes)
        })
        .collect()
}

#[pymodule]
fn lanevp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolyFit>()?;
    m.add_class::<PyVpLabel>()?;
    m.add_class::<PyHeatmap>()?;
    m.add_function(wrap_pyfunction!(parse_culane_lines, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lane, m)?)?;
    m.add_function(wrap_pyfunction!(label_frame, m)?)?;
    m.add_function(wrap_pyfunction!(render_target, m)?)?;
    m.add_function(wrap_pyfunction!(extract_peak, m)?)?;
    m.add_function(wrap_pyfunction!(norm_dist, m)?)?;
    m.add_function(wrap_pyfunction!(rescale_coords, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_horizon, m)?)?;
    m.add_function(wrap_pyfunction!(sample_shift, m)?)?;
    m.add_function(wrap_pyfunction!(scene_suite, m)?)?;
    Ok(())
}
