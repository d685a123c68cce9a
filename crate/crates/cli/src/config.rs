use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use lanevp::augment::ShiftSpec;
use lanevp::heatmap::{AmplitudeMode, GaussianSpec, SigmaMode};
use lanevp::{Aggregation, FitMethod, ImageGeometry, LabelFilter};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    /// `<frame>.lines.txt` next to each frame
    Culane,
    /// instance-id raster per frame
    Mask,
}

/// Everything a run depends on. Keys in the TOML file use the same
/// kebab-case names as the command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Config {
    pub root: PathBuf,
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub annotation: AnnotationKind,
    pub mask_root: Option<PathBuf>,
    pub mask_ext: String,
    pub row_interval: u32,
    pub min_y_extent: u32,
    pub method: String,
    pub close_band: f64,
    pub aggregation: String,
    pub min_n_int: usize,
    pub max_sigma_y: f64,
    pub max_sigma_x: Option<f64>,
    pub sigma_mode: SigmaMode,
    pub sigma: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub amplitude: AmplitudeMode,
    pub snap_center: bool,
    pub width: u32,
    pub height: u32,
    pub work_width: u32,
    pub work_height: u32,
    pub h_edge: f64,
    pub flip_prob: f64,
    pub shift_prob: f64,
    pub epochs: u32,
    pub seed: u64,
    pub workers: usize,
    pub thresholds: Vec<f64>,
    pub conf_thresholds: Vec<f64>,
    pub pgm: bool,
}

impl Default for Config {
    fn default() -> Self {
        let g = GaussianSpec::default();
        let s = ShiftSpec::default();
        let f = LabelFilter::default();
        Self {
            root: PathBuf::from("."),
            manifest: None,
            out: PathBuf::from("out"),
            annotation: AnnotationKind::Culane,
            mask_root: None,
            mask_ext: "png".into(),
            row_interval: lanevp::lane_ingest::DEFAULT_ROW_INTERVAL,
            min_y_extent: lanevp::lane_ingest::DEFAULT_MIN_Y_EXTENT,
            method: "3d".into(),
            close_band: lanevp::polyfit::DEFAULT_CLOSE_BAND,
            aggregation: "median".into(),
            min_n_int: f.min_n_int,
            max_sigma_y: f.max_sigma_y,
            max_sigma_x: f.max_sigma_x,
            sigma_mode: g.sigma_mode,
            sigma: g.sigma_fixed,
            sigma_low: g.sigma_low,
            sigma_high: g.sigma_high,
            amplitude: g.amplitude_mode,
            snap_center: g.snap_center,
            width: ImageGeometry::CULANE.width,
            height: ImageGeometry::CULANE.height,
            work_width: 820,
            work_height: 295,
            h_edge: s.h_edge,
            flip_prob: s.flip_prob,
            shift_prob: s.shift_prob,
            epochs: 1,
            seed: 0,
            workers: 0,
            thresholds: lanevp::eval::DEFAULT_THRESHOLDS.to_vec(),
            conf_thresholds: Vec::new(),
            pgm: false,
        }
    }
}

/// Command-line overrides; each flag replaces the config key of the same
/// name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Dataset root [key: root]
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
    /// Frame list, first token per line [key: manifest]
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory [key: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Annotation source [key: annotation]
    #[arg(long, global = true, value_enum)]
    pub annotation: Option<AnnotationKind>,
    /// Directory of instance masks, defaults to root [key: mask-root]
    #[arg(long, global = true)]
    pub mask_root: Option<PathBuf>,
    /// Mask file extension [key: mask-ext]
    #[arg(long, global = true)]
    pub mask_ext: Option<String>,
    /// Mask row sampling step in pixels [key: row-interval]
    #[arg(long, global = true)]
    pub row_interval: Option<u32>,
    /// Shortest mask lane kept, in rows [key: min-y-extent]
    #[arg(long, global = true)]
    pub min_y_extent: Option<u32>,
    /// Lane fit: 1d, 2d, 3d or 1d-close [key: method]
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Rows below the top annotation skipped by 1d-close [key: close-band]
    #[arg(long, global = true)]
    pub close_band: Option<f64>,
    /// Intersection aggregation: median or mean [key: aggregation]
    #[arg(long, global = true)]
    pub aggregation: Option<String>,
    /// Keep labels with at least this many intersections [key: min-n-int]
    #[arg(long, global = true)]
    pub min_n_int: Option<usize>,
    /// Keep labels with vertical spread below this [key: max-sigma-y]
    #[arg(long, global = true)]
    pub max_sigma_y: Option<f64>,
    /// Optional horizontal spread limit [key: max-sigma-x]
    #[arg(long, global = true)]
    pub max_sigma_x: Option<f64>,
    /// Heatmap width rule: fixed or dynamic [key: sigma-mode]
    #[arg(long, global = true, value_parser = parse_sigma_mode)]
    pub sigma_mode: Option<SigmaMode>,
    /// Fixed Gaussian sigma in working pixels [key: sigma]
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Dynamic sigma lower clip [key: sigma-low]
    #[arg(long, global = true)]
    pub sigma_low: Option<f64>,
    /// Dynamic sigma upper clip [key: sigma-high]
    #[arg(long, global = true)]
    pub sigma_high: Option<f64>,
    /// Gaussian peak: unit or normalized [key: amplitude]
    #[arg(long, global = true, value_parser = parse_amplitude)]
    pub amplitude: Option<AmplitudeMode>,
    /// Center targets on the nearest pixel [key: snap-center]
    #[arg(long, global = true)]
    pub snap_center: Option<bool>,
    /// Full-resolution width [key: width]
    #[arg(long, global = true)]
    pub width: Option<u32>,
    /// Full-resolution height [key: height]
    #[arg(long, global = true)]
    pub height: Option<u32>,
    /// Network input width [key: work-width]
    #[arg(long, global = true)]
    pub work_width: Option<u32>,
    /// Network input height [key: work-height]
    #[arg(long, global = true)]
    pub work_height: Option<u32>,
    /// Margin of the shifted VP row range [key: h-edge]
    #[arg(long, global = true)]
    pub h_edge: Option<f64>,
    /// Horizontal flip probability [key: flip-prob]
    #[arg(long, global = true)]
    pub flip_prob: Option<f64>,
    /// Vertical shift probability [key: shift-prob]
    #[arg(long, global = true)]
    pub shift_prob: Option<f64>,
    /// Augmentation epochs to export [key: epochs]
    #[arg(long, global = true)]
    pub epochs: Option<u32>,
    /// Root seed for every random draw [key: seed]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 = all cores [key: workers]
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// NormDist thresholds, comma separated [key: thresholds]
    #[arg(long, global = true, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Confidence thresholds to sweep, comma separated [key: conf-thresholds]
    #[arg(long, global = true, value_delimiter = ',')]
    pub conf_thresholds: Option<Vec<f64>>,
    /// Also write PGM previews of heatmaps [key: pgm]
    #[arg(long, global = true)]
    pub pgm: Option<bool>,
}

fn parse_sigma_mode(s: &str) -> Result<SigmaMode, String> {
    match s {
        "fixed" => Ok(SigmaMode::Fixed),
        "dynamic" => Ok(SigmaMode::Dynamic),
        _ => Err(format!("expected fixed or dynamic, got {s:?}")),
    }
}

fn parse_amplitude(s: &str) -> Result<AmplitudeMode, String> {
    match s {
        "unit" => Ok(AmplitudeMode::Unit),
        "normalized" => Ok(AmplitudeMode::Normalized),
        _ => Err(format!("expected unit or normalized, got {s:?}")),
    }
}

macro_rules! apply {
    ($cfg:expr, $ov:expr, $($field:ident),* $(,)?) => {
        $(if let Some(v) = $ov.$field.clone() { $cfg.$field = v; })*
    };
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => Config::default(),
        };
        apply!(
            cfg, overrides, root, out, annotation, mask_ext, row_interval, min_y_extent, method, close_band,
            aggregation, min_n_int, max_sigma_y, sigma_mode, sigma, sigma_low, sigma_high, amplitude, snap_center,
            width, height, work_width, work_height, h_edge, flip_prob, shift_prob, epochs, seed, workers,
            thresholds, conf_thresholds, pgm,
        );
        if overrides.manifest.is_some() {
            cfg.manifest = overrides.manifest.clone();
        }
        if overrides.mask_root.is_some() {
            cfg.mask_root = overrides.mask_root.clone();
        }
        if overrides.max_sigma_x.is_some() {
            cfg.max_sigma_x = overrides.max_sigma_x;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: lanevp::Error| CliError::Usage(e.to_string());
        self.fit_method().map_err(usage)?;
        self.aggregation().map_err(usage)?;
        self.filter().validate().map_err(usage)?;
        self.gaussian().validate().map_err(usage)?;
        self.shift_spec().validate().map_err(usage)?;
        self.geometry().map_err(usage)?;
        self.work_geometry().map_err(usage)?;
        if self.row_interval == 0 {
            return Err(CliError::Usage("row-interval must be positive".into()));
        }
        if self.thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(CliError::Usage("thresholds must be finite and >= 0".into()));
        }
        if self.conf_thresholds.iter().any(|t| !t.is_finite()) {
            return Err(CliError::Usage("conf-thresholds must be finite".into()));
        }
        Ok(())
    }

    pub fn fit_method(&self) -> lanevp::Result<FitMethod> {
        let m: FitMethod = self.method.parse()?;
        if m.close_range_only {
            FitMethod::close(self.close_band)
        } else {
            Ok(m)
        }
    }

    pub fn aggregation(&self) -> lanevp::Result<Aggregation> {
        self.aggregation.parse()
    }

    pub fn filter(&self) -> LabelFilter {
        LabelFilter { min_n_int: self.min_n_int, max_sigma_y: self.max_sigma_y, max_sigma_x: self.max_sigma_x }
    }

    pub fn gaussian(&self) -> GaussianSpec {
        GaussianSpec {
            sigma_mode: self.sigma_mode,
            sigma_fixed: self.sigma,
            sigma_low: self.sigma_low,
            sigma_high: self.sigma_high,
            amplitude_mode: self.amplitude,
            snap_center: self.snap_center,
        }
    }

    pub fn shift_spec(&self) -> ShiftSpec {
        ShiftSpec { h_edge: self.h_edge, flip_prob: self.flip_prob, shift_prob: self.shift_prob, seed: self.seed }
    }

    pub fn geometry(&self) -> lanevp::Result<ImageGeometry> {
        ImageGeometry::new(self.width, self.height)
    }

    pub fn work_geometry(&self) -> lanevp::Result<ImageGeometry> {
        ImageGeometry::new(self.work_width, self.work_height)
    }

    pub fn manifest_path(&self) -> Result<&Path, CliError> {
        self.manifest.as_deref().ok_or_else(|| CliError::Usage("no manifest given (--manifest or key manifest)".into()))
    }
}
