use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use lanevp::augment::{format_aug_row, frame_rng, plan_augmentation, AUG_HEADER};
use lanevp::eval::{
    estimate_horizon, evaluate, parse_predictions, rescale_coords, EvalRecord, EvalReport, HorizonEstimate,
    Prediction, ThresholdFraction,
};
use lanevp::heatmap::{encode_heatmap, encode_pgm, render_target, PeakResult};
use lanevp::lane_ingest::{
    culane_annotation_path, frame_path, mask_to_centerlines, parse_culane_lines, read_manifest, write_culane_lines,
};
use lanevp::synth::scene_suite;
use lanevp::vp_labeler::{
    apply_filter, format_label_row, label_frame, read_label_rows, FrameLabel, StatsAccumulator, StatsReport,
    LABEL_HEADER,
};
use lanevp::{FrameAnnotation, ImageGeometry, SegMask, VpLabel};

use crate::config::{AnnotationKind, Config};
use crate::CliError;

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| CliError::Internal(e.to_string()))
}

fn to_toml<T: Serialize>(v: &T) -> Result<String, CliError> {
    toml::to_string(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn load_manifest(cfg: &Config) -> Result<Vec<String>, CliError> {
    let path = cfg.manifest_path()?;
    read_manifest(path).map_err(|e| CliError::Input(format!("manifest {}: {e}", path.display())))
}

fn load_frame(cfg: &Config, geometry: ImageGeometry, id: &str) -> lanevp::Result<FrameAnnotation> {
    match cfg.annotation {
        AnnotationKind::Culane => {
            let path = culane_annotation_path(&cfg.root, id);
            let file = File::open(&path)
                .map_err(|e| lanevp::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            let parsed = parse_culane_lines(BufReader::new(file), id, geometry)?;
            if parsed.dropped_lines > 0 {
                warn!("{id}: dropped {} malformed lane lines", parsed.dropped_lines);
            }
            Ok(parsed.frame)
        }
        AnnotationKind::Mask => {
            let root = cfg.mask_root.as_deref().unwrap_or(&cfg.root);
            let path = frame_path(root, id).with_extension(&cfg.mask_ext);
            let mask = SegMask::load(&path)?;
            if mask.geometry != geometry {
                warn!("{id}: mask is {}x{}, config says {}x{}", mask.geometry.width, mask.geometry.height, geometry.width, geometry.height);
            }
            mask_to_centerlines(&mask, id, cfg.row_interval, cfg.min_y_extent)
        }
    }
}

struct Labeled {
    frame: FrameAnnotation,
    label: VpLabel,
    readable: bool,
}

/// Loads and labels every manifest frame on the worker pool. Results come
/// back in manifest order.
fn label_all(cfg: &Config) -> Result<Vec<Labeled>, CliError> {
    let ids = load_manifest(cfg)?;
    let geometry = cfg.geometry()?;
    let method = cfg.fit_method()?;
    let aggregation = cfg.aggregation()?;
    Ok(ids
        .par_iter()
        .map(|id| match load_frame(cfg, geometry, id) {
            Ok(frame) => {
                let (label, _) = label_frame(&frame, &method, aggregation);
                Labeled { frame, label, readable: true }
            }
            Err(e) => {
                warn!("{id}: {e}");
                let frame = FrameAnnotation { frame_id: id.clone(), geometry, lanes: Vec::new() };
                Labeled { frame, label: VpLabel::invalid(method, aggregation), readable: false }
            }
        })
        .collect())
}

pub fn label(cfg: &Config) -> Result<(), CliError> {
    let results = label_all(cfg)?;
    let filter = cfg.filter();
    let mut text = String::from(LABEL_HEADER);
    text.push('\n');
    for r in &results {
        text.push_str(&format_label_row(&r.frame.frame_id, &r.label));
        text.push('\n');
    }
    write_out(&cfg.out.join("labels.tsv"), text.as_bytes())?;
    let valid = results.iter().filter(|r| r.label.valid).count();
    let kept = results.iter().filter(|r| apply_filter(&r.label, &filter)).count();
    let unreadable = results.iter().filter(|r| !r.readable).count();
    println!("frames {}  valid {valid}  filtered-in {kept}  unreadable {unreadable}", results.len());
    Ok(())
}

#[derive(Serialize)]
struct StatsFile<'a> {
    method: String,
    aggregation: String,
    filtered_in: u64,
    unreadable: u64,
    #[serde(flatten)]
    report: &'a StatsReport,
}

pub fn stats(cfg: &Config) -> Result<(), CliError> {
    let results = label_all(cfg)?;
    let filter = cfg.filter();
    let acc = results
        .par_iter()
        .fold(StatsAccumulator::default, |mut acc, r| {
            acc.add(&r.frame, &r.label);
            acc
        })
        .reduce(StatsAccumulator::default, |mut a, b| {
            a.merge(&b);
            a
        });
    let report = acc.finish();
    let file = StatsFile {
        method: cfg.fit_method()?.tag(),
        aggregation: cfg.aggregation()?.to_string(),
        filtered_in: results.iter().filter(|r| apply_filter(&r.label, &filter)).count() as u64,
        unreadable: results.iter().filter(|r| !r.readable).count() as u64,
        report: &report,
    };
    write_out(&cfg.out.join("stats.json"), to_json(&file)?.as_bytes())?;
    println!(
        "frames {}  valid {}  >=2 lanes {:.1}%",
        report.frames_total,
        report.valid_labels,
        100.0 * report.frames_ge2_lanes.fraction
    );
    Ok(())
}

fn load_labels(cfg: &Config, path: Option<PathBuf>) -> Result<Vec<FrameLabel>, CliError> {
    let path = path.unwrap_or_else(|| cfg.out.join("labels.tsv"));
    let file = File::open(&path).map_err(|e| CliError::Input(format!("labels {}: {e}", path.display())))?;
    read_label_rows(BufReader::new(file)).map_err(|e| CliError::Input(format!("labels {}: {e}", path.display())))
}

fn kept_labels(cfg: &Config, path: Option<PathBuf>) -> Result<Vec<FrameLabel>, CliError> {
    let filter = cfg.filter();
    Ok(load_labels(cfg, path)?.into_iter().filter(|l| apply_filter(&l.label, &filter)).collect())
}

fn heatmap_name(frame_id: &str) -> String {
    frame_id.trim_start_matches('/').replace('/', "__")
}

pub fn heatmap(cfg: &Config, labels: Option<PathBuf>) -> Result<(), CliError> {
    let labels = kept_labels(cfg, labels)?;
    let full = cfg.geometry()?;
    let work = cfg.work_geometry()?;
    let spec = cfg.gaussian();
    let (sx, sy) = (f64::from(work.width) / f64::from(full.width), f64::from(work.height) / f64::from(full.height));
    let dir = cfg.out.join("heatmaps");
    let rows: Vec<String> = labels
        .par_iter()
        .map(|l| {
            // targets live at network resolution; spreads scale with the image
            let mut label = l.label;
            label.vp = rescale_coords(label.vp, full, work);
            label.sigma_x *= sx;
            label.sigma_y *= sy;
            let target = render_target(&label, work, &spec)?;
            let name = heatmap_name(&l.frame_id);
            write_out(&dir.join(format!("{name}.vphm")), &encode_heatmap(&target.heatmap))?;
            if cfg.pgm {
                write_out(&dir.join(format!("{name}.pgm")), &encode_pgm(&target.heatmap))?;
            }
            Ok(format!(
                "{}\t{name}.vphm\t{}\t{}\t{}\t{}",
                l.frame_id, target.sigma, target.amplitude, target.center.x, target.center.y
            ))
        })
        .collect::<Result<_, CliError>>()?;
    let mut index = String::from("frame_id\tfile\tsigma\tamplitude\tcenter_x\tcenter_y\n");
    for r in &rows {
        index.push_str(r);
        index.push('\n');
    }
    write_out(&dir.join("index.tsv"), index.as_bytes())?;
    println!("heatmaps {}  ({}x{})", rows.len(), work.width, work.height);
    Ok(())
}

pub fn augment(cfg: &Config, labels: Option<PathBuf>) -> Result<(), CliError> {
    let labels = kept_labels(cfg, labels)?;
    let geometry = cfg.geometry()?;
    let spec = cfg.shift_spec();
    let mut text = String::from(AUG_HEADER);
    text.push('\n');
    for epoch in 0..cfg.epochs {
        let rows: Vec<String> = labels
            .par_iter()
            .map(|l| {
                let mut rng = frame_rng(cfg.seed, "augment", &format!("{epoch}/{}", l.frame_id));
                let rec = plan_augmentation(&l.label, geometry, &spec, &mut rng)?;
                Ok(format_aug_row(&l.frame_id, epoch, &rec))
            })
            .collect::<Result<_, CliError>>()?;
        for r in rows {
            text.push_str(&r);
            text.push('\n');
        }
    }
    write_out(&cfg.out.join("augment.tsv"), text.as_bytes())?;
    println!("augmented {} labels x {} epochs", labels.len(), cfg.epochs);
    Ok(())
}

fn load_predictions(path: &Path) -> Result<Vec<Prediction>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("predictions {}: {e}", path.display())))?;
    parse_predictions(BufReader::new(file)).map_err(|e| CliError::Input(format!("predictions {}: {e}", path.display())))
}

#[derive(Serialize)]
struct Metrics {
    n_total: usize,
    n_failed: usize,
    mae_x: f64,
    mae_y: f64,
    mean_norm_dist: f64,
    frac_under: Vec<ThresholdFraction>,
}

impl From<&EvalReport> for Metrics {
    fn from(r: &EvalReport) -> Self {
        Self {
            n_total: r.n_total,
            n_failed: r.n_failed,
            mae_x: r.mae_x,
            mae_y: r.mae_y,
            mean_norm_dist: r.mean_norm_dist,
            frac_under: r.frac_under.clone(),
        }
    }
}

#[derive(Serialize)]
struct SweepEntry {
    conf_threshold: f64,
    n_accepted: usize,
    n_rejected: usize,
    metrics: Metrics,
}

#[derive(Serialize)]
struct EvalFile {
    n_labels: usize,
    n_predictions: usize,
    n_missing: usize,
    n_ignored: usize,
    n_unknown: usize,
    unknown_frames: Vec<String>,
    overall: Metrics,
    sweep: Vec<SweepEntry>,
}

pub fn eval(cfg: &Config, predictions: &Path, labels: Option<PathBuf>) -> Result<(), CliError> {
    let all_labels = load_labels(cfg, labels)?;
    let filter = cfg.filter();
    let preds = load_predictions(predictions)?;
    let full = cfg.geometry()?;
    let work = cfg.work_geometry()?;

    let mut by_id: BTreeMap<&str, Option<(lanevp::Point, f64)>> = BTreeMap::new();
    for p in &preds {
        if by_id.insert(p.frame_id.as_str(), p.vp).is_some() {
            return Err(CliError::Input(format!("duplicate prediction for {}", p.frame_id)));
        }
    }
    let known: BTreeSet<&str> = all_labels.iter().map(|l| l.frame_id.as_str()).collect();
    let unknown_frames: Vec<String> =
        preds.iter().filter(|p| !known.contains(p.frame_id.as_str())).map(|p| p.frame_id.clone()).collect();
    if !unknown_frames.is_empty() {
        warn!("{} predictions have no label", unknown_frames.len());
    }

    let kept: Vec<&FrameLabel> = all_labels.iter().filter(|l| apply_filter(&l.label, &filter)).collect();
    let mut n_missing = 0;
    let records: Vec<EvalRecord> = kept
        .iter()
        .map(|l| {
            let entry = by_id.get(l.frame_id.as_str()).copied();
            if entry.is_none() {
                n_missing += 1;
            }
            let (pred, conf) = match entry.flatten() {
                Some((p, c)) => (Some(rescale_coords(p, work, full)), c),
                None => (None, 0.0),
            };
            EvalRecord::new(l.frame_id.clone(), pred, l.label.vp, conf, full)
        })
        .collect();
    let n_ignored = preds.len() - unknown_frames.len() - (kept.len() - n_missing);

    let report = evaluate(&records, &cfg.thresholds);
    let sweep = cfg
        .conf_thresholds
        .iter()
        .map(|&tau| {
            let accepted: Vec<EvalRecord> =
                records.iter().filter(|r| !r.failed() && r.confidence > tau).cloned().collect();
            let r = evaluate(&accepted, &cfg.thresholds);
            SweepEntry {
                conf_threshold: tau,
                n_accepted: accepted.len(),
                n_rejected: records.len() - accepted.len(),
                metrics: Metrics::from(&r),
            }
        })
        .collect();

    let file = EvalFile {
        n_labels: kept.len(),
        n_predictions: preds.len(),
        n_missing,
        n_ignored,
        n_unknown: unknown_frames.len(),
        unknown_frames,
        overall: Metrics::from(&report),
        sweep,
    };
    write_out(&cfg.out.join("report.txt"), to_toml(&file)?.as_bytes())?;
    let mut curve = String::from("norm_dist\tfraction\n");
    for c in &report.curve {
        let _ = writeln!(curve, "{}\t{}", c.norm_dist, c.fraction);
    }
    write_out(&cfg.out.join("curve.tsv"), curve.as_bytes())?;
    let fracs: Vec<String> =
        report.frac_under.iter().map(|f| format!("<{}: {:.4}", f.threshold, f.fraction)).collect();
    println!("frames {}  failed {}  {}", report.n_total, report.n_failed, fracs.join("  "));
    Ok(())
}

#[derive(Serialize)]
struct HorizonFile {
    #[serde(flatten)]
    estimate: HorizonEstimate,
    min_confidence: f64,
    n_skipped: usize,
}

pub fn horizon(cfg: &Config, predictions: &Path, min_confidence: f64) -> Result<(), CliError> {
    let preds = load_predictions(predictions)?;
    let work = cfg.work_geometry()?;
    let mut skipped = 0;
    let peaks: Vec<PeakResult> = preds
        .iter()
        .filter_map(|p| p.vp)
        .filter(|(_, c)| *c > min_confidence)
        .filter_map(|(pt, c)| {
            let (x, y) = (pt.x.round(), pt.y.round());
            if work.contains(x as i64, y as i64) {
                Some(PeakResult { x: x as u32, y: y as u32, confidence: c as f32 })
            } else {
                skipped += 1;
                None
            }
        })
        .collect();
    if skipped > 0 {
        info!("{skipped} peaks outside the {}x{} grid", work.width, work.height);
    }
    let estimate = estimate_horizon(&peaks, work)?;
    let file = HorizonFile { estimate, min_confidence, n_skipped: skipped };
    write_out(&cfg.out.join("horizon.txt"), to_toml(&file)?.as_bytes())?;
    println!("horizon angle {:.3} deg from {} columns", estimate.angle_deg, estimate.n_columns);
    Ok(())
}

pub fn synth(cfg: &Config) -> Result<(), CliError> {
    let dir = cfg.out.join("synth");
    let suite = scene_suite(cfg.seed);
    let mut list = String::new();
    let mut truth = String::from("frame_id\tvp_x\tvp_y\tlanes\tcurvature\tnoise\tpitch\tyaw\n");
    for (spec, t) in &suite {
        let id = format!("{}.jpg", spec.name);
        write_out(&culane_annotation_path(&dir, &id), write_culane_lines(&t.lanes).as_bytes())?;
        list.push_str(&id);
        list.push('\n');
        let _ = writeln!(
            truth,
            "{id}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.vp_true.x,
            t.vp_true.y,
            t.lanes.lane_count(),
            spec.curvature,
            spec.point_noise_sigma,
            spec.pitch,
            spec.yaw
        );
    }
    write_out(&dir.join("list.txt"), list.as_bytes())?;
    write_out(&dir.join("truth.tsv"), truth.as_bytes())?;
    let specs: Vec<_> = suite.iter().map(|(s, _)| s).collect();
    write_out(&dir.join("scenes.json"), to_json(&specs)?.as_bytes())?;
    println!("scenes {}  -> {}", suite.len(), dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_names_are_flat() {
        assert_eq!(heatmap_name("/driver_23/05.MP4/00000.jpg"), "driver_23__05.MP4__00000.jpg");
    }
}
