//! Geometric augmentation: horizontal flip and the vertical shift that
//! spreads the relative VP height uniformly over `[h_edge, 1 - h_edge]`.
//!
//! Randomness comes from ChaCha8 streams derived per frame from a base seed
//! (SHA-256 of seed, domain and frame id), so results do not depend on the
//! order frames are processed in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{ImageGeometry, Point};
use crate::lane_ingest::{FrameAnnotation, LanePolyline};
use crate::vp_labeler::VpLabel;

/// Identifier of the generator behind every augmentation stream.
pub const RNG_ALGORITHM: &str = "chacha8";

pub type AugRng = ChaCha8Rng;

/// Sub-seed for `(seed, domain, key)`, stable across platforms and runs.
pub fn derive_seed(seed: u64, domain: &str, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

pub fn frame_rng(seed: u64, domain: &str, frame_id: &str) -> AugRng {
    AugRng::seed_from_u64(derive_seed(seed, domain, frame_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub h_edge: f64,
    pub flip_prob: f64,
    pub shift_prob: f64,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self { h_edge: 0.05, flip_prob: 0.5, shift_prob: 0.5, seed: 0 }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.h_edge) {
            return Err(Error::InvalidSpec(format!("h_edge {} must be in [0, 0.5)", self.h_edge)));
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("shift_prob", self.shift_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidSpec(format!("{name} {p} must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Draws a relative shift uniformly from
/// `[h_edge - vp_y_rel, 1 - vp_y_rel - h_edge]`.
///
/// Returns `Ok(None)` when the VP is not strictly inside the frame
/// (`vp_y_rel ∉ (0, 1)`); such labels are left unshifted. The returned shift
/// always satisfies `h_edge <= vp_y_rel + shift <= 1 - h_edge`.
pub fn sample_shift<R: Rng + ?Sized>(vp_y_rel: f64, h_edge: f64, rng: &mut R) -> Result<Option<f64>> {
    if !(0.0..0.5).contains(&h_edge) {
        return Err(Error::InvalidSpec(format!("h_edge {h_edge} leaves an empty shift interval")));
    }
    if !(vp_y_rel > 0.0 && vp_y_rel < 1.0) {
        return Ok(None);
    }
    let (lo, hi) = (h_edge, 1.0 - h_edge);
    let target: f64 = rng.random_range(lo..=hi);
    let mut shift = target - vp_y_rel;
    // keep the closed band exact under rounding
    while vp_y_rel + shift < lo {
        shift = shift.next_up();
    }
    while vp_y_rel + shift > hi {
        shift = shift.next_down();
    }
    Ok(Some(shift))
}

pub fn flip_point(p: Point, geometry: ImageGeometry) -> Point {
    Point::new(f64::from(geometry.width) - 1.0 - p.x, p.y)
}

/// Mirrors lanes and label about the vertical image axis,
/// `x -> (width - 1) - x`. Spreads are unchanged.
pub fn apply_flip(frame: &FrameAnnotation, label: &VpLabel) -> (FrameAnnotation, VpLabel) {
    let g = frame.geometry;
    let lanes = frame
        .lanes
        .iter()
        .map(|l| LanePolyline { lane_id: l.lane_id, points: l.points.iter().map(|&p| flip_point(p, g)).collect() })
        .collect();
    let mut out = *label;
    out.vp = flip_point(label.vp, g);
    (FrameAnnotation { frame_id: frame.frame_id.clone(), geometry: g, lanes }, out)
}

/// Rows of the shifted image with no source pixels, `[y_start, y_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillBand {
    pub y_start: f64,
    pub y_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shifted {
    pub frame: FrameAnnotation,
    pub label: VpLabel,
    pub fill: FillBand,
}

/// Translates every y coordinate by `shift_px` (positive moves content
/// down). Heatmap targets should be re-rendered from the shifted label.
pub fn apply_shift(frame: &FrameAnnotation, label: &VpLabel, shift_px: f64) -> Shifted {
    let g = frame.geometry;
    let h = f64::from(g.height);
    let lanes = frame
        .lanes
        .iter()
        .map(|l| LanePolyline {
            lane_id: l.lane_id,
            points: l.points.iter().map(|p| Point::new(p.x, p.y + shift_px)).collect(),
        })
        .collect();
    let mut out = *label;
    out.vp.y += shift_px;
    let fill = if shift_px >= 0.0 {
        FillBand { y_start: 0.0, y_end: shift_px.min(h) }
    } else {
        FillBand { y_start: (h + shift_px).max(0.0), y_end: h }
    };
    Shifted { frame: FrameAnnotation { frame_id: frame.frame_id.clone(), geometry: g, lanes }, label: out, fill }
}

/// What was done to one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugRecord {
    pub flipped: bool,
    /// Vertical translation in pixels (0 when not shifted).
    pub shift_px: f64,
    pub vp: Point,
}

/// Draws flip and shift decisions for a label.
///
/// Two coins are always drawn (flip, then shift) so a stream stays aligned
/// regardless of outcomes. Invalid labels are never shifted.
pub fn plan_augmentation<R: Rng + ?Sized>(label: &VpLabel, geometry: ImageGeometry, spec: &ShiftSpec, rng: &mut R) -> Result<AugRecord> {
    spec.validate()?;
    let flip_coin: f64 = rng.random();
    let shift_coin: f64 = rng.random();
    let flipped = flip_coin < spec.flip_prob;
    let mut vp = if flipped { flip_point(label.vp, geometry) } else { label.vp };
    let mut shift_px = 0.0;
    if label.valid && shift_coin < spec.shift_prob {
        let h = f64::from(geometry.height);
        let rel = vp.y / h;
        if let Some(shift) = sample_shift(rel, spec.h_edge, rng)? {
            let target = (rel + shift) * h;
            shift_px = target - vp.y;
            vp.y = target;
        }
    }
    Ok(AugRecord { flipped, shift_px, vp })
}

/// Applies a planned record to lanes and label.
pub fn apply_record(frame: &FrameAnnotation, label: &VpLabel, record: &AugRecord) -> (FrameAnnotation, VpLabel) {
    let (frame, label) = if record.flipped { apply_flip(frame, label) } else { (frame.clone(), *label) };
    if record.shift_px == 0.0 {
        return (frame, label);
    }
    let mut shifted = apply_shift(&frame, &label, record.shift_px);
    if label.valid {
        shifted.label.vp = record.vp;
    }
    (shifted.frame, shifted.label)
}

pub const AUG_HEADER: &str = "frame_id\tepoch\tflipped\tshift_px\tvp_x\tvp_y";

pub fn format_aug_row(frame_id: &str, epoch: u32, r: &AugRecord) -> String {
    format!("{}\t{}\t{}\t{}\t{}\t{}", frame_id, epoch, r.flipped, r.shift_px, r.vp.x, r.vp.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyfit::FitMethod;

    fn rng() -> AugRng {
        AugRng::seed_from_u64(7)
    }

    #[test]
    fn shift_interval_endpoints() {
        let mut r = rng();
        for _ in 0..2000 {
            let s = sample_shift(0.2, 0.05, &mut r).unwrap().unwrap();
            assert!((-0.15 - 1e-12..=0.75 + 1e-12).contains(&s));
            assert!((0.05..=0.95).contains(&(0.2 + s)));
        }
    }

    #[test]
    fn degenerate_band_collapses() {
        let eps = 1e-6;
        let mut r = rng();
        for _ in 0..100 {
            let s = sample_shift(0.5, 0.5 - eps, &mut r).unwrap().unwrap();
            assert!(s.abs() <= eps + 1e-15);
        }
    }

    #[test]
    fn empty_interval_is_error() {
        assert!(sample_shift(0.3, 0.5, &mut rng()).is_err());
        assert!(ShiftSpec { h_edge: 0.6, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn vp_outside_frame_is_not_shifted() {
        assert_eq!(sample_shift(-0.1, 0.05, &mut rng()).unwrap(), None);
        assert_eq!(sample_shift(1.0, 0.05, &mut rng()).unwrap(), None);
    }

    fn frame_and_label() -> (FrameAnnotation, VpLabel) {
        let lane = LanePolyline::new(0, vec![Point::new(100.0, 300.0), Point::new(50.0, 500.0)]).unwrap();
        let frame = FrameAnnotation::new("f", ImageGeometry::CULANE, vec![lane]).unwrap();
        (frame, VpLabel::at(Point::new(800.0, 250.0), FitMethod::three_d()))
    }

    #[test]
    fn flip_arithmetic_and_involution() {
        let (frame, label) = frame_and_label();
        let (f1, l1) = apply_flip(&frame, &label);
        assert_eq!(l1.vp, Point::new(839.0, 250.0));
        assert_eq!(f1.lanes[0].points[0], Point::new(1539.0, 300.0));
        let (f2, l2) = apply_flip(&f1, &l1);
        assert_eq!((f2, l2), (frame, label));
    }

    #[test]
    fn zero_shift_is_identity_and_inverse_restores() {
        let (frame, label) = frame_and_label();
        let s0 = apply_shift(&frame, &label, 0.0);
        assert_eq!((s0.frame.clone(), s0.label), (frame.clone(), label));
        assert_eq!(s0.fill.y_end - s0.fill.y_start, 0.0);
        let s = apply_shift(&frame, &label, -37.25);
        assert_eq!(s.fill, FillBand { y_start: 590.0 - 37.25, y_end: 590.0 });
        let back = apply_shift(&s.frame, &s.label, 37.25);
        assert!((back.label.vp.y - label.vp.y).abs() < 1e-9);
        assert!((back.frame.lanes[0].points[1].y - 500.0).abs() < 1e-9);
    }

    #[test]
    fn shift_to_band_edge() {
        let (frame, label) = frame_and_label();
        let edge = 0.05 * 590.0;
        let s = apply_shift(&frame, &label, edge - label.vp.y);
        assert!((s.label.vp.y - edge).abs() < 1e-9);
        assert!(s.label.vp.y / 590.0 >= 0.05 - 1e-12);
    }

    #[test]
    fn seeded_plans_repeat() {
        let (_, label) = frame_and_label();
        let spec = ShiftSpec::default();
        let run = || {
            let mut r = frame_rng(42, "augment", "f");
            (0..50).map(|_| plan_augmentation(&label, ImageGeometry::CULANE, &spec, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn plan_never_moves_x_beyond_flip() {
        let (frame, label) = frame_and_label();
        let spec = ShiftSpec { flip_prob: 0.0, shift_prob: 1.0, ..Default::default() };
        let mut r = rng();
        for _ in 0..200 {
            let rec = plan_augmentation(&label, frame.geometry, &spec, &mut r).unwrap();
            assert_eq!(rec.vp.x, label.vp.x);
            let rel = rec.vp.y / 590.0;
            assert!((0.05 - 1e-12..=0.95 + 1e-12).contains(&rel));
            let (f2, l2) = apply_record(&frame, &label, &rec);
            assert_eq!(l2.vp, rec.vp);
            assert!((f2.lanes[0].points[0].y - (300.0 + rec.shift_px)).abs() < 1e-9);
        }
    }

    #[test]
    fn derived_seeds_differ_by_key() {
        assert_ne!(derive_seed(1, "augment", "a"), derive_seed(1, "augment", "b"));
        assert_ne!(derive_seed(1, "augment", "a"), derive_seed(1, "synth", "a"));
        assert_eq!(derive_seed(1, "augment", "a"), derive_seed(1, "augment", "a"));
    }
}
