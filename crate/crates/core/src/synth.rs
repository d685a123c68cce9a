//! Synthetic road scenes with a known vanishing point.
//!
//! Lanes are ground-plane curves (straight lines or constant-curvature
//! arcs) seen by a pinhole camera at `camera_height` above the road. Camera
//! axes: x right, y down, z forward. Positive `pitch` tilts the camera down,
//! which moves the VP up; positive `yaw` turns it so the VP moves right.
//! `vp_true` is the image of the straight-ahead travel direction.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::{derive_seed, AugRng};
use crate::error::{Error, Result};
use crate::geometry::{ImageGeometry, Point};
use crate::lane_ingest::{FrameAnnotation, LanePolyline};

/// Candidate depths tried per lane before visibility filtering.
const DEPTH_SAMPLES: usize = 600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub geometry: ImageGeometry,
    pub focal: f64,
    pub principal: Point,
    pub pitch: f64,
    pub yaw: f64,
    pub camera_height: f64,
    /// Lateral lane positions in meters, positive to the right.
    pub lane_offsets: Vec<f64>,
    /// Signed 1/m, positive bends right; 0 is straight.
    pub curvature: f64,
    pub point_noise_sigma: f64,
    pub n_points_per_lane: usize,
    pub near_m: f64,
    pub far_m: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// A CULane-like camera: 1640×590 frame, 1000 px focal length, VP near
    /// row 250.
    pub fn culane_like(lane_offsets: Vec<f64>) -> Self {
        Self {
            name: "scene".into(),
            geometry: ImageGeometry::CULANE,
            focal: 1000.0,
            principal: Point::new(819.5, 294.5),
            pitch: (44.5f64 / 1000.0).atan(),
            yaw: 0.0,
            camera_height: 1.5,
            lane_offsets,
            curvature: 0.0,
            point_noise_sigma: 0.0,
            n_points_per_lane: 30,
            near_m: 1.0,
            far_m: 150.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if !(self.focal > 0.0) {
            return bad("focal must be positive");
        }
        if self.lane_offsets.len() < 2 {
            return bad("need at least two lanes");
        }
        if self.n_points_per_lane < 2 {
            return bad("need at least two points per lane");
        }
        if !(self.camera_height > 0.0) {
            return bad("camera must be above the ground plane");
        }
        if !(self.near_m > 0.0 && self.near_m < self.far_m) {
            return bad("depth range must satisfy 0 < near < far");
        }
        if !(self.point_noise_sigma >= 0.0) {
            return bad("noise sigma must be >= 0");
        }
        Ok(())
    }

    /// The same scene reflected left-right: the rendered lanes and VP are
    /// the mirror images (`x -> width - 1 - x`) of the original's.
    pub fn mirrored(&self) -> Self {
        let mut m = self.clone();
        m.yaw = -self.yaw;
        m.curvature = -self.curvature;
        m.lane_offsets = self.lane_offsets.iter().map(|a| -a).collect();
        m.principal.x = f64::from(self.geometry.width) - 1.0 - self.principal.x;
        m
    }

    fn rotation(&self) -> Matrix3<f64> {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        let pitch = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
        let yaw = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
        pitch * yaw
    }

    fn project(&self, r: &Matrix3<f64>, world: Vector3<f64>) -> Option<Point> {
        let c = r * world;
        if c.z <= 1e-6 {
            return None;
        }
        Some(Point::new(self.principal.x + self.focal * c.x / c.z, self.principal.y + self.focal * c.y / c.z))
    }

    /// Image of the forward direction.
    pub fn vanishing_point(&self) -> Option<Point> {
        self.project(&self.rotation(), Vector3::new(0.0, 0.0, 1.0))
    }

    /// Ground point of a lane at arc length `s` (meters, camera-aligned
    /// road frame, y down).
    fn lane_point(&self, offset: f64, s: f64) -> Vector3<f64> {
        let k = self.curvature;
        let (x, z) = if k == 0.0 {
            (offset, s)
        } else {
            let (sn, cs) = (k * s).sin_cos();
            (offset * cs + (1.0 - cs) / k, sn / k - offset * sn)
        };
        Vector3::new(x, self.camera_height, z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub vp_true: Point,
    pub lanes: FrameAnnotation,
}

/// Projects the scene's lanes and samples noisy annotation points.
///
/// Depths are spaced uniformly in inverse distance (roughly uniform image
/// rows); only in-frame points are kept and then thinned to
/// `n_points_per_lane`. Lanes with fewer than two visible points are
/// omitted.
pub fn render_scene(spec: &SceneSpec) -> Result<SceneTruth> {
    spec.validate()?;
    let r = spec.rotation();
    let vp_true = spec
        .project(&r, Vector3::new(0.0, 0.0, 1.0))
        .ok_or_else(|| Error::InvalidSpec("forward direction is behind the camera".into()))?;
    let (w, h) = (f64::from(spec.geometry.width), f64::from(spec.geometry.height));

    // keep arcs short of a quarter turn so depth stays monotone
    let far = if spec.curvature == 0.0 {
        spec.far_m
    } else {
        spec.far_m.min(0.45 * std::f64::consts::PI / spec.curvature.abs())
    };
    let (inv_near, inv_far) = (1.0 / spec.near_m, 1.0 / far);

    let mut rng = AugRng::seed_from_u64(derive_seed(spec.seed, "synth-noise", &spec.name));
    let noise = Normal::new(0.0, spec.point_noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let mut lanes = Vec::new();
    for (id, &offset) in spec.lane_offsets.iter().enumerate() {
        let visible: Vec<Point> = (0..DEPTH_SAMPLES)
            .filter_map(|i| {
                let inv = inv_far + (inv_near - inv_far) * i as f64 / (DEPTH_SAMPLES - 1) as f64;
                spec.project(&r, spec.lane_point(offset, 1.0 / inv))
            })
            .filter(|p| p.x >= 0.0 && p.x <= w - 1.0 && p.y >= 0.0 && p.y <= h - 1.0)
            .collect();
        if visible.len() < 2 {
            continue;
        }
        let n = spec.n_points_per_lane.min(visible.len());
        let mut points: Vec<Point> = (0..n)
            .map(|k| visible[k * (visible.len() - 1) / (n - 1)])
            .collect();
        if spec.point_noise_sigma > 0.0 {
            for p in &mut points {
                p.x += noise.sample(&mut rng);
                p.y += noise.sample(&mut rng);
            }
        }
        lanes.push(LanePolyline::new(id as u32, points)?);
    }
    if lanes.is_empty() {
        return Err(Error::EmptyScene);
    }
    Ok(SceneTruth { vp_true, lanes: FrameAnnotation::new(spec.name.clone(), spec.geometry, lanes)? })
}

fn unit_from_seed(seed: u64, key: &str) -> f64 {
    (derive_seed(seed, "suite", key) >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic battery of 24 scenes: 2/3/4 lanes × straight/curved ×
/// clean/noisy (1 px) × VP inside/above the frame. The seed perturbs yaw
/// and the curve direction.
pub fn scene_suite(seed: u64) -> Vec<(SceneSpec, SceneTruth)> {
    let lane_sets: [&[f64]; 3] = [&[-1.75, 1.75], &[-1.75, 1.75, 5.25], &[-5.25, -1.75, 1.75, 5.25]];
    let mut out = Vec::with_capacity(24);
    for (li, offsets) in lane_sets.iter().enumerate() {
        for curved in [false, true] {
            for noisy in [false, true] {
                for above in [false, true] {
                    let name = format!("suite_{seed}_l{}_{}_{}_{}", offsets.len(), if curved { "curved" } else { "straight" }, if noisy { "noisy" } else { "clean" }, if above { "above" } else { "inside" });
                    let mut spec = SceneSpec::culane_like(offsets.to_vec());
                    spec.name = name.clone();
                    spec.seed = seed.wrapping_add(li as u64);
                    spec.yaw = (unit_from_seed(seed, &name) - 0.5) * 4f64.to_radians();
                    if curved {
                        let sign = if unit_from_seed(seed, &format!("{name}/k")) < 0.5 { -1.0 } else { 1.0 };
                        spec.curvature = sign / 400.0;
                    }
                    if noisy {
                        spec.point_noise_sigma = 1.0;
                    }
                    if above {
                        // VP 60 px above the top edge
                        spec.pitch = ((spec.principal.y + 60.0) / spec.focal).atan();
                    }
                    let truth = render_scene(&spec).expect("suite scenes have visible lanes");
                    out.push((spec, truth));
                }
            }
        }
    }
    out
}
