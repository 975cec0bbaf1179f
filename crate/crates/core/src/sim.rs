//! Analytic LiDAR simulator used as ground truth.
//!
//! Scenes are built from finite vertical cylinders (poles), vertical
//! rectangles (walls) and an optional horizontal ground plane. Every pixel
//! casts one ray through its cell center and records the nearest hit.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose2D, PoseDelta};
use crate::mcl::{sample_motion, MotionNoise};
use crate::range_image::{Cell, RangeImage, SensorIntrinsics};

/// Hits closer than this are treated as self-intersections.
const MIN_HIT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    pub z_min: f64,
    pub z_max: f64,
}

/// Vertical rectangle spanning the segment (x1, y1)–(x2, y2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub z_min: f64,
    pub z_max: f64,
}

/// Scene file schema (TOML):
///
/// ```toml
/// ground_z = 0.0            # optional; omit for no ground
///
/// [[cylinders]]
/// center_x = 5.0
/// center_y = 0.0
/// radius = 0.15
/// z_min = 0.0
/// z_max = 6.0
///
/// [[walls]]
/// x1 = 8.0
/// y1 = 8.0
/// x2 = 42.0
/// y2 = 8.0
/// z_min = 0.0
/// z_max = 12.0
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_z: Option<f64>,
    #[serde(default)]
    pub cylinders: Vec<Cylinder>,
    #[serde(default)]
    pub walls: Vec<Wall>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.cylinders.iter().enumerate() {
            if !(c.radius > 0.0) || !(c.z_min < c.z_max) {
                return Err(Error::param(
                    "scene.cylinders",
                    format!("cylinder {i} needs radius > 0 and z_min < z_max"),
                ));
            }
        }
        for (i, w) in self.walls.iter().enumerate() {
            if !(w.z_min < w.z_max) || (w.x1 == w.x2 && w.y1 == w.y2) {
                return Err(Error::param(
                    "scene.walls",
                    format!("wall {i} needs z_min < z_max and distinct endpoints"),
                ));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scene: Scene = toml::from_str(text).map_err(|e| Error::Config(format!("scene: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(reason) => Error::Format {
                kind: "scene",
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    /// Nearest hit distance along a unit ray, if any.
    pub fn cast(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let mut best = f64::INFINITY;
        for c in &self.cylinders {
            if let Some(t) = intersect_cylinder(c, origin, dir) {
                best = best.min(t);
            }
        }
        for w in &self.walls {
            if let Some(t) = intersect_wall(w, origin, dir) {
                best = best.min(t);
            }
        }
        if let Some(gz) = self.ground_z {
            if let Some(t) = intersect_ground(gz, origin, dir) {
                best = best.min(t);
            }
        }
        best.is_finite().then_some(best)
    }
}

/// Entry point of a ray into a solid finite cylinder (side or caps).
pub fn intersect_cylinder(c: &Cylinder, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    let mut best = f64::INFINITY;
    let (ox, oy) = (o[0] - c.center_x, o[1] - c.center_y);
    let a = d[0] * d[0] + d[1] * d[1];
    if a > 0.0 {
        let b = ox * d[0] + oy * d[1];
        let cc = ox * ox + oy * oy - c.radius * c.radius;
        let disc = b * b - a * cc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // entry root only; the far root is the inside of the shell
            let t = (-b - sq) / a;
            if t > MIN_HIT {
                let z = o[2] + t * d[2];
                if z >= c.z_min && z <= c.z_max {
                    best = t;
                }
            }
        }
    }
    if d[2] != 0.0 {
        for zc in [c.z_min, c.z_max] {
            let t = (zc - o[2]) / d[2];
            if t > MIN_HIT && t < best {
                let (px, py) = (ox + t * d[0], oy + t * d[1]);
                if px * px + py * py <= c.radius * c.radius {
                    best = t;
                }
            }
        }
    }
    best.is_finite().then_some(best)
}

pub fn intersect_wall(w: &Wall, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    let (ex, ey) = (w.x2 - w.x1, w.y2 - w.y1);
    // o + t·d = p1 + s·e in the plane
    let denom = d[0] * ey - d[1] * ex;
    if denom == 0.0 {
        return None;
    }
    let (qx, qy) = (w.x1 - o[0], w.y1 - o[1]);
    let t = (qx * ey - qy * ex) / denom;
    let s = (qx * d[1] - qy * d[0]) / denom;
    if t <= MIN_HIT || !(0.0..=1.0).contains(&s) {
        return None;
    }
    let z = o[2] + t * d[2];
    (z >= w.z_min && z <= w.z_max).then_some(t)
}

pub fn intersect_ground(ground_z: f64, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    if d[2] >= 0.0 {
        return None;
    }
    let t = (ground_z - o[2]) / d[2];
    (t > MIN_HIT).then_some(t)
}

/// Gaussian range noise for [`render_scan`].
pub struct RangeNoise<'a, R: Rng> {
    pub std: f64,
    pub rng: &'a mut R,
}

/// Renders the scan seen by a sensor at `pose`, mounted `sensor_height` above z = 0.
///
/// Stored coordinates are in the sensor frame: x forward, y left, z up.
pub fn render_scan<R: Rng>(
    scene: &Scene,
    pose: &Pose2D,
    sensor_height: f64,
    k: &SensorIntrinsics,
    noise: Option<RangeNoise<'_, R>>,
) -> RangeImage {
    let (w, h) = (k.width, k.height);
    let origin = [pose.x, pose.y, sensor_height];
    let (s, c) = pose.theta.sin_cos();
    let mut cells: Vec<Option<Cell>> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let (u, v) = (idx % w, idx / w);
            let d = k.ray_direction(u, v);
            let world = [c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]];
            scene
                .cast(origin, world)
                .filter(|&t| t <= k.max_range)
                .map(|t| Cell {
                    range: t,
                    x: d[0] * t,
                    y: d[1] * t,
                    z: d[2] * t,
                })
        })
        .collect();

    if let Some(noise) = noise {
        if noise.std > 0.0 {
            let normal = Normal::new(0.0, noise.std).expect("finite std");
            for cell in cells.iter_mut() {
                if let Some(old) = *cell {
                    let r = old.range + normal.sample(noise.rng);
                    *cell = (r > 0.0 && r <= k.max_range).then(|| {
                        let scale = r / old.range;
                        Cell::from_xyz(old.x * scale, old.y * scale, old.z * scale)
                    });
                }
            }
        }
    }
    RangeImage::from_cells(*k, cells)
}

/// Noiseless convenience wrapper around [`render_scan`].
pub fn render_scan_exact(scene: &Scene, pose: &Pose2D, sensor_height: f64, k: &SensorIntrinsics) -> RangeImage {
    render_scan::<ChaCha8Rng>(scene, pose, sensor_height, k, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub waypoints: Vec<[f64; 2]>,
    /// m/s
    pub speed: f64,
    /// Hz
    pub scan_rate: f64,
    pub sensor_height: f64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::param("simulation.waypoints", "need at least 2 waypoints"));
        }
        if !(self.speed > 0.0) {
            return Err(Error::param("simulation.speed", "must be positive"));
        }
        if !(self.scan_rate > 0.0) {
            return Err(Error::param("simulation.scan_rate", "must be positive"));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|p| (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]))
            .sum()
    }
}

/// Samples poses along the waypoint polyline every `speed / scan_rate` meters.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<Vec<Pose2D>> {
    spec.validate()?;
    let segments: Vec<([f64; 2], [f64; 2], f64)> = spec
        .waypoints
        .windows(2)
        .map(|p| (p[0], p[1], (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1])))
        .filter(|s| s.2 > 0.0)
        .collect();
    if segments.is_empty() {
        return Err(Error::param("simulation.waypoints", "all waypoints coincide"));
    }
    let total: f64 = segments.iter().map(|s| s.2).sum();
    let step = spec.speed / spec.scan_rate;
    let count = (total / step + 1e-9).floor() as usize + 1;

    let mut poses = Vec::with_capacity(count);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for i in 0..count {
        let s = i as f64 * step;
        // advance while s is at or past the end of the current segment
        while seg + 1 < segments.len() && s >= seg_start + segments[seg].2 - 1e-9 {
            seg_start += segments[seg].2;
            seg += 1;
        }
        let (a, b, len) = segments[seg];
        let f = ((s - seg_start) / len).clamp(0.0, 1.0);
        let x = a[0] + f * (b[0] - a[0]);
        let y = a[1] + f * (b[1] - a[1]);
        let theta = (b[1] - a[1]).atan2(b[0] - a[0]);
        poses.push(Pose2D::new(x, y, theta).with_timestamp(i as f64 / spec.scan_rate));
    }
    Ok(poses)
}

/// Body-frame increments between consecutive poses, perturbed with the motion-model noise law.
pub fn noisy_odometry<R: Rng>(poses: &[Pose2D], noise: &MotionNoise, rng: &mut R) -> Vec<PoseDelta> {
    poses
        .windows(2)
        .map(|p| sample_motion(&p[0].delta_to(&p[1]), noise, rng))
        .collect()
}

/// Chains increments from `start`; the result has `deltas.len() + 1` poses.
pub fn dead_reckon(start: Pose2D, deltas: &[PoseDelta], timestamps: Option<&[f64]>) -> Vec<Pose2D> {
    let mut out = Vec::with_capacity(deltas.len() + 1);
    out.push(start);
    let mut cur = start;
    for (i, d) in deltas.iter().enumerate() {
        cur = cur.compose(d);
        if let Some(ts) = timestamps {
            cur.timestamp = ts[i + 1];
        }
        out.push(cur);
    }
    out
}

/// Seed of the shipped urban-block benchmark.
pub const URBAN_BLOCK_SEED: u64 = 42;

/// Vertical layout of the benchmark sensor: 64 × 2048, +15° / −10°, 40 m.
///
/// The lower FOV edge keeps the flat ground out of the image closer than
/// about 9.8 m, so pole bases nearby do not touch ground returns.
pub fn benchmark_intrinsics() -> SensorIntrinsics {
    SensorIntrinsics::from_degrees(2048, 64, 15.0, -10.0, 40.0).expect("valid benchmark intrinsics")
}

pub const BENCHMARK_SENSOR_HEIGHT: f64 = 1.73;

/// The "urban-block" benchmark: a 50 m × 50 m square loop (200 m) around a
/// building block bounded by four walls, 20 poles along the road, ground at z = 0.
pub fn urban_block() -> (Scene, TrajectorySpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(URBAN_BLOCK_SEED);
    let side = 50.0;
    let inset = 8.0;
    let corners = [[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]];

    let (lo, hi) = (inset, side - inset);
    let block = [[lo, lo], [hi, lo], [hi, hi], [lo, hi]];
    let walls = (0..4)
        .map(|i| {
            let (a, b) = (block[i], block[(i + 1) % 4]);
            Wall {
                x1: a[0],
                y1: a[1],
                x2: b[0],
                y2: b[1],
                z_min: 0.0,
                z_max: 12.0,
            }
        })
        .collect();

    let mut cylinders = Vec::with_capacity(20);
    for edge in 0..4 {
        let a = corners[edge];
        let b = corners[(edge + 1) % 4];
        let (tx, ty) = ((b[0] - a[0]) / side, (b[1] - a[1]) / side);
        // driving counter-clockwise, the block interior is on the left
        let (lx, ly) = (-ty, tx);
        for slot in 0..5 {
            let along = 5.0 + 10.0 * slot as f64 + rng.random_range(-2.0..2.0);
            let inner = (edge * 5 + slot) % 2 == 0;
            let offset = if inner {
                rng.random_range(3.5..5.0)
            } else {
                -rng.random_range(3.5..6.0)
            };
            cylinders.push(Cylinder {
                center_x: a[0] + tx * along + lx * offset,
                center_y: a[1] + ty * along + ly * offset,
                radius: rng.random_range(0.05..0.3),
                z_min: 0.0,
                z_max: rng.random_range(4.0..8.0),
            });
        }
    }

    let scene = Scene {
        ground_z: Some(0.0),
        cylinders,
        walls,
    };
    let spec = TrajectorySpec {
        waypoints: vec![[0.0, 0.0], [side, 0.0], [side, side], [0.0, side], [0.0, 0.0]],
        speed: 1.0,
        scan_rate: 1.0,
        sensor_height: BENCHMARK_SENSOR_HEIGHT,
    };
    (scene, spec)
}
