//! Pipeline configuration: one TOML file drives every stage.
//!
//! ```toml
//! seed = 42
//!
//! [sensor]
//! width = 2048
//! height = 64
//! f_up_deg = 15.0
//! f_down_deg = -10.0
//! max_range = 40.0
//!
//! [extractor]      # ExtractorParams fields
//! [map]            # MapBuilderParams fields
//! [localization]   # LocalizationConfig fields (init_yaw_range in radians)
//! [motion_noise]   # used by the filter and by simulated odometry
//! [observation]    # ObservationModelParams fields
//!
//! [simulation]
//! scene = "urban-block"   # or a scene file path
//! laps = 1
//!
//! [paths]
//! scans = "out/scans"
//! poses = "out/poses.csv"
//! ```
//!
//! Every section is optional and every field has a default. Unknown keys are
//! rejected. Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::ExtractorParams;
use crate::map::MapBuilderParams;
use crate::mcl::{LocalizationConfig, MotionNoise, ObservationModelParams};
use crate::range_image::SensorIntrinsics;
use crate::sim::{self, Scene, TrajectorySpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub width: usize,
    pub height: usize,
    pub f_up_deg: f64,
    pub f_down_deg: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        let k = sim::benchmark_intrinsics();
        Self {
            width: k.width,
            height: k.height,
            f_up_deg: k.f_up.to_degrees(),
            f_down_deg: k.f_down.to_degrees(),
            max_range: k.max_range,
        }
    }
}

impl SensorConfig {
    pub fn intrinsics(&self) -> Result<SensorIntrinsics> {
        SensorIntrinsics::from_degrees(self.width, self.height, self.f_up_deg, self.f_down_deg, self.max_range)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// `"urban-block"` for the built-in benchmark, otherwise a scene file.
    pub scene: String,
    /// Overrides the benchmark loop when set.
    pub waypoints: Option<Vec<[f64; 2]>>,
    /// Times the waypoint polyline is driven.
    pub laps: usize,
    pub speed: f64,
    pub scan_rate: f64,
    pub sensor_height: f64,
    /// Gaussian range noise std (m).
    pub range_noise: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let (_, spec) = sim::urban_block();
        Self {
            scene: "urban-block".into(),
            waypoints: None,
            laps: 1,
            speed: spec.speed,
            scan_rate: spec.scan_rate,
            sensor_height: spec.sensor_height,
            range_noise: 0.0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.laps < 1 {
            return Err(Error::param("simulation.laps", "must be at least 1"));
        }
        if !(self.range_noise >= 0.0) {
            return Err(Error::param("simulation.range_noise", "must be non-negative"));
        }
        self.trajectory_spec().validate()
    }

    /// Scene to render; relative scene paths resolve against `base`.
    pub fn load_scene(&self, base: &Path) -> Result<Scene> {
        if self.scene == "urban-block" {
            Ok(sim::urban_block().0)
        } else {
            Scene::load(&resolve(base, Path::new(&self.scene)))
        }
    }

    /// Trajectory polyline with the laps unrolled.
    pub fn trajectory_spec(&self) -> TrajectorySpec {
        let base = self
            .waypoints
            .clone()
            .unwrap_or_else(|| sim::urban_block().1.waypoints);
        let mut waypoints = base.clone();
        for _ in 1..self.laps {
            waypoints.extend_from_slice(&base[1..]);
        }
        TrajectorySpec {
            waypoints,
            speed: self.speed,
            scan_rate: self.scan_rate,
            sensor_height: self.sensor_height,
        }
    }
}

/// Input and output locations. Commands check for the ones they need.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of `.bin` scans.
    pub scans: Option<PathBuf>,
    /// Ground-truth poses.
    pub poses: Option<PathBuf>,
    /// Odometry as dead-reckoned poses.
    pub odometry: Option<PathBuf>,
    /// Ground-truth pole list.
    pub ground_truth_poles: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    /// Directory receiving label masks and range images.
    pub labels: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub estimates: Option<PathBuf>,
    /// Metrics report; also printed to stdout.
    pub metrics: Option<PathBuf>,
    /// Optional per-step error CSV of trajectory evaluation.
    pub errors: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Map (or detections) against ground-truth poles.
    Poles,
    /// Estimated against ground-truth trajectory.
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    /// Pole matching bound (m).
    pub bound: f64,
    /// Timestamp pairing tolerance (s).
    pub time_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Trajectory,
            bound: 1.0,
            time_tolerance: crate::eval::TIME_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub sensor: SensorConfig,
    pub extractor: ExtractorParams,
    pub map: MapBuilderParams,
    pub localization: LocalizationConfig,
    pub motion_noise: MotionNoise,
    pub observation: ObservationModelParams,
    pub simulation: SimulationConfig,
    pub paths: PathsConfig,
    pub eval: EvalConfig,
    /// Directory relative paths resolve against; set by [`PipelineConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: sim::URBAN_BLOCK_SEED,
            sensor: SensorConfig::default(),
            extractor: ExtractorParams::default(),
            map: MapBuilderParams::default(),
            localization: LocalizationConfig::default(),
            motion_noise: MotionNoise::default(),
            observation: ObservationModelParams::default(),
            simulation: SimulationConfig::default(),
            paths: PathsConfig::default(),
            eval: EvalConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every component's invariants.
    pub fn validate(&self) -> Result<()> {
        self.sensor.intrinsics()?;
        self.extractor.validate()?;
        self.map.validate()?;
        self.localization.validate()?;
        self.motion_noise.validate()?;
        self.observation.validate()?;
        self.simulation.validate()?;
        if !(self.eval.bound > 0.0) {
            return Err(Error::param("eval.bound", "must be positive"));
        }
        if !(self.eval.time_tolerance >= 0.0) {
            return Err(Error::param("eval.time_tolerance", "must be non-negative"));
        }
        Ok(())
    }

    /// Resolved path of a required `[paths]` entry.
    pub fn path(&self, name: &'static str, value: &Option<PathBuf>) -> Result<PathBuf> {
        value
            .as_deref()
            .map(|p| resolve(&self.base_dir, p))
            .ok_or_else(|| Error::Config(format!("missing `paths.{name}`")))
    }

    pub fn optional_path(&self, value: &Option<PathBuf>) -> Option<PathBuf> {
        value.as_deref().map(|p| resolve(&self.base_dir, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.sensor.intrinsics().unwrap(), sim::benchmark_intrinsics());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[extractor]\nrange_treshold = 0.3", "[nope]\n"] {
            let err = PipelineConfig::from_toml_str(text).unwrap_err();
            assert_eq!(err.kind(), crate::error::ErrorKind::Config, "{text}");
        }
    }

    #[test]
    fn invalid_values_fail_validation() {
        let cfg = PipelineConfig::from_toml_str("[observation]\nsigma_d = 0.0").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidParameter { name: "observation.sigma_d", .. })));
        let cfg = PipelineConfig::from_toml_str("[sensor]\nf_up_deg = -20.0").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 7;
        cfg.paths.scans = Some("scans".into());
        cfg.observation.unmatched = crate::mcl::UnmatchedPolicy::Skip;
        let back = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn laps_unroll_waypoints() {
        let sim = SimulationConfig { laps: 2, ..Default::default() };
        let spec = sim.trajectory_spec();
        assert_eq!(spec.waypoints.len(), 9);
        assert!((spec.length() - 400.0).abs() < 1e-9);
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut cfg = PipelineConfig::default();
        cfg.base_dir = PathBuf::from("/data/run");
        cfg.paths.map = Some("map.csv".into());
        cfg.paths.poses = Some("/abs/poses.csv".into());
        assert_eq!(cfg.path("map", &cfg.paths.map).unwrap(), PathBuf::from("/data/run/map.csv"));
        assert_eq!(cfg.path("poses", &cfg.paths.poses).unwrap(), PathBuf::from("/abs/poses.csv"));
        assert!(matches!(cfg.path("scans", &cfg.paths.scans), Err(Error::Config(_))));
    }
}
