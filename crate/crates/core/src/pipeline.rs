//! File-in, file-out stages behind the `poleloc` subcommands.
//!
//! Each command validates the whole configuration and resolves every path
//! it needs before it creates or overwrites anything.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{EvalMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::eval;
use crate::extractor::{export_label_mask, extract_poles};
use crate::geometry::{Pose2D, PoseDelta};
use crate::io::{self, DetectionRecord, PoleRecord};
use crate::map::build_map_with;
use crate::mcl::Localizer;
use crate::range_image::{project_scan, RangeImage, SensorIntrinsics};
use crate::sim::{dead_reckon, generate_trajectory, noisy_odometry, render_scan, RangeNoise};

/// Runs `f` on a pool of `jobs` threads (all cores when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::param("--jobs", "must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn load_image(path: &Path, k: &SensorIntrinsics) -> Result<RangeImage> {
    Ok(project_scan(&io::read_scan(path)?, k))
}

fn scan_files(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.path("scans", &cfg.paths.scans)?;
    let files = io::list_scans(&dir)?;
    if files.is_empty() {
        return Err(Error::Format {
            kind: "scan directory",
            path: dir,
            reason: "no .bin files".into(),
        });
    }
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulateSummary {
    pub scans: usize,
    pub poles: usize,
}

/// Renders the configured scene along the configured trajectory.
///
/// Writes `paths.scans/NNNNNN.bin` and `paths.poses`, plus `paths.odometry`
/// (noisy dead reckoning) and `paths.ground_truth_poles` when set.
pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<SimulateSummary> {
    cfg.validate()?;
    let k = cfg.sensor.intrinsics()?;
    let scene = cfg.simulation.load_scene(&cfg.base_dir)?;
    scene.validate()?;
    let spec = cfg.simulation.trajectory_spec();
    let scans_dir = cfg.path("scans", &cfg.paths.scans)?;
    let poses_path = cfg.path("poses", &cfg.paths.poses)?;
    let odometry_path = cfg.optional_path(&cfg.paths.odometry);
    let gt_path = cfg.optional_path(&cfg.paths.ground_truth_poles);

    let poses = generate_trajectory(&spec)?;
    create_dir(&scans_dir)?;
    let noise_std = cfg.simulation.range_noise;
    poses
        .par_iter()
        .enumerate()
        .try_for_each(|(i, pose)| {
            // stream 0 feeds the odometry, stream i + 1 the range noise of scan i
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let noise = (noise_std > 0.0).then_some(RangeNoise {
                std: noise_std,
                rng: &mut rng,
            });
            let img = render_scan(&scene, pose, spec.sensor_height, &k, noise);
            io::write_scan(&scans_dir.join(format!("{i:06}.bin")), &img.to_points())
        })?;

    create_parent(&poses_path)?;
    io::write_poses(&poses_path, &poses)?;
    if let Some(path) = odometry_path {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let deltas = noisy_odometry(&poses, &cfg.motion_noise, &mut rng);
        let stamps: Vec<f64> = poses.iter().map(|p| p.timestamp).collect();
        create_parent(&path)?;
        io::write_poses(&path, &dead_reckon(poses[0], &deltas, Some(&stamps)))?;
    }
    if let Some(path) = gt_path {
        let records: Vec<PoleRecord> = scene
            .cylinders
            .iter()
            .map(|c| PoleRecord {
                center_x: c.center_x,
                center_y: c.center_y,
                radius: c.radius,
            })
            .collect();
        create_parent(&path)?;
        io::write_poles(&path, &records)?;
    }
    log::info!("simulated {} scans of {} poles", poses.len(), scene.cylinders.len());
    Ok(SimulateSummary {
        scans: poses.len(),
        poles: scene.cylinders.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractSummary {
    pub scans: usize,
    pub detections: usize,
    pub label_files: usize,
}

/// Extracts poles from every scan into `paths.detections` (scan frame).
/// With `labels`, also writes one `.plbl` mask per scan into `paths.labels`.
pub fn cmd_extract(cfg: &PipelineConfig, labels: bool) -> Result<ExtractSummary> {
    cfg.validate()?;
    let k = cfg.sensor.intrinsics()?;
    let files = scan_files(cfg)?;
    let out = cfg.path("detections", &cfg.paths.detections)?;
    let labels_dir = if labels {
        Some(cfg.path("labels", &cfg.paths.labels)?)
    } else {
        None
    };
    if let Some(dir) = &labels_dir {
        create_dir(dir)?;
    }

    let per_scan: Vec<Vec<DetectionRecord>> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let start = Instant::now();
            let img = load_image(path, &k)?;
            let poles = extract_poles(&img, &cfg.extractor);
            if let Some(dir) = &labels_dir {
                let mask = export_label_mask(&img, &poles);
                io::write_label_mask(&dir.join(format!("{}.plbl", file_stem(path))), &mask)?;
            }
            log::info!(
                "scan {i}: {} poles in {:.1} ms",
                poles.len(),
                start.elapsed().as_secs_f64() * 1e3
            );
            Ok(poles
                .iter()
                .map(|p| DetectionRecord {
                    scan_id: i,
                    center_x: p.center_x,
                    center_y: p.center_y,
                    radius: p.radius,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<DetectionRecord> = per_scan.into_iter().flatten().collect();
    create_parent(&out)?;
    io::write_detections(&out, &rows)?;
    Ok(ExtractSummary {
        scans: files.len(),
        detections: rows.len(),
        label_files: if labels { files.len() } else { 0 },
    })
}

/// Builds the pole map from scans and ground-truth poses into `paths.map`.
pub fn cmd_map(cfg: &PipelineConfig) -> Result<usize> {
    cfg.validate()?;
    let k = cfg.sensor.intrinsics()?;
    let files = scan_files(cfg)?;
    let poses = io::read_poses(&cfg.path("poses", &cfg.paths.poses)?)?;
    let out = cfg.path("map", &cfg.paths.map)?;
    let map = build_map_with(
        &poses,
        files.len(),
        |i| load_image(&files[i], &k),
        &cfg.extractor,
        &cfg.map,
    )?;
    create_parent(&out)?;
    io::write_map(&out, &map)?;
    log::info!("map with {} poles", map.len());
    Ok(map.len())
}

/// Runs the particle filter over all scans into `paths.estimates`.
///
/// Odometry is read as dead-reckoned poses; the filter consumes the
/// increments between consecutive rows. Particles start around the first
/// ground-truth pose when `paths.poses` is set, otherwise around the first
/// odometry pose.
pub fn cmd_localize(cfg: &PipelineConfig) -> Result<Vec<Pose2D>> {
    cfg.validate()?;
    let k = cfg.sensor.intrinsics()?;
    let files = scan_files(cfg)?;
    let odometry = io::read_poses(&cfg.path("odometry", &cfg.paths.odometry)?)?;
    let map = io::read_map(&cfg.path("map", &cfg.paths.map)?)?;
    let out = cfg.path("estimates", &cfg.paths.estimates)?;
    if odometry.len() != files.len() {
        return Err(Error::Alignment(format!(
            "{} scans but {} odometry poses",
            files.len(),
            odometry.len()
        )));
    }
    let anchor = match cfg.optional_path(&cfg.paths.poses) {
        Some(p) => *io::read_poses(&p)?
            .first()
            .ok_or_else(|| Error::Alignment("ground-truth pose file is empty".into()))?,
        None => odometry[0],
    };

    let observations: Vec<Vec<(f64, f64)>> = files
        .par_iter()
        .map(|path| {
            let img = load_image(path, &k)?;
            Ok(extract_poles(&img, &cfg.extractor)
                .iter()
                .map(|p| (p.center_x, p.center_y))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut loc = Localizer::new(
        &anchor,
        cfg.seed,
        cfg.localization,
        cfg.motion_noise,
        cfg.observation,
        cfg.extractor,
    )?;
    let mut estimates = Vec::with_capacity(files.len());
    for (i, obs) in observations.iter().enumerate() {
        let delta = if i == 0 {
            PoseDelta::default()
        } else {
            odometry[i - 1].delta_to(&odometry[i])
        };
        let step = loc.step_with_observations(&delta, obs, &map)?;
        log::debug!(
            "step {i}: {} poles, n_eff {:.1}{}",
            step.detections,
            step.n_eff,
            if step.resampled { ", resampled" } else { "" }
        );
        estimates.push(step.estimate.with_timestamp(odometry[i].timestamp));
    }
    create_parent(&out)?;
    io::write_poses(&out, &estimates)?;
    Ok(estimates)
}

/// Computes the metrics report of `eval.mode`, writes it to `paths.metrics`
/// when set and returns it.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<String> {
    cfg.validate()?;
    let metrics = cfg.optional_path(&cfg.paths.metrics);
    let report = match cfg.eval.mode {
        EvalMode::Poles => {
            let map = io::read_map(&cfg.path("map", &cfg.paths.map)?)?;
            let truth = io::read_poles(&cfg.path("ground_truth_poles", &cfg.paths.ground_truth_poles)?)?;
            let est: Vec<(f64, f64)> = map.poles().iter().map(|p| (p.center_x, p.center_y)).collect();
            let gt: Vec<(f64, f64)> = truth.iter().map(|p| (p.center_x, p.center_y)).collect();
            eval::detection_report(&eval::match_poles(&est, &gt, cfg.eval.bound), cfg.eval.bound)
        }
        EvalMode::Trajectory => {
            let est = io::read_poses(&cfg.path("estimates", &cfg.paths.estimates)?)?;
            let truth = io::read_poses(&cfg.path("poses", &cfg.paths.poses)?)?;
            let errors_path = cfg.optional_path(&cfg.paths.errors);
            let (errors, pairs) = eval::evaluate_trajectory(&est, &truth, cfg.eval.time_tolerance)?;
            if let Some(path) = errors_path {
                create_parent(&path)?;
                write_step_errors(&path, &pairs)?;
            }
            eval::trajectory_report(&errors, pairs.len())
        }
    };
    if let Some(path) = metrics {
        create_parent(&path)?;
        fs::write(&path, &report).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

fn write_step_errors(path: &Path, pairs: &[(Pose2D, Pose2D)]) -> Result<()> {
    let mut text = String::from("timestamp,pos_error,ang_error_deg\n");
    for (e, t) in pairs {
        let (p, a) = eval::step_errors(e, t);
        text.push_str(&format!("{:.6},{p:.6},{a:.6}\n", t.timestamp));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `NAME.prim` (range image) and `NAME.plbl` (pole mask) per scan into `paths.labels`.
pub fn cmd_export_labels(cfg: &PipelineConfig) -> Result<usize> {
    cfg.validate()?;
    let k = cfg.sensor.intrinsics()?;
    let files = scan_files(cfg)?;
    let dir = cfg.path("labels", &cfg.paths.labels)?;
    create_dir(&dir)?;
    files.par_iter().try_for_each(|path| {
        let img = load_image(path, &k)?;
        let mask = export_label_mask(&img, &extract_poles(&img, &cfg.extractor));
        let stem = file_stem(path);
        io::write_range_image(&dir.join(format!("{stem}.prim")), &img)?;
        io::write_label_mask(&dir.join(format!("{stem}.plbl")), &mask)
    })?;
    Ok(files.len())
}
