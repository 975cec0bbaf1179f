//! Pole-based Monte Carlo localization.
//!
//! Each particle is a planar pose hypothesis. Odometry increments move the
//! particles with noise; detected poles, moved into the global frame through
//! each particle's pose, are matched to the nearest map pole and weighted by
//! `exp(−d² / 2σ²) + ε`; the set is resampled (systematic) once the
//! effective sample size drops below a fraction of the particle count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::{extract_poles, ExtractorParams};
use crate::geometry::{wrap_angle, Pose2D, PoseDelta};
use crate::map::PoleMap;
use crate::range_image::RangeImage;

/// Odometry noise: standard deviations grow with the motion itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionNoise {
    /// Translation std per meter traveled.
    pub alpha_trans: f64,
    /// Rotation std per radian turned.
    pub alpha_rot: f64,
    /// Rotation std per meter traveled.
    pub alpha_cross: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self {
            alpha_trans: 0.05,
            alpha_rot: 0.05,
            alpha_cross: 0.01,
        }
    }
}

impl MotionNoise {
    pub fn zero() -> Self {
        Self {
            alpha_trans: 0.0,
            alpha_rot: 0.0,
            alpha_cross: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("motion_noise.alpha_trans", self.alpha_trans),
            ("motion_noise.alpha_rot", self.alpha_rot),
            ("motion_noise.alpha_cross", self.alpha_cross),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn translation_std(&self, delta: &PoseDelta) -> f64 {
        self.alpha_trans * delta.translation()
    }

    pub fn rotation_std(&self, delta: &PoseDelta) -> f64 {
        self.alpha_rot * delta.dtheta.abs() + self.alpha_cross * delta.translation()
    }
}

/// Draws a noisy version of an odometry increment.
pub fn sample_motion<R: Rng>(delta: &PoseDelta, noise: &MotionNoise, rng: &mut R) -> PoseDelta {
    let st = noise.translation_std(delta);
    let sr = noise.rotation_std(delta);
    let n1: f64 = StandardNormal.sample(rng);
    let n2: f64 = StandardNormal.sample(rng);
    let n3: f64 = StandardNormal.sample(rng);
    PoseDelta {
        dx: delta.dx + st * n1,
        dy: delta.dy + st * n2,
        dtheta: delta.dtheta + sr * n3,
    }
}

/// What an observed pole without a map match within the bound contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnmatchedPolicy {
    /// Factor 1: the product runs over matched poles only.
    Skip,
    /// Factor ε, the limit of `exp(−d²/2σ²) + ε` for a far-away match.
    Epsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationModelParams {
    /// Pole position uncertainty σ_d (m).
    pub sigma_d: f64,
    /// Floor ε for poles that are not part of the map.
    pub epsilon: f64,
    /// Maximum center distance for a match (m).
    pub match_bound: f64,
    pub unmatched: UnmatchedPolicy,
}

impl Default for ObservationModelParams {
    fn default() -> Self {
        Self {
            sigma_d: 0.2,
            epsilon: 0.01,
            match_bound: 1.0,
            unmatched: UnmatchedPolicy::Epsilon,
        }
    }
}

impl ObservationModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_d > 0.0) {
            return Err(Error::param("observation.sigma_d", "must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("observation.epsilon", "must be positive"));
        }
        if !(self.match_bound > 0.0) {
            return Err(Error::param("observation.match_bound", "must be positive"));
        }
        Ok(())
    }

    /// Likelihood factor of one matched pole at center distance `d`.
    pub fn pole_factor(&self, d: f64) -> f64 {
        (-0.5 * d * d / (self.sigma_d * self.sigma_d)).exp() + self.epsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub particle_count: usize,
    /// Radius of the initial position disk (m).
    pub init_radius: f64,
    /// Half-width of the initial yaw interval (rad).
    pub init_yaw_range: f64,
    /// Resample when N_eff falls below this fraction of the particle count.
    pub resample_neff_fraction: f64,
    /// Fraction of highest-weight particles averaged for the estimate.
    pub estimate_top_fraction: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            particle_count: 1000,
            init_radius: 2.5,
            init_yaw_range: 5f64.to_radians(),
            resample_neff_fraction: 0.5,
            estimate_top_fraction: 0.1,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particle_count < 1 {
            return Err(Error::param("localization.particle_count", "must be at least 1"));
        }
        if !(self.init_radius >= 0.0) || !(self.init_yaw_range >= 0.0) {
            return Err(Error::param("localization.init_radius/init_yaw_range", "must be non-negative"));
        }
        for (name, v) in [
            ("localization.resample_neff_fraction", self.resample_neff_fraction),
            ("localization.estimate_top_fraction", self.estimate_top_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(name, format!("must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose2D,
    pub weight: f64,
}

/// Fixed-size particle population plus the master RNG all sampling derives from.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    rng: ChaCha8Rng,
}

impl ParticleSet {
    pub fn from_particles(particles: Vec<Particle>, seed: u64) -> Self {
        Self {
            particles,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.particles.iter().map(|p| p.weight)
    }

    /// Weight-averaged pose over the whole set (circular heading mean).
    pub fn weighted_mean(&self) -> Pose2D {
        mean_pose(self.particles.iter().map(|p| (&p.pose, p.weight)))
    }
}

/// Uniform random planar offset on a disk of the given radius.
pub fn sample_disk<R: Rng>(rng: &mut R, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let a = 2.0 * PI * rng.random::<f64>();
    (r * a.cos(), r * a.sin())
}

/// Uniform positions on the disk around `anchor`, yaw uniform in ±`init_yaw_range`.
pub fn init_particles(config: &LocalizationConfig, anchor: &Pose2D, seed: u64) -> ParticleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.particle_count;
    let particles = (0..n)
        .map(|_| {
            let (dx, dy) = sample_disk(&mut rng, config.init_radius);
            let yaw = if config.init_yaw_range > 0.0 {
                rng.random_range(-config.init_yaw_range..=config.init_yaw_range)
            } else {
                0.0
            };
            Particle {
                pose: Pose2D {
                    x: anchor.x + dx,
                    y: anchor.y + dy,
                    theta: wrap_angle(anchor.theta + yaw),
                    timestamp: anchor.timestamp,
                },
                weight: 1.0 / n as f64,
            }
        })
        .collect();
    ParticleSet { particles, rng }
}

/// Propagates every particle through a noisy copy of `delta`. Weights are unchanged.
///
/// Particle `i` draws from its own ChaCha stream keyed by a value from the
/// master RNG, so the result does not depend on thread scheduling.
pub fn motion_update(set: &mut ParticleSet, delta: &PoseDelta, noise: &MotionNoise) {
    let key: u64 = set.rng.random();
    set.particles.par_iter_mut().enumerate().for_each(|(i, p)| {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(i as u64);
        let noisy = sample_motion(delta, noise, &mut rng);
        p.pose = p.pose.compose(&noisy);
    });
}

/// Log-likelihood of the body-frame observations for one particle pose.
fn log_likelihood(pose: &Pose2D, observed: &[(f64, f64)], map: &PoleMap, params: &ObservationModelParams) -> f64 {
    observed
        .iter()
        .map(|&(bx, by)| {
            let (gx, gy) = pose.transform_point(bx, by);
            match map.nearest_index(gx, gy, params.match_bound) {
                Some((_, d)) => params.pole_factor(d).ln(),
                None => match params.unmatched {
                    UnmatchedPolicy::Skip => 0.0,
                    UnmatchedPolicy::Epsilon => params.epsilon.ln(),
                },
            }
        })
        .sum()
}

/// Multiplies each weight by the pole likelihood and renormalizes.
///
/// `observed` holds pole centers in the body frame.
pub fn observation_update(
    set: &mut ParticleSet,
    observed: &[(f64, f64)],
    map: &PoleMap,
    params: &ObservationModelParams,
) -> Result<()> {
    let log_w: Vec<f64> = set
        .particles
        .par_iter()
        .map(|p| p.weight.ln() + log_likelihood(&p.pose, observed, map, params))
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights("all particle weights are zero"));
    }
    let mut sum = 0.0;
    for (p, lw) in set.particles.iter_mut().zip(&log_w) {
        p.weight = (lw - max).exp();
        sum += p.weight;
    }
    for p in set.particles.iter_mut() {
        p.weight /= sum;
    }
    Ok(())
}

/// N_eff = 1 / Σ w² for normalized weights.
pub fn effective_sample_size(particles: &[Particle]) -> Result<f64> {
    let sum: f64 = particles.iter().map(|p| p.weight).sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateWeights("weights sum to zero"));
    }
    let sq: f64 = particles.iter().map(|p| (p.weight / sum).powi(2)).sum();
    Ok(1.0 / sq)
}

/// Systematic (low-variance) resampling; weights become uniform.
pub fn resample(set: &mut ParticleSet) -> Result<()> {
    let n = set.particles.len();
    if n == 0 {
        return Ok(());
    }
    let sum: f64 = set.weights().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateWeights("weights sum to zero"));
    }
    let step = 1.0 / n as f64;
    let offset = set.rng.random::<f64>() * step;
    let indices = systematic_indices(set.particles.iter().map(|p| p.weight / sum), n, offset);
    let old = std::mem::take(&mut set.particles);
    set.particles = indices
        .into_iter()
        .map(|i| Particle {
            pose: old[i].pose,
            weight: step,
        })
        .collect();
    Ok(())
}

/// Source index for each of `n` evenly spaced pointers starting at `offset` ∈ [0, 1/n).
pub fn systematic_indices(weights: impl IntoIterator<Item = f64>, n: usize, offset: f64) -> Vec<usize> {
    let weights: Vec<f64> = weights.into_iter().collect();
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights.first().copied().unwrap_or(0.0);
    let mut i = 0;
    for k in 0..n {
        let pointer = offset + k as f64 / n as f64;
        while pointer >= cumulative && i + 1 < weights.len() {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

fn mean_pose<'a>(items: impl Iterator<Item = (&'a Pose2D, f64)>) -> Pose2D {
    let (mut sx, mut sy, mut ss, mut sc, mut sw, mut st) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, w) in items {
        sx += w * p.x;
        sy += w * p.y;
        ss += w * p.theta.sin();
        sc += w * p.theta.cos();
        st += w * p.timestamp;
        sw += w;
    }
    Pose2D {
        x: sx / sw,
        y: sy / sw,
        theta: wrap_angle(ss.atan2(sc)),
        timestamp: st / sw,
    }
}

/// Mean pose of the ⌈fraction·n⌉ highest-weight particles (ties by index).
pub fn estimate_pose(particles: &[Particle], top_fraction: f64) -> Pose2D {
    let n = particles.len();
    let k = ((top_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| particles[b].weight.total_cmp(&particles[a].weight));
    mean_pose(order[..k].iter().map(|&i| (&particles[i].pose, 1.0)))
}

/// Result of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub estimate: Pose2D,
    pub detections: usize,
    pub n_eff: f64,
    pub resampled: bool,
}

/// A running localization session.
#[derive(Debug, Clone)]
pub struct Localizer {
    pub set: ParticleSet,
    pub config: LocalizationConfig,
    pub noise: MotionNoise,
    pub observation: ObservationModelParams,
    pub extractor: ExtractorParams,
}

impl Localizer {
    pub fn new(
        anchor: &Pose2D,
        seed: u64,
        config: LocalizationConfig,
        noise: MotionNoise,
        observation: ObservationModelParams,
        extractor: ExtractorParams,
    ) -> Result<Self> {
        config.validate()?;
        noise.validate()?;
        observation.validate()?;
        extractor.validate()?;
        Ok(Self {
            set: init_particles(&config, anchor, seed),
            config,
            noise,
            observation,
            extractor,
        })
    }

    /// Motion, extraction, weighting, estimate, then resampling when N_eff is low.
    pub fn step(&mut self, delta: &PoseDelta, scan: &RangeImage, map: &PoleMap) -> Result<StepOutput> {
        let poles: Vec<(f64, f64)> = extract_poles(scan, &self.extractor)
            .iter()
            .map(|p| (p.center_x, p.center_y))
            .collect();
        self.step_with_observations(delta, &poles, map)
    }

    /// [`Localizer::step`] with pre-extracted body-frame pole centers.
    pub fn step_with_observations(
        &mut self,
        delta: &PoseDelta,
        observed: &[(f64, f64)],
        map: &PoleMap,
    ) -> Result<StepOutput> {
        motion_update(&mut self.set, delta, &self.noise);
        observation_update(&mut self.set, observed, map, &self.observation)?;
        // the estimate uses the weights; after resampling they are uniform
        let estimate = estimate_pose(&self.set.particles, self.config.estimate_top_fraction);
        let n_eff = effective_sample_size(&self.set.particles)?;
        let resampled = n_eff < self.config.resample_neff_fraction * self.set.len() as f64;
        if resampled {
            resample(&mut self.set)?;
        }
        Ok(StepOutput {
            estimate,
            detections: observed.len(),
            n_eff,
            resampled,
        })
    }

    /// Estimate from the current weights without moving the filter.
    pub fn estimate(&self) -> Pose2D {
        estimate_pose(&self.set.particles, self.config.estimate_top_fraction)
    }
}
