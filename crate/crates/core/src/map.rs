//! Global pole map construction from posed scans.
//!
//! The trajectory is cut into sections of equal arc length and only the
//! middle scan of every section is run through the extractor. Detections are
//! moved into the global frame, merged with nearby candidates by running
//! average, and a counting model keeps only candidates seen in enough
//! (by default consecutive) sections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::{extract_poles, ExtractorParams, Pole};
use crate::geometry::Pose2D;
use crate::kdtree::KdTree2;
use crate::range_image::RangeImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalPole {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    /// Number of sections the pole was observed in.
    pub hit_count: u32,
    pub last_section: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapBuilderParams {
    pub section_length: f64,
    pub merge_radius: f64,
    pub min_hit_count: u32,
    pub require_consecutive: bool,
}

impl Default for MapBuilderParams {
    fn default() -> Self {
        Self {
            section_length: 10.0,
            merge_radius: 0.5,
            min_hit_count: 2,
            require_consecutive: true,
        }
    }
}

impl MapBuilderParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.section_length > 0.0) {
            return Err(Error::param("map.section_length", "must be positive"));
        }
        if !(self.merge_radius > 0.0) {
            return Err(Error::param("map.merge_radius", "must be positive"));
        }
        if self.min_hit_count < 2 {
            return Err(Error::param("map.min_hit_count", "must be at least 2"));
        }
        Ok(())
    }
}

/// Inclusive pose index range of one trajectory section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Section {
    pub start: usize,
    pub end: usize,
    pub middle: usize,
}

/// Cuts the trajectory into consecutive sections of `section_length` arc length.
///
/// Neighboring sections share their boundary pose. The last section may be
/// shorter. The middle pose is the one closest to half the section's arc length.
pub fn split_trajectory(poses: &[Pose2D], section_length: f64) -> Vec<Section> {
    if poses.is_empty() {
        return Vec::new();
    }
    let mut cumulative = Vec::with_capacity(poses.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in poses.windows(2) {
        acc += w[0].distance_to(&w[1]);
        cumulative.push(acc);
    }

    let mut sections = Vec::new();
    let mut start = 0;
    for i in 1..poses.len() {
        if cumulative[i] - cumulative[start] >= section_length - 1e-9 {
            sections.push(make_section(&cumulative, start, i));
            start = i;
        }
    }
    if start + 1 < poses.len() || sections.is_empty() {
        sections.push(make_section(&cumulative, start, poses.len() - 1));
    }
    sections
}

fn make_section(cumulative: &[f64], start: usize, end: usize) -> Section {
    let half = 0.5 * (cumulative[start] + cumulative[end]);
    let middle = (start..=end)
        .min_by(|&a, &b| {
            (cumulative[a] - half)
                .abs()
                .total_cmp(&(cumulative[b] - half).abs())
        })
        .unwrap_or(start);
    Section { start, end, middle }
}

/// Moves a scan-frame detection into the global frame.
pub fn local_to_global(pole: &Pole, pose: &Pose2D) -> GlobalPole {
    let (x, y) = pose.transform_point(pole.center_x, pole.center_y);
    GlobalPole {
        center_x: x,
        center_y: y,
        radius: pole.radius,
        hit_count: 1,
        last_section: 0,
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    center_x: f64,
    center_y: f64,
    radius: f64,
    detections: u32,
    hit_count: u32,
    last_section: usize,
    run: u32,
    best_run: u32,
}

/// Merges per-section detections and applies the counting model.
#[derive(Debug, Clone)]
pub struct MapAccumulator {
    params: MapBuilderParams,
    candidates: Vec<Candidate>,
}

impl MapAccumulator {
    pub fn new(params: MapBuilderParams) -> Self {
        Self {
            params,
            candidates: Vec::new(),
        }
    }

    /// Adds the global-frame detections of section `section`. Sections must arrive in increasing order.
    pub fn add_section(&mut self, section: usize, detections: &[GlobalPole]) {
        let r2 = self.params.merge_radius * self.params.merge_radius;
        for det in detections {
            let nearest = self
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| (i, (c.center_x - det.center_x).powi(2) + (c.center_y - det.center_y).powi(2)))
                .filter(|&(_, d2)| d2 <= r2)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match nearest {
                Some((i, _)) => {
                    let c = &mut self.candidates[i];
                    c.detections += 1;
                    let n = c.detections as f64;
                    c.center_x += (det.center_x - c.center_x) / n;
                    c.center_y += (det.center_y - c.center_y) / n;
                    c.radius += (det.radius - c.radius) / n;
                    if c.last_section != section {
                        c.hit_count += 1;
                        c.run = if c.last_section + 1 == section { c.run + 1 } else { 1 };
                        c.best_run = c.best_run.max(c.run);
                        c.last_section = section;
                    }
                }
                None => self.candidates.push(Candidate {
                    center_x: det.center_x,
                    center_y: det.center_y,
                    radius: det.radius,
                    detections: 1,
                    hit_count: 1,
                    last_section: section,
                    run: 1,
                    best_run: 1,
                }),
            }
        }
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    /// Applies the counting filter and builds the spatial index.
    pub fn finalize(self) -> PoleMap {
        let MapAccumulator { params, candidates } = self;
        let mut kept: Vec<(GlobalPole, u32)> = Vec::new();
        let r2 = params.merge_radius * params.merge_radius;
        for c in candidates {
            let score = if params.require_consecutive { c.best_run } else { c.hit_count };
            if score < params.min_hit_count {
                continue;
            }
            let pole = GlobalPole {
                center_x: c.center_x,
                center_y: c.center_y,
                radius: c.radius,
                hit_count: c.hit_count,
                last_section: c.last_section,
            };
            // running averages can drift two candidates into each other's radius
            let close = kept.iter_mut().find(|(p, _)| {
                (p.center_x - pole.center_x).powi(2) + (p.center_y - pole.center_y).powi(2) < r2
            });
            match close {
                Some((p, weight)) => {
                    let (a, b) = (*weight as f64, c.detections as f64);
                    p.center_x = (p.center_x * a + pole.center_x * b) / (a + b);
                    p.center_y = (p.center_y * a + pole.center_y * b) / (a + b);
                    p.radius = (p.radius * a + pole.radius * b) / (a + b);
                    p.hit_count = p.hit_count.max(pole.hit_count);
                    p.last_section = p.last_section.max(pole.last_section);
                    *weight += c.detections;
                }
                None => kept.push((pole, c.detections)),
            }
        }
        PoleMap::new(kept.into_iter().map(|(p, _)| p).collect())
    }
}

/// Finalized landmark map with a k-d tree over pole centers.
#[derive(Debug, Clone, Default)]
pub struct PoleMap {
    poles: Vec<GlobalPole>,
    index: KdTree2,
}

impl PoleMap {
    pub fn new(poles: Vec<GlobalPole>) -> Self {
        let centers: Vec<[f64; 2]> = poles.iter().map(|p| [p.center_x, p.center_y]).collect();
        Self {
            index: KdTree2::build(&centers),
            poles,
        }
    }

    pub fn poles(&self) -> &[GlobalPole] {
        &self.poles
    }

    pub fn len(&self) -> usize {
        self.poles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty()
    }

    /// Nearest pole index and distance within `bound`.
    pub fn nearest_index(&self, x: f64, y: f64, bound: f64) -> Option<(usize, f64)> {
        self.index.nearest_within([x, y], bound)
    }
}

pub fn nearest_pole(map: &PoleMap, query: (f64, f64), bound: f64) -> Option<&GlobalPole> {
    map.nearest_index(query.0, query.1, bound).map(|(i, _)| &map.poles[i])
}

/// Builds the map, loading the middle scan of each section on demand.
///
/// `scan_count` must equal `poses.len()`.
pub fn build_map_with<F>(
    poses: &[Pose2D],
    scan_count: usize,
    mut load_scan: F,
    extractor: &ExtractorParams,
    params: &MapBuilderParams,
) -> Result<PoleMap>
where
    F: FnMut(usize) -> Result<RangeImage>,
{
    params.validate()?;
    extractor.validate()?;
    if scan_count != poses.len() {
        return Err(Error::Alignment(format!(
            "{} scans but {} poses",
            scan_count,
            poses.len()
        )));
    }
    let mut acc = MapAccumulator::new(*params);
    for (k, section) in split_trajectory(poses, params.section_length).iter().enumerate() {
        let scan = load_scan(section.middle)?;
        let pose = &poses[section.middle];
        let detections: Vec<GlobalPole> = extract_poles(&scan, extractor)
            .iter()
            .map(|p| local_to_global(p, pose))
            .collect();
        log::debug!("section {k}: scan {} -> {} poles", section.middle, detections.len());
        acc.add_section(k, &detections);
    }
    Ok(acc.finalize())
}

pub fn build_map(
    scans: &[RangeImage],
    poses: &[Pose2D],
    extractor: &ExtractorParams,
    params: &MapBuilderParams,
) -> Result<PoleMap> {
    build_map_with(poses, scans.len(), |i| Ok(scans[i].clone()), extractor, params)
}

/// Indices of `candidates` lying at least `distance` from every pose in `visited`
/// (used to add scans of unseen areas from later sessions).
pub fn select_unvisited(visited: &[Pose2D], candidates: &[Pose2D], distance: f64) -> Vec<usize> {
    let tree = KdTree2::build(&visited.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>());
    candidates
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            tree.nearest_within([p.x, p.y], distance)
                .is_none_or(|(_, d)| d >= distance)
        })
        .map(|(i, _)| i)
        .collect()
}
