//! Geometric pole extraction on range images.
//!
//! The pipeline has three stages:
//!
//! 1. [`cluster_range_image`] grows regions over valid pixels. A neighbor
//!    (left, right or below; columns wrap around the azimuth seam) joins
//!    when its range differs from the current pixel by less than the range
//!    threshold. Regions smaller than the pixel threshold are dropped.
//! 2. [`filter_2d`] keeps tall-and-narrow regions that sit in front of
//!    their surroundings.
//! 3. [`filter_3d_and_fit`] applies height gates, fits a circle to the
//!    planar coordinates, checks the radius bounds and rejects candidates
//!    with returns at similar range right next to them (free-space test).
//!
//! [`extract_poles`] runs all three. [`export_label_mask`] turns the
//! accepted footprints into a per-pixel pole mask.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::circle::fit_circle;
use crate::error::{Error, Result};
use crate::range_image::RangeImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorParams {
    /// Maximum range difference between neighboring pixels of one cluster (m).
    pub range_threshold: f64,
    /// Clusters with fewer pixels are discarded.
    pub min_cluster_pixels: usize,
    /// Minimum vertical extent max(z) − min(z) (m).
    pub min_height_span: f64,
    /// A pole's highest point must lie above this sensor-frame z (m).
    pub min_top_height: f64,
    /// A pole's lowest point must lie below this sensor-frame z (m).
    pub max_bottom_height: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Fraction of cluster pixels that must be nearer than an outside neighbor.
    pub foreground_ratio: f64,
    /// Reject when free-space violations reach this fraction of the cluster size.
    pub free_space_ratio: f64,
    /// Half-width of the range band around the pole that counts as a violation (m).
    pub free_space_margin: f64,
    /// Columns inspected on each side of the cluster's bounding box.
    pub free_space_columns: usize,
}

impl Default for ExtractorParams {
    fn default() -> Self {
        Self {
            range_threshold: 0.3,
            min_cluster_pixels: 3,
            min_height_span: 1.0,
            min_top_height: 1.0,
            max_bottom_height: 2.0,
            min_radius: 0.02,
            max_radius: 0.4,
            foreground_ratio: 0.5,
            free_space_ratio: 0.2,
            free_space_margin: 0.5,
            free_space_columns: 2,
        }
    }
}

impl ExtractorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_threshold > 0.0) {
            return Err(Error::param("extractor.range_threshold", "must be positive"));
        }
        if self.min_cluster_pixels < 1 {
            return Err(Error::param("extractor.min_cluster_pixels", "must be at least 1"));
        }
        if !(self.min_radius >= 0.0 && self.min_radius < self.max_radius) {
            return Err(Error::param(
                "extractor.min_radius/max_radius",
                format!("need 0 <= min_radius < max_radius, got {} / {}", self.min_radius, self.max_radius),
            ));
        }
        for (name, v) in [
            ("extractor.foreground_ratio", self.foreground_ratio),
            ("extractor.free_space_ratio", self.free_space_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if !(self.min_height_span >= 0.0) {
            return Err(Error::param("extractor.min_height_span", "must be non-negative"));
        }
        if !(self.free_space_margin >= 0.0) {
            return Err(Error::param("extractor.free_space_margin", "must be non-negative"));
        }
        if !self.min_top_height.is_finite() || !self.max_bottom_height.is_finite() {
            return Err(Error::param("extractor.min_top_height/max_bottom_height", "must be finite"));
        }
        Ok(())
    }
}

/// A connected region of the range image.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    /// (u, v) pixels in discovery order.
    pub pixels: Vec<(usize, usize)>,
    /// First column of the bounding box; the box may wrap past column w − 1.
    pub u_start: usize,
    /// Bounding-box width in columns.
    pub width: usize,
    pub v_min: usize,
    pub v_max: usize,
}

impl Cluster {
    fn new(id: usize, pixels: Vec<(usize, usize)>, image_width: usize) -> Self {
        let v_min = pixels.iter().map(|p| p.1).min().unwrap_or(0);
        let v_max = pixels.iter().map(|p| p.1).max().unwrap_or(0);
        let (u_start, width) = circular_span(pixels.iter().map(|p| p.0), image_width);
        Self {
            id,
            pixels,
            u_start,
            width,
            v_min,
            v_max,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.v_max - self.v_min + 1
    }

    /// Last column of the bounding box (may be smaller than `u_start` when wrapping).
    pub fn u_end(&self, image_width: usize) -> usize {
        (self.u_start + self.width - 1) % image_width
    }
}

/// Smallest circular column interval covering `cols`, as (start, width).
fn circular_span(cols: impl Iterator<Item = usize>, w: usize) -> (usize, usize) {
    let mut cols: Vec<usize> = cols.collect();
    cols.sort_unstable();
    cols.dedup();
    let (Some(&first), Some(&last)) = (cols.first(), cols.last()) else {
        return (0, 0);
    };
    // Start with the gap across the seam; prefer it on ties so ordinary
    // clusters keep a non-wrapping box.
    let mut best_gap = first + w - last;
    let mut start = first;
    for pair in cols.windows(2) {
        let gap = pair[1] - pair[0];
        if gap > best_gap {
            best_gap = gap;
            start = pair[1];
        }
    }
    (start, w - best_gap + 1)
}

const UNLABELED: u32 = u32::MAX;
const DISCARDED: u32 = u32::MAX - 1;

/// Region growing over valid pixels, seeds taken top-to-bottom, left-to-right.
pub fn cluster_range_image(img: &RangeImage, range_threshold: f64, min_pixels: usize) -> Vec<Cluster> {
    let (w, h) = (img.width(), img.height());
    let mut labels = vec![UNLABELED; w * h];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();

    for v0 in 0..h {
        for u0 in 0..w {
            if labels[v0 * w + u0] != UNLABELED || img.cell(u0, v0).is_none() {
                continue;
            }
            let tag = clusters.len() as u32;
            labels[v0 * w + u0] = tag;
            queue.push_back((u0, v0));
            let mut pixels = Vec::new();
            while let Some((u, v)) = queue.pop_front() {
                pixels.push((u, v));
                let r = img.range_at(u, v).expect("queued pixels are valid");
                let left = ((u + w - 1) % w, v);
                let right = ((u + 1) % w, v);
                let below = (v + 1 < h).then_some((u, v + 1));
                for (nu, nv) in [Some(left), Some(right), below].into_iter().flatten() {
                    let idx = nv * w + nu;
                    if labels[idx] != UNLABELED {
                        continue;
                    }
                    if let Some(nr) = img.range_at(nu, nv) {
                        if (nr - r).abs() < range_threshold {
                            labels[idx] = tag;
                            queue.push_back((nu, nv));
                        }
                    }
                }
            }
            if pixels.len() < min_pixels {
                for &(u, v) in &pixels {
                    labels[v * w + u] = DISCARDED;
                }
            } else {
                clusters.push(Cluster::new(clusters.len(), pixels, w));
            }
        }
    }
    clusters
}

/// Per-pixel cluster index for membership tests.
struct Membership {
    width: usize,
    owner: Vec<u32>,
}

impl Membership {
    fn new(img: &RangeImage, clusters: &[Cluster]) -> Self {
        let width = img.width();
        let mut owner = vec![UNLABELED; width * img.height()];
        for (i, c) in clusters.iter().enumerate() {
            for &(u, v) in &c.pixels {
                owner[v * width + u] = i as u32;
            }
        }
        Self { width, owner }
    }

    fn is(&self, u: usize, v: usize, cluster: usize) -> bool {
        self.owner[v * self.width + u] == cluster as u32
    }
}

/// Number of cluster pixels that are nearer, by more than `threshold`, than
/// at least one of their outside neighbors: the first pixel outside the
/// cluster to the left, right, above and below. A neighbor without a return
/// counts as infinitely far; walking off the top or bottom edge finds none.
fn count_foreground(img: &RangeImage, membership: &Membership, idx: usize, cluster: &Cluster, threshold: f64) -> usize {
    let (w, h) = (img.width(), img.height());
    let farther = |r: f64, nu: usize, nv: usize| match img.range_at(nu, nv) {
        Some(nr) => nr - r > threshold,
        None => true,
    };
    cluster
        .pixels
        .iter()
        .filter(|&&(u, v)| {
            let r = img.range_at(u, v).unwrap_or(f64::INFINITY);
            let left = (1..w).map(|k| (u + w - k) % w).find(|&nu| !membership.is(nu, v, idx));
            let right = (1..w).map(|k| (u + k) % w).find(|&nu| !membership.is(nu, v, idx));
            let up = (0..v).rev().find(|&nv| !membership.is(u, nv, idx));
            let down = (v + 1..h).find(|&nv| !membership.is(u, nv, idx));
            left.is_some_and(|nu| farther(r, nu, v))
                || right.is_some_and(|nu| farther(r, nu, v))
                || up.is_some_and(|nv| farther(r, u, nv))
                || down.is_some_and(|nv| farther(r, u, nv))
        })
        .count()
}

/// Aspect-ratio and foreground test.
pub fn filter_2d(clusters: &[Cluster], img: &RangeImage, params: &ExtractorParams) -> Vec<Cluster> {
    let membership = Membership::new(img, clusters);
    clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.height() >= c.width)
        .filter(|(i, c)| {
            let n_small = count_foreground(img, &membership, *i, c, params.range_threshold);
            n_small as f64 >= params.foreground_ratio * c.len() as f64
        })
        .map(|(_, c)| c.clone())
        .collect()
}

/// An accepted pole in the frame of its source scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Pole {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    pub cluster_id: usize,
    pub footprint: Vec<(usize, usize)>,
}

/// Why a candidate was rejected by [`filter_3d_and_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rejection {
    Height,
    DegenerateFit,
    Radius,
    FreeSpace,
}

/// Evaluates one 2D-filtered cluster. `Ok` carries the pole.
fn evaluate_candidate(
    cluster: &Cluster,
    img: &RangeImage,
    membership_idx: Option<(&[u32], usize)>,
    params: &ExtractorParams,
) -> std::result::Result<Pole, Rejection> {
    let cells: Vec<_> = cluster
        .pixels
        .iter()
        .filter_map(|&(u, v)| img.cell(u, v))
        .collect();
    if cells.is_empty() {
        return Err(Rejection::Height);
    }
    let (z_min, z_max) = cells
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.z), hi.max(c.z)));
    if !(z_max > params.min_top_height && z_min < params.max_bottom_height && z_max - z_min > params.min_height_span) {
        return Err(Rejection::Height);
    }

    let xy: Vec<(f64, f64)> = cells.iter().map(|c| (c.x, c.y)).collect();
    let circle = fit_circle(&xy).map_err(|_| Rejection::DegenerateFit)?;
    if !(circle.r >= params.min_radius && circle.r <= params.max_radius) {
        return Err(Rejection::Radius);
    }

    let pole_range = cells.iter().map(|c| c.range).sum::<f64>() / cells.len() as f64;
    let violations = free_space_violations(cluster, img, membership_idx, pole_range, params);
    if violations as f64 >= params.free_space_ratio * cluster.len() as f64 {
        return Err(Rejection::FreeSpace);
    }

    Ok(Pole {
        center_x: circle.cx,
        center_y: circle.cy,
        radius: circle.r,
        cluster_id: cluster.id,
        footprint: cluster.pixels.clone(),
    })
}

/// Valid pixels in the column bands flanking the bounding box, over its row
/// span, whose range is within the margin of the pole's mean range.
fn free_space_violations(
    cluster: &Cluster,
    img: &RangeImage,
    membership_idx: Option<(&[u32], usize)>,
    pole_range: f64,
    params: &ExtractorParams,
) -> usize {
    let w = img.width();
    let band = params.free_space_columns.min(w.saturating_sub(cluster.width) / 2);
    let mut cols = Vec::with_capacity(2 * band);
    for k in 1..=band {
        cols.push((cluster.u_start + w - k) % w);
        cols.push((cluster.u_start + cluster.width - 1 + k) % w);
    }
    let mut count = 0;
    for v in cluster.v_min..=cluster.v_max {
        for &u in &cols {
            if let Some((owner, idx)) = membership_idx {
                if owner[v * w + u] == idx as u32 {
                    continue;
                }
            }
            if let Some(r) = img.range_at(u, v) {
                if (r - pole_range).abs() <= params.free_space_margin {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Height gates, circle fit, radius bounds and free-space test.
pub fn filter_3d_and_fit(clusters: &[Cluster], img: &RangeImage, params: &ExtractorParams) -> Vec<Pole> {
    let membership = Membership::new(img, clusters);
    clusters
        .iter()
        .enumerate()
        .filter_map(|(i, c)| evaluate_candidate(c, img, Some((&membership.owner, i)), params).ok())
        .collect()
}

/// Stage counts of one extraction run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractionTrace {
    pub clusters: usize,
    pub candidates: usize,
    pub poles: usize,
}

pub fn extract_poles(img: &RangeImage, params: &ExtractorParams) -> Vec<Pole> {
    extract_poles_traced(img, params).0
}

pub fn extract_poles_traced(img: &RangeImage, params: &ExtractorParams) -> (Vec<Pole>, ExtractionTrace) {
    let clusters = cluster_range_image(img, params.range_threshold, params.min_cluster_pixels);
    let candidates = filter_2d(&clusters, img, params);
    let poles = filter_3d_and_fit(&candidates, img, params);
    let trace = ExtractionTrace {
        clusters: clusters.len(),
        candidates: candidates.len(),
        poles: poles.len(),
    };
    (poles, trace)
}

/// Per-pixel pole mask, row-major, 1 = pole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl LabelMask {
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width + u]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&b| b as usize).sum()
    }
}

pub fn export_label_mask(img: &RangeImage, poles: &[Pole]) -> LabelMask {
    let (w, h) = (img.width(), img.height());
    let mut data = vec![0u8; w * h];
    for pole in poles {
        for &(u, v) in &pole.footprint {
            if u < w && v < h && img.cell(u, v).is_some() {
                data[v * w + u] = 1;
            }
        }
    }
    LabelMask { width: w, height: h, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::range_image::{Cell, SensorIntrinsics};

    fn intrinsics(w: usize, h: usize) -> SensorIntrinsics {
        SensorIntrinsics::from_degrees(w, h, 15.0, -15.0, 100.0).unwrap()
    }

    /// Image whose valid cells hold the given ranges; coordinates follow the pixel ray.
    fn image_from_ranges(w: usize, h: usize, f: impl Fn(usize, usize) -> Option<f64>) -> RangeImage {
        let k = intrinsics(w, h);
        let mut img = RangeImage::empty(k);
        for v in 0..h {
            for u in 0..w {
                if let Some(r) = f(u, v) {
                    let d = k.ray_direction(u, v);
                    img.set(u, v, Some(Cell { range: r, x: d[0] * r, y: d[1] * r, z: d[2] * r }));
                }
            }
        }
        img
    }

    #[test]
    fn two_blobs_separated_by_invalid_columns() {
        let img = image_from_ranges(16, 8, |u, v| {
            let blob = (2..4).contains(&u) || (8..10).contains(&u);
            (blob && (3..5).contains(&v)).then_some(5.0)
        });
        let clusters = cluster_range_image(&img, 0.3, 3);
        assert_eq!(clusters.len(), 2);
        assert!(clusters.iter().all(|c| c.len() == 4));
    }

    #[test]
    fn small_blob_is_dropped() {
        let img = image_from_ranges(16, 8, |u, v| (u == 5 && (2..4).contains(&v)).then_some(5.0));
        assert!(cluster_range_image(&img, 0.3, 3).is_empty());
        assert_eq!(cluster_range_image(&img, 0.3, 2).len(), 1);
    }

    #[test]
    fn range_gap_splits_stripe_from_background() {
        let img = image_from_ranges(16, 8, |u, _| Some(if (6..8).contains(&u) { 5.0 } else { 20.0 }));
        let clusters = cluster_range_image(&img, 1.0, 3);
        assert_eq!(clusters.len(), 2);
        let sizes: Vec<_> = clusters.iter().map(Cluster::len).collect();
        assert!(sizes.contains(&16));
        assert!(sizes.contains(&(14 * 8)));
    }

    #[test]
    fn clusters_wrap_across_azimuth_seam() {
        let img = image_from_ranges(16, 8, |u, v| ((u == 0 || u == 15) && v < 6).then_some(5.0));
        let clusters = cluster_range_image(&img, 0.3, 3);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].width, 2);
        assert_eq!(clusters[0].u_start, 15);
        assert_eq!(clusters[0].u_end(16), 0);
    }

    #[test]
    fn circular_span_prefers_plain_box() {
        assert_eq!(circular_span([3usize, 4, 5].into_iter(), 16), (3, 3));
        assert_eq!(circular_span([0usize, 1, 15].into_iter(), 16), (15, 3));
        assert_eq!(circular_span(0..16usize, 16), (0, 16));
    }

    #[test]
    fn aspect_ratio_gate() {
        let params = ExtractorParams { foreground_ratio: 0.0, ..Default::default() };
        let tall = image_from_ranges(16, 8, |u, v| ((4..6).contains(&u) && v < 6).then_some(5.0));
        let c = cluster_range_image(&tall, 0.3, 3);
        assert_eq!(filter_2d(&c, &tall, &params).len(), 1);

        let wide = image_from_ranges(16, 8, |u, v| ((4..10).contains(&u) && v < 2).then_some(5.0));
        let c = cluster_range_image(&wide, 0.3, 3);
        assert!(filter_2d(&c, &wide, &params).is_empty());
    }

    #[test]
    fn foreground_stripe_counts_every_pixel() {
        let img = image_from_ranges(16, 8, |u, _| Some(if (6..8).contains(&u) { 5.0 } else { 20.0 }));
        let clusters = cluster_range_image(&img, 0.3, 3);
        let membership = Membership::new(&img, &clusters);
        let (idx, stripe) = clusters.iter().enumerate().find(|(_, c)| c.len() == 16).unwrap();
        // every stripe pixel has a background neighbor at 20 m
        assert_eq!(count_foreground(&img, &membership, idx, stripe, 0.3), 16);
        let params = ExtractorParams { foreground_ratio: 0.5, ..Default::default() };
        let kept = filter_2d(&clusters, &img, &params);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].len(), 16);
    }

    #[test]
    fn background_stripe_is_not_foreground() {
        // stripe behind its neighbors
        let img = image_from_ranges(16, 8, |u, _| Some(if (6..8).contains(&u) { 20.0 } else { 5.0 }));
        let clusters = cluster_range_image(&img, 0.3, 3);
        let params = ExtractorParams { foreground_ratio: 0.5, ..Default::default() };
        assert!(filter_2d(&clusters, &img, &params).is_empty());
    }

    #[test]
    fn all_invalid_image_yields_nothing() {
        let img = RangeImage::empty(intrinsics(64, 16));
        assert!(extract_poles(&img, &ExtractorParams::default()).is_empty());
        assert_eq!(export_label_mask(&img, &[]).count(), 0);
    }

    #[test]
    fn label_mask_counts_footprint() {
        let img = image_from_ranges(16, 8, |u, v| ((4..7).contains(&u) && v < 4).then_some(5.0));
        let footprint: Vec<_> = (4..7).flat_map(|u| (0..4).map(move |v| (u, v))).collect();
        let pole = Pole { center_x: 5.0, center_y: 0.0, radius: 0.1, cluster_id: 0, footprint };
        let mask = export_label_mask(&img, &[pole]);
        assert_eq!(mask.count(), 12);
        assert_eq!(mask.get(4, 0), 1);
        assert_eq!(mask.get(0, 0), 0);
    }

    #[test]
    fn params_validation() {
        assert!(ExtractorParams::default().validate().is_ok());
        let bad = [
            ExtractorParams { range_threshold: 0.0, ..Default::default() },
            ExtractorParams { min_cluster_pixels: 0, ..Default::default() },
            ExtractorParams { min_radius: 0.5, max_radius: 0.4, ..Default::default() },
            ExtractorParams { foreground_ratio: 1.5, ..Default::default() },
            ExtractorParams { free_space_ratio: -0.1, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }
}
