//! Spherical projection of LiDAR points into a dense range image.
//!
//! Column `u` follows the azimuth `atan2(y, x)` and decreases from `w` at
//! −π to 0 at +π; row `v` follows the elevation `asin(z / r)` and runs from
//! the top of the vertical field of view (row 0) to its bottom (row `h − 1`).
//! Each valid cell keeps the range and the sensor-frame coordinates of the
//! nearest point that landed in it.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Tolerance on the elevation gate so points exactly on a FOV edge survive `asin` rounding.
const FOV_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f32,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: 0.0,
        }
    }

    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    fn validate(&self) -> Result<f64> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(Error::InvalidPoint(format!(
                "non-finite coordinates ({}, {}, {})",
                self.x, self.y, self.z
            )));
        }
        let r = self.range();
        if r <= 0.0 {
            return Err(Error::InvalidPoint("zero range".into()));
        }
        Ok(r)
    }
}

/// Image geometry of a spinning LiDAR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Upper vertical FOV bound in radians, positive.
    pub f_up: f64,
    /// Lower vertical FOV bound in radians, negative.
    pub f_down: f64,
    pub max_range: f64,
}

impl SensorIntrinsics {
    pub fn new(width: usize, height: usize, f_up: f64, f_down: f64, max_range: f64) -> Result<Self> {
        let k = Self {
            width,
            height,
            f_up,
            f_down,
            max_range,
        };
        k.validate()?;
        Ok(k)
    }

    /// Same as [`SensorIntrinsics::new`] with the FOV bounds given in degrees.
    pub fn from_degrees(
        width: usize,
        height: usize,
        f_up_deg: f64,
        f_down_deg: f64,
        max_range: f64,
    ) -> Result<Self> {
        Self::new(width, height, f_up_deg.to_radians(), f_down_deg.to_radians(), max_range)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::param(
                "sensor.width/height",
                format!("image must be at least 2x2, got {}x{}", self.width, self.height),
            ));
        }
        if !(self.f_up > 0.0 && self.f_down < 0.0 && self.f_up.is_finite() && self.f_down.is_finite()) {
            return Err(Error::param(
                "sensor.f_up/f_down",
                format!("need f_up > 0 > f_down, got {} / {}", self.f_up, self.f_down),
            ));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::param("sensor.max_range", "must be positive"));
        }
        Ok(())
    }

    /// Total vertical field of view.
    pub fn fov(&self) -> f64 {
        self.f_up.abs() + self.f_down.abs()
    }

    /// Azimuth of the center of column `u`.
    pub fn column_azimuth(&self, u: usize) -> f64 {
        PI * (1.0 - 2.0 * (u as f64 + 0.5) / self.width as f64)
    }

    /// Elevation of the center of row `v`.
    pub fn row_elevation(&self, v: usize) -> f64 {
        (1.0 - (v as f64 + 0.5) / self.height as f64) * self.fov() - self.f_down.abs()
    }

    /// Unit ray direction through the center of pixel (u, v).
    pub fn ray_direction(&self, u: usize, v: usize) -> [f64; 3] {
        let (sa, ca) = self.column_azimuth(u).sin_cos();
        let (se, ce) = self.row_elevation(v).sin_cos();
        [ce * ca, ce * sa, se]
    }
}

/// Maps a point to its pixel. `Ok(None)` means the elevation lies outside the vertical FOV.
pub fn project_point(p: &LidarPoint, k: &SensorIntrinsics) -> Result<Option<(usize, usize)>> {
    let r = p.validate()?;
    let elevation = (p.z / r).clamp(-1.0, 1.0).asin();
    if elevation > k.f_up + FOV_EPS || elevation < k.f_down - FOV_EPS {
        return Ok(None);
    }
    let w = k.width as f64;
    let h = k.height as f64;
    let u = (0.5 * (1.0 - p.y.atan2(p.x) / PI) * w).floor();
    let v = ((1.0 - (elevation + k.f_down.abs()) / k.fov()) * h).floor();
    let u = u.clamp(0.0, w - 1.0) as usize;
    let v = v.clamp(0.0, h - 1.0) as usize;
    Ok(Some((u, v)))
}

/// One valid pixel: range and sensor-frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub range: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Cell {
    /// Builds a cell whose range is derived from the coordinates.
    pub fn from_xyz(x: f64, y: f64, z: f64) -> Self {
        Self {
            range: (x * x + y * y + z * z).sqrt(),
            x,
            y,
            z,
        }
    }
}

/// Counters for points that [`project_scan`] did not write.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub written: usize,
    pub invalid: usize,
    pub out_of_fov: usize,
    pub beyond_range: usize,
    /// Points that lost a pixel collision to a nearer point.
    pub occluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    intrinsics: SensorIntrinsics,
    cells: Vec<Option<Cell>>,
}

impl RangeImage {
    /// An image with every cell INVALID.
    pub fn empty(intrinsics: SensorIntrinsics) -> Self {
        Self {
            cells: vec![None; intrinsics.width * intrinsics.height],
            intrinsics,
        }
    }

    /// Projects a point set, keeping the nearest point per pixel.
    pub fn from_points<'a, I>(points: I, intrinsics: SensorIntrinsics) -> (Self, ProjectionStats)
    where
        I: IntoIterator<Item = &'a LidarPoint>,
    {
        let mut img = Self::empty(intrinsics);
        let mut stats = ProjectionStats::default();
        for p in points {
            let (u, v) = match project_point(p, &intrinsics) {
                Ok(Some(uv)) => uv,
                Ok(None) => {
                    stats.out_of_fov += 1;
                    continue;
                }
                Err(_) => {
                    stats.invalid += 1;
                    continue;
                }
            };
            let cell = Cell::from_xyz(p.x, p.y, p.z);
            if cell.range > intrinsics.max_range {
                stats.beyond_range += 1;
                continue;
            }
            let slot = &mut img.cells[v * intrinsics.width + u];
            match slot {
                Some(existing) if existing.range <= cell.range => stats.occluded += 1,
                Some(_) => {
                    stats.occluded += 1;
                    *slot = Some(cell);
                }
                None => {
                    stats.written += 1;
                    *slot = Some(cell);
                }
            }
        }
        (img, stats)
    }

    pub fn intrinsics(&self) -> &SensorIntrinsics {
        &self.intrinsics
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Cell at column `u`, row `v`; panics when out of bounds.
    #[inline]
    pub fn cell(&self, u: usize, v: usize) -> Option<&Cell> {
        self.cells[v * self.intrinsics.width + u].as_ref()
    }

    #[inline]
    pub fn range_at(&self, u: usize, v: usize) -> Option<f64> {
        self.cell(u, v).map(|c| c.range)
    }

    pub fn set(&mut self, u: usize, v: usize, cell: Option<Cell>) {
        let w = self.intrinsics.width;
        self.cells[v * w + u] = cell;
    }

    /// Row-major cells.
    pub fn cells(&self) -> &[Option<Cell>] {
        &self.cells
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Stored points of all valid cells, row-major.
    pub fn to_points(&self) -> Vec<LidarPoint> {
        self.cells
            .iter()
            .flatten()
            .map(|c| LidarPoint::new(c.x, c.y, c.z))
            .collect()
    }

    pub(crate) fn from_cells(intrinsics: SensorIntrinsics, cells: Vec<Option<Cell>>) -> Self {
        debug_assert_eq!(cells.len(), intrinsics.width * intrinsics.height);
        Self { intrinsics, cells }
    }
}

pub fn project_scan(points: &[LidarPoint], k: &SensorIntrinsics) -> RangeImage {
    RangeImage::from_points(points, *k).0
}

/// Reads back the stored point of a cell. `Ok(None)` for INVALID cells.
pub fn unproject(img: &RangeImage, u: usize, v: usize) -> Result<Option<LidarPoint>> {
    if u >= img.width() || v >= img.height() {
        return Err(Error::IndexOutOfBounds {
            u,
            v,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(img.cell(u, v).map(|c| LidarPoint::new(c.x, c.y, c.z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k256() -> SensorIntrinsics {
        SensorIntrinsics::from_degrees(256, 32, 15.0, -15.0, 100.0).unwrap()
    }

    #[test]
    fn forward_axis_maps_to_center() {
        let k = k256();
        assert_eq!(project_point(&LidarPoint::new(1.0, 0.0, 0.0), &k).unwrap(), Some((128, 16)));
    }

    #[test]
    fn negative_y_maps_to_three_quarters_width() {
        let k = k256();
        assert_eq!(project_point(&LidarPoint::new(0.0, -1.0, 0.0), &k).unwrap(), Some((192, 16)));
    }

    #[test]
    fn upper_fov_edge_is_top_row() {
        let k = k256();
        let e = 15f64.to_radians();
        let (_, v) = project_point(&LidarPoint::new(e.cos(), 0.0, e.sin()), &k).unwrap().unwrap();
        assert_eq!(v, 0);
    }

    #[test]
    fn lower_fov_edge_is_clamped_to_bottom_row() {
        let k = k256();
        let e = (-15f64).to_radians();
        let (_, v) = project_point(&LidarPoint::new(e.cos(), 0.0, e.sin()), &k).unwrap().unwrap();
        assert_eq!(v, 31);
    }

    #[test]
    fn backward_axis_clamps_columns() {
        let k = k256();
        // atan2 = +π gives u = 0; just below −π gives u = w which clamps to w − 1.
        assert_eq!(project_point(&LidarPoint::new(-1.0, 0.0, 0.0), &k).unwrap(), Some((0, 16)));
        let (u, _) = project_point(&LidarPoint::new(-1.0, -1e-12, 0.0), &k).unwrap().unwrap();
        assert_eq!(u, 255);
    }

    #[test]
    fn outside_vertical_fov_is_rejected() {
        let k = k256();
        assert_eq!(project_point(&LidarPoint::new(1.0, 0.0, 1.0), &k).unwrap(), None);
        assert_eq!(project_point(&LidarPoint::new(1.0, 0.0, -1.0), &k).unwrap(), None);
    }

    #[test]
    fn invalid_points_error() {
        let k = k256();
        assert!(matches!(
            project_point(&LidarPoint::new(0.0, 0.0, 0.0), &k),
            Err(Error::InvalidPoint(_))
        ));
        assert!(project_point(&LidarPoint::new(f64::NAN, 0.0, 0.0), &k).is_err());
        assert!(project_point(&LidarPoint::new(f64::INFINITY, 0.0, 0.0), &k).is_err());
    }

    #[test]
    fn empty_scan_is_all_invalid() {
        let img = project_scan(&[], &k256());
        assert_eq!(img.valid_count(), 0);
    }

    #[test]
    fn nearest_point_wins_collision() {
        let k = k256();
        let pts = [LidarPoint::new(6.0, 0.0, 0.0), LidarPoint::new(4.0, 0.0, 0.0)];
        let img = project_scan(&pts, &k);
        assert_eq!(img.range_at(128, 16), Some(4.0));
        let img = project_scan(&[pts[1], pts[0]], &k);
        assert_eq!(img.range_at(128, 16), Some(4.0));
    }

    #[test]
    fn skipped_points_are_counted() {
        let k = SensorIntrinsics::from_degrees(256, 32, 15.0, -15.0, 50.0).unwrap();
        let pts = [
            LidarPoint::new(0.0, 0.0, 0.0),
            LidarPoint::new(1.0, 0.0, 5.0),
            LidarPoint::new(80.0, 0.0, 0.0),
            LidarPoint::new(3.0, 0.0, 0.0),
        ];
        let (img, stats) = RangeImage::from_points(&pts, k);
        assert_eq!(
            stats,
            ProjectionStats {
                written: 1,
                invalid: 1,
                out_of_fov: 1,
                beyond_range: 1,
                occluded: 0
            }
        );
        assert_eq!(img.valid_count(), 1);
    }

    #[test]
    fn unproject_round_trip_and_errors() {
        let k = k256();
        let img = project_scan(&[LidarPoint::new(1.0, 0.0, 0.0)], &k);
        assert_eq!(unproject(&img, 128, 16).unwrap(), Some(LidarPoint::new(1.0, 0.0, 0.0)));
        assert_eq!(unproject(&img, 0, 0).unwrap(), None);
        assert!(matches!(unproject(&img, 256, 0), Err(Error::IndexOutOfBounds { .. })));
        assert!(unproject(&img, 0, 32).is_err());
    }

    #[test]
    fn pixel_centers_project_to_their_own_cell() {
        let k = k256();
        for v in 0..k.height {
            for u in 0..k.width {
                let d = k.ray_direction(u, v);
                let p = LidarPoint::new(d[0] * 7.0, d[1] * 7.0, d[2] * 7.0);
                assert_eq!(project_point(&p, &k).unwrap(), Some((u, v)));
            }
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(SensorIntrinsics::from_degrees(1, 32, 15.0, -15.0, 10.0).is_err());
        assert!(SensorIntrinsics::from_degrees(16, 32, -1.0, -15.0, 10.0).is_err());
        assert!(SensorIntrinsics::from_degrees(16, 32, 15.0, 2.0, 10.0).is_err());
        assert!(SensorIntrinsics::from_degrees(16, 32, 15.0, -15.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn azimuth_monotonicity(a in -3.14f64..3.14, b in -3.14f64..3.14) {
            let k = k256();
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            prop_assume!(hi > lo);
            let (u_hi, _) = project_point(&LidarPoint::new(hi.cos(), hi.sin(), 0.0), &k).unwrap().unwrap();
            let (u_lo, _) = project_point(&LidarPoint::new(lo.cos(), lo.sin(), 0.0), &k).unwrap().unwrap();
            prop_assert!(u_hi <= u_lo);
        }

        #[test]
        fn stored_range_matches_norm(x in -40f64..40.0, y in -40f64..40.0, z in -5f64..5.0) {
            let k = k256();
            let p = LidarPoint::new(x, y, z);
            prop_assume!(p.range() > 0.1);
            let img = project_scan(&[p], &k);
            for c in img.cells().iter().flatten() {
                let norm = (c.x * c.x + c.y * c.y + c.z * c.z).sqrt();
                prop_assert!((c.range - norm).abs() <= 1e-6 * c.range);
            }
        }
    }
}
