//! File formats.
//!
//! | file        | layout                                                              |
//! |-------------|---------------------------------------------------------------------|
//! | scan `.bin` | little-endian f32 × 4 per point (x, y, z, intensity), no header     |
//! | `.prim`     | `PRIM`, u32 w, u32 h, f32 f_up, f_down, max_range, 0, then h·w × (range, x, y, z) f32; range −1 = INVALID |
//! | `.plbl`     | `PLBL`, u32 w, u32 h, then h·w bytes in {0, 1}                      |
//! | detections  | CSV `scan_id,center_x,center_y,radius`                              |
//! | poses       | CSV `timestamp,x,y,theta`                                           |
//! | map         | CSV `center_x,center_y,radius,hit_count`                            |
//! | GT poles    | CSV `center_x,center_y,radius`                                      |
//!
//! Binary integers and floats are little-endian, images row-major.
//! Written CSV values carry 6 decimals.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::extractor::LabelMask;
use crate::geometry::Pose2D;
use crate::map::{GlobalPole, PoleMap};
use crate::range_image::{Cell, LidarPoint, RangeImage, SensorIntrinsics};

const PRIM_MAGIC: &[u8; 4] = b"PRIM";
const PLBL_MAGIC: &[u8; 4] = b"PLBL";

fn format_err(kind: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

pub fn encode_scan(points: &[LidarPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_scan(bytes: &[u8], path: &Path) -> Result<Vec<LidarPoint>> {
    if bytes.len() % 16 != 0 {
        return Err(format_err(
            "scan",
            path,
            format!("length {} is not a multiple of 16 bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| LidarPoint {
            x: f32_at(c, 0) as f64,
            y: f32_at(c, 4) as f64,
            z: f32_at(c, 8) as f64,
            intensity: f32_at(c, 12),
        })
        .collect())
}

pub fn write_scan(path: &Path, points: &[LidarPoint]) -> Result<()> {
    write_bytes(path, &encode_scan(points))
}

pub fn read_scan(path: &Path) -> Result<Vec<LidarPoint>> {
    decode_scan(&read_bytes(path)?, path)
}

/// Sorted `.bin` files of a directory.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn encode_range_image(img: &RangeImage) -> Vec<u8> {
    let k = img.intrinsics();
    let mut out = Vec::with_capacity(28 + img.cells().len() * 16);
    out.extend_from_slice(PRIM_MAGIC);
    out.extend_from_slice(&(k.width as u32).to_le_bytes());
    out.extend_from_slice(&(k.height as u32).to_le_bytes());
    for v in [k.f_up as f32, k.f_down as f32, k.max_range as f32, 0.0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in img.cells() {
        let vals = match c {
            Some(c) => [c.range as f32, c.x as f32, c.y as f32, c.z as f32],
            None => [-1.0, 0.0, 0.0, 0.0],
        };
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_range_image(b: &[u8], path: &Path) -> Result<RangeImage> {
    if b.len() < 28 || &b[..4] != PRIM_MAGIC {
        return Err(format_err("range image", path, "missing PRIM header"));
    }
    let (w, h) = (u32_at(b, 4) as usize, u32_at(b, 8) as usize);
    let expected = 28 + w * h * 16;
    if b.len() != expected {
        return Err(format_err(
            "range image",
            path,
            format!("expected {expected} bytes for {w}x{h}, found {}", b.len()),
        ));
    }
    let k = SensorIntrinsics::new(w, h, f32_at(b, 12) as f64, f32_at(b, 16) as f64, f32_at(b, 20) as f64)
        .map_err(|e| format_err("range image", path, e.to_string()))?;
    let cells = b[28..]
        .chunks_exact(16)
        .map(|c| {
            let range = f32_at(c, 0);
            (range >= 0.0).then(|| Cell {
                range: range as f64,
                x: f32_at(c, 4) as f64,
                y: f32_at(c, 8) as f64,
                z: f32_at(c, 12) as f64,
            })
        })
        .collect();
    Ok(RangeImage::from_cells(k, cells))
}

pub fn write_range_image(path: &Path, img: &RangeImage) -> Result<()> {
    write_bytes(path, &encode_range_image(img))
}

pub fn read_range_image(path: &Path) -> Result<RangeImage> {
    decode_range_image(&read_bytes(path)?, path)
}

pub fn encode_label_mask(mask: &LabelMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + mask.data.len());
    out.extend_from_slice(PLBL_MAGIC);
    out.extend_from_slice(&(mask.width as u32).to_le_bytes());
    out.extend_from_slice(&(mask.height as u32).to_le_bytes());
    out.extend_from_slice(&mask.data);
    out
}

pub fn decode_label_mask(b: &[u8], path: &Path) -> Result<LabelMask> {
    if b.len() < 12 || &b[..4] != PLBL_MAGIC {
        return Err(format_err("label mask", path, "missing PLBL header"));
    }
    let (w, h) = (u32_at(b, 4) as usize, u32_at(b, 8) as usize);
    if b.len() != 12 + w * h {
        return Err(format_err("label mask", path, format!("expected {} bytes", 12 + w * h)));
    }
    if b[12..].iter().any(|&x| x > 1) {
        return Err(format_err("label mask", path, "labels must be 0 or 1"));
    }
    Ok(LabelMask {
        width: w,
        height: h,
        data: b[12..].to_vec(),
    })
}

pub fn write_label_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    write_bytes(path, &encode_label_mask(mask))
}

pub fn read_label_mask(path: &Path) -> Result<LabelMask> {
    decode_label_mask(&read_bytes(path)?, path)
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::csv(path, e))?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let found = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(format_err(
            "csv",
            path,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::csv(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct DetectionRecord {
    pub scan_id: usize,
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

pub const DETECTIONS_HEADER: [&str; 4] = ["scan_id", "center_x", "center_y", "radius"];
pub const POSES_HEADER: [&str; 4] = ["timestamp", "x", "y", "theta"];
pub const MAP_HEADER: [&str; 4] = ["center_x", "center_y", "radius", "hit_count"];
pub const POLES_HEADER: [&str; 3] = ["center_x", "center_y", "radius"];

pub fn write_detections(path: &Path, rows: &[DetectionRecord]) -> Result<()> {
    write_csv(
        path,
        &DETECTIONS_HEADER,
        rows.iter()
            .map(|d| [d.scan_id.to_string(), f6(d.center_x), f6(d.center_y), f6(d.radius)]),
    )
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_csv(path, &DETECTIONS_HEADER)
}

#[derive(Deserialize)]
struct PoseRow {
    timestamp: f64,
    x: f64,
    y: f64,
    theta: f64,
}

pub fn write_poses(path: &Path, poses: &[Pose2D]) -> Result<()> {
    write_csv(
        path,
        &POSES_HEADER,
        poses.iter().map(|p| [f6(p.timestamp), f6(p.x), f6(p.y), f6(p.theta)]),
    )
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose2D>> {
    let rows: Vec<PoseRow> = read_csv(path, &POSES_HEADER)?;
    rows.into_iter()
        .map(|r| {
            if [r.timestamp, r.x, r.y, r.theta].iter().all(|v| v.is_finite()) {
                Ok(Pose2D::new(r.x, r.y, r.theta).with_timestamp(r.timestamp))
            } else {
                Err(format_err("pose", path, "non-finite value"))
            }
        })
        .collect()
}

#[derive(Deserialize)]
struct MapRow {
    center_x: f64,
    center_y: f64,
    radius: f64,
    hit_count: u32,
}

pub fn write_map(path: &Path, map: &PoleMap) -> Result<()> {
    write_csv(
        path,
        &MAP_HEADER,
        map.poles()
            .iter()
            .map(|p| [f6(p.center_x), f6(p.center_y), f6(p.radius), p.hit_count.to_string()]),
    )
}

pub fn read_map(path: &Path) -> Result<PoleMap> {
    let rows: Vec<MapRow> = read_csv(path, &MAP_HEADER)?;
    Ok(PoleMap::new(
        rows.into_iter()
            .map(|r| GlobalPole {
                center_x: r.center_x,
                center_y: r.center_y,
                radius: r.radius,
                hit_count: r.hit_count,
                last_section: 0,
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct PoleRecord {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

pub fn write_poles(path: &Path, poles: &[PoleRecord]) -> Result<()> {
    write_csv(
        path,
        &POLES_HEADER,
        poles.iter().map(|p| [f6(p.center_x), f6(p.center_y), f6(p.radius)]),
    )
}

pub fn read_poles(path: &Path) -> Result<Vec<PoleRecord>> {
    read_csv(path, &POLES_HEADER)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn scan_round_trip() {
        let d = tmp();
        let path = d.path().join("000000.bin");
        let pts = vec![
            LidarPoint { x: 1.5, y: -2.25, z: 0.125, intensity: 0.5 },
            LidarPoint { x: 10.0, y: 0.0, z: -1.0, intensity: 0.0 },
        ];
        write_scan(&path, &pts).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 32);
        assert_eq!(read_scan(&path).unwrap(), pts);
    }

    #[test]
    fn truncated_scan_is_a_data_error() {
        let d = tmp();
        let path = d.path().join("bad.bin");
        fs::write(&path, [0u8; 15]).unwrap();
        let err = read_scan(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert_eq!(err.kind(), crate::error::ErrorKind::Data);
    }

    #[test]
    fn range_image_round_trip() {
        let k = SensorIntrinsics::from_degrees(8, 4, 15.0, -15.0, 50.0).unwrap();
        let mut img = RangeImage::empty(k);
        img.set(3, 2, Some(Cell::from_xyz(2.0, 1.0, 0.5)));
        img.set(0, 0, Some(Cell::from_xyz(-4.0, 0.0, 1.0)));
        let bytes = encode_range_image(&img);
        assert_eq!(&bytes[..4], b"PRIM");
        assert_eq!(bytes.len(), 28 + 8 * 4 * 16);
        let back = decode_range_image(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.valid_count(), 2);
        let c = back.cell(3, 2).unwrap();
        assert!((c.range - img.cell(3, 2).unwrap().range).abs() < 1e-6);
        assert!(back.cell(1, 1).is_none());
        assert!((back.intrinsics().f_up - k.f_up).abs() < 1e-6);
        // INVALID cells store range −1
        assert_eq!(f32_at(&bytes, 28 + 16), -1.0);
    }

    #[test]
    fn label_mask_round_trip() {
        let mask = LabelMask { width: 3, height: 2, data: vec![0, 1, 0, 1, 1, 0] };
        let bytes = encode_label_mask(&mask);
        assert_eq!(&bytes[..4], b"PLBL");
        assert_eq!(decode_label_mask(&bytes, Path::new("x")).unwrap(), mask);
        let mut bad = bytes.clone();
        bad[13] = 7;
        assert!(decode_label_mask(&bad, Path::new("x")).is_err());
    }

    #[test]
    fn csv_round_trips_with_six_decimals() {
        let d = tmp();
        let det = d.path().join("det.csv");
        write_detections(&det, &[DetectionRecord { scan_id: 3, center_x: 1.0, center_y: -2.5, radius: 0.1234567 }]).unwrap();
        let text = fs::read_to_string(&det).unwrap();
        assert_eq!(text, "scan_id,center_x,center_y,radius\n3,1.000000,-2.500000,0.123457\n");
        assert_eq!(read_detections(&det).unwrap()[0].scan_id, 3);

        let poses = d.path().join("poses.csv");
        let p = vec![Pose2D::new(1.0, 2.0, 0.5).with_timestamp(0.1)];
        write_poses(&poses, &p).unwrap();
        assert_eq!(read_poses(&poses).unwrap(), p);

        let map = d.path().join("map.csv");
        let m = PoleMap::new(vec![GlobalPole { center_x: 1.0, center_y: 2.0, radius: 0.1, hit_count: 4, last_section: 9 }]);
        write_map(&map, &m).unwrap();
        assert_eq!(fs::read_to_string(&map).unwrap(), "center_x,center_y,radius,hit_count\n1.000000,2.000000,0.100000,4\n");
        assert_eq!(read_map(&map).unwrap().poles()[0].hit_count, 4);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let d = tmp();
        let path = d.path().join("p.csv");
        fs::write(&path, "t,x,y,yaw\n0,0,0,0\n").unwrap();
        assert!(matches!(read_poses(&path), Err(Error::Format { .. })));
    }
}
