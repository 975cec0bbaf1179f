//! Pole-landmark localization from rotating LiDAR scans.
//!
//! Scans are projected into range images, pole-like objects are extracted
//! geometrically, a pole map is built from posed scans and a particle filter
//! localizes against it. [`sim`] renders synthetic scans of cylinder/wall
//! scenes and [`eval`] scores extraction and localization.

pub mod circle;
pub mod config;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod map;
pub mod mcl;
pub mod pipeline;
pub mod range_image;
pub mod sim;

pub use error::{Error, ErrorKind, Result};
pub use extractor::{extract_poles, ExtractorParams, Pole};
pub use geometry::{Pose2D, PoseDelta};
pub use map::{GlobalPole, MapBuilderParams, PoleMap};
pub use mcl::{LocalizationConfig, Localizer, MotionNoise, ObservationModelParams};
pub use range_image::{project_scan, LidarPoint, RangeImage, SensorIntrinsics};
