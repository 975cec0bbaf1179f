//! Planar poses and angle helpers shared by mapping, localization and the simulator.

use std::f64::consts::PI;

/// Wraps an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Robot pose in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Heading in (−π, π].
    pub theta: f64,
    pub timestamp: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            timestamp: 0.0,
        }
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }

    /// Maps a point from this pose's body frame into the global frame.
    pub fn transform_point(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    /// Maps a global point into this pose's body frame.
    pub fn inverse_transform_point(&self, gx: f64, gy: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (gx - self.x, gy - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Applies a body-frame relative motion. The timestamp is kept.
    pub fn compose(&self, delta: &PoseDelta) -> Pose2D {
        let (x, y) = self.transform_point(delta.dx, delta.dy);
        Pose2D {
            x,
            y,
            theta: wrap_angle(self.theta + delta.dtheta),
            timestamp: self.timestamp,
        }
    }

    /// Relative motion that takes `self` to `other`, expressed in `self`'s body frame.
    pub fn delta_to(&self, other: &Pose2D) -> PoseDelta {
        let (dx, dy) = self.inverse_transform_point(other.x, other.y);
        PoseDelta {
            dx,
            dy,
            dtheta: wrap_angle(other.theta - self.theta),
        }
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Relative motion in the previous body frame (odometry increment).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseDelta {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl PoseDelta {
    pub fn translation(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}
