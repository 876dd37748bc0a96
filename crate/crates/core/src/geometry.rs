//! Planar geometry primitives shared across the crate.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Normalize an angle to `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    if !angle.is_finite() {
        return 0.0;
    }
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A point in the world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn squared_distance(&self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    /// Bearing of `other` as seen from `self`, world frame.
    pub fn bearing_to(&self, other: Point2) -> f64 {
        (other.y - self.y).atan2(other.x - self.x)
    }
}

/// Robot pose: position in meters, heading in radians counterclockwise
/// from +x, normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Map a point given in the robot frame into the world frame.
    pub fn robot_to_world(&self, local: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
        )
    }

    /// Range and robot-frame bearing of a world point.
    pub fn range_bearing_to(&self, world: Point2) -> (f64, f64) {
        let range = self.position().distance(world);
        let bearing = normalize_angle(self.position().bearing_to(world) - self.theta);
        (range, bearing)
    }
}
