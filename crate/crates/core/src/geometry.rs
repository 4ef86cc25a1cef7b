//! Rigid transforms and the gravity-aligned, yaw-rotated base frame.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector2, Vector3};

/// World <- body rigid transform.
pub type Pose = Isometry3<f64>;

pub fn pose_xyz_rpy(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Pose {
    Isometry3::from_parts(
        Translation3::new(x, y, z),
        UnitQuaternion::from_euler_angles(roll, pitch, yaw),
    )
}

pub fn pose_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
    pose_xyz_rpy(x, y, z, 0.0, 0.0, yaw)
}

/// Heading of the body x-axis projected onto the world xy-plane.
pub fn yaw_of(pose: &Pose) -> f64 {
    let fwd = pose.rotation * Vector3::x();
    if fwd.x.abs() < 1e-12 && fwd.y.abs() < 1e-12 {
        // Pointing straight up/down: fall back to the body y-axis.
        let left = pose.rotation * Vector3::y();
        return left.y.atan2(left.x) - std::f64::consts::FRAC_PI_2;
    }
    fwd.y.atan2(fwd.x)
}

/// Gravity-aligned frame at the base position, rotated by base yaw only.
///
/// Local grids and map queries live in this frame: x forward, y left,
/// z measured relative to the base height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawFrame {
    pub origin: Point3<f64>,
    pub yaw: f64,
    cos: f64,
    sin: f64,
}

impl YawFrame {
    pub fn new(origin: Point3<f64>, yaw: f64) -> Self {
        Self {
            origin,
            yaw,
            cos: yaw.cos(),
            sin: yaw.sin(),
        }
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Self::new(Point3::from(pose.translation.vector), yaw_of(pose))
    }

    /// World point -> frame coordinates.
    #[inline]
    pub fn to_local(&self, p: &Point3<f64>) -> Point3<f64> {
        let dx = p.x - self.origin.x;
        let dy = p.y - self.origin.y;
        Point3::new(
            self.cos * dx + self.sin * dy,
            -self.sin * dx + self.cos * dy,
            p.z - self.origin.z,
        )
    }

    /// Frame xy -> world xy.
    #[inline]
    pub fn xy_to_world(&self, x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(
            self.origin.x + self.cos * x - self.sin * y,
            self.origin.y + self.sin * x + self.cos * y,
        )
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Unsigned angular distance in `[0, pi]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}
