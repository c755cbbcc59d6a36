//! Shared domain types: radar points and frames, trajectories, labels.

use serde::{Deserialize, Serialize};

/// Pseudo identity carried by an IMU stream; 1-based.
pub type Pid = u32;

/// Ground-truth label for radar points that belong to no user.
pub const CLUTTER_LABEL: i32 = -1;

/// One radar return: Cartesian position plus radial (Doppler) velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Radial velocity along the radar → point ray, m/s (positive = receding).
    pub radial_velocity: f64,
}

impl RadarPoint {
    pub fn new(x: f64, y: f64, z: f64, radial_velocity: f64) -> Self {
        Self { x, y, z, radial_velocity }
    }

    pub fn pos(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Distance to another point.
    pub fn dist(&self, other: &RadarPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// One radar frame: timestamp plus the 3D point cloud with radial velocities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointCloudFrame {
    /// Seconds since scenario start.
    pub timestamp: f64,
    pub points: Vec<RadarPoint>,
}

/// Spherical coordinates `(range, azimuth, polar)` of a Cartesian position.
///
/// Range in meters, azimuth in `[-pi, pi]`, polar in `[0, pi]` measured from +z.
pub fn cartesian_to_spherical(p: [f64; 3]) -> [f64; 3] {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r == 0.0 {
        return [0.0, 0.0, 0.0];
    }
    let azimuth = p[1].atan2(p[0]);
    let polar = (p[2] / r).clamp(-1.0, 1.0).acos();
    [r, azimuth, polar]
}

/// Inverse of [`cartesian_to_spherical`].
pub fn spherical_to_cartesian(s: [f64; 3]) -> [f64; 3] {
    let (r, az, pol) = (s[0], s[1], s[2]);
    [r * pol.sin() * az.cos(), r * pol.sin() * az.sin(), r * pol.cos()]
}

/// A 2D trajectory sampled at a fixed rate.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trajectory2D {
    pub samples: Vec<TrajSample>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Trajectory2D {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample nearest in time to `t`, or `None` when empty or `t` is more than
    /// `tol` away from every sample.
    pub fn nearest(&self, t: f64, tol: f64) -> Option<TrajSample> {
        if self.samples.is_empty() {
            return None;
        }
        // Samples are time-ordered; binary search for the insertion point.
        let idx = self
            .samples
            .partition_point(|s| s.t < t)
            .min(self.samples.len() - 1);
        let mut best = self.samples[idx];
        if idx > 0 && (self.samples[idx - 1].t - t).abs() < (best.t - t).abs() {
            best = self.samples[idx - 1];
        }
        if (best.t - t).abs() <= tol {
            Some(best)
        } else {
            None
        }
    }

    /// Restrict to samples with `t0 <= t < t1`.
    pub fn window(&self, t0: f64, t1: f64) -> Trajectory2D {
        Trajectory2D {
            samples: self
                .samples
                .iter()
                .copied()
                .filter(|s| s.t >= t0 && s.t < t1)
                .collect(),
        }
    }

    /// Total polyline length.
    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
            .sum()
    }

    /// Mean speed from first differences; 0 for fewer than 2 samples.
    pub fn mean_speed(&self) -> f64 {
        if self.samples.len() < 2 {
            return 0.0;
        }
        let dt = self.samples.last().unwrap().t - self.samples[0].t;
        if dt <= 0.0 {
            return 0.0;
        }
        self.path_length() / dt
    }
}

/// Unit quaternion `(w, x, y, z)` used for IMU orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Rotation about +z by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        Quat { w: (yaw / 2.0).cos(), x: 0.0, y: 0.0, z: (yaw / 2.0).sin() }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Rotate a vector from the body frame into the world frame.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        // q * v * q^-1 expanded for unit quaternions.
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let (vx, vy, vz) = (v[0], v[1], v[2]);
        let tx = 2.0 * (y * vz - z * vy);
        let ty = 2.0 * (z * vx - x * vz);
        let tz = 2.0 * (x * vy - y * vx);
        [
            vx + w * tx + (y * tz - z * ty),
            vy + w * ty + (z * tx - x * tz),
            vz + w * tz + (x * ty - y * tx),
        ]
    }

    /// Rotate a vector from the world frame into the body frame.
    pub fn rotate_inverse(&self, v: [f64; 3]) -> [f64; 3] {
        Quat { w: self.w, x: -self.x, y: -self.y, z: -self.z }.rotate(v)
    }
}

/// Cosine similarity of two equal-length vectors; 0 when either is all-zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine similarity needs equal lengths");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spherical_round_trip() {
        let p = [3.0, -1.5, 0.8];
        let s = cartesian_to_spherical(p);
        let back = spherical_to_cartesian(s);
        for i in 0..3 {
            assert!((p[i] - back[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_ranges() {
        let s = cartesian_to_spherical([0.0, -2.0, 0.0]);
        assert!((s[0] - 2.0).abs() < 1e-12);
        assert!((s[1] + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((s[2] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn quat_yaw_rotates_x_to_y() {
        let q = Quat::from_yaw(std::f64::consts::FRAC_PI_2);
        let v = q.rotate([1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
        let back = q.rotate_inverse(v);
        assert!((back[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).abs() < 1e-12);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]);
        assert!((c - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nearest_sample_lookup() {
        let traj = Trajectory2D {
            samples: (0..10)
                .map(|i| TrajSample { t: i as f64 * 0.1, x: i as f64, y: 0.0 })
                .collect(),
        };
        let s = traj.nearest(0.42, 0.06).unwrap();
        assert!((s.x - 4.0).abs() < 1e-12);
        assert!(traj.nearest(5.0, 0.06).is_none());
    }
}
