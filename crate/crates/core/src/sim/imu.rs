//! IMU trace synthesis from ground-truth trajectories.

use crate::error::{CoreError, Result};
use crate::types::{Pid, Quat, Trajectory2D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One inertial sample: body-frame acceleration plus orientation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Body-frame linear acceleration, m/s^2.
    pub accel: [f64; 3],
    /// Body-to-world orientation (w, x, y, z).
    pub quat: Quat,
}

/// IMU stream of one user, carrying its pseudo identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImuTrace {
    pub pid: Pid,
    pub samples: Vec<ImuSample>,
    /// Speed magnitude stream: `(t, m/s)`.
    pub speed_stream: Vec<(f64, f64)>,
}

impl ImuTrace {
    /// Samples with `t0 <= t < t1`.
    pub fn window(&self, t0: f64, t1: f64) -> ImuTrace {
        ImuTrace {
            pid: self.pid,
            samples: self.samples.iter().copied().filter(|s| s.t >= t0 && s.t < t1).collect(),
            speed_stream: self
                .speed_stream
                .iter()
                .copied()
                .filter(|s| s.0 >= t0 && s.0 < t1)
                .collect(),
        }
    }

    /// Speed magnitude at the sample nearest to `t`, or 0 when empty.
    pub fn speed_at(&self, t: f64) -> f64 {
        if self.speed_stream.is_empty() {
            return 0.0;
        }
        let idx = self
            .speed_stream
            .partition_point(|s| s.0 < t)
            .min(self.speed_stream.len() - 1);
        let mut best = self.speed_stream[idx];
        if idx > 0 && (self.speed_stream[idx - 1].0 - t).abs() < (best.0 - t).abs() {
            best = self.speed_stream[idx - 1];
        }
        best.1
    }

    /// Mean speed over a time window.
    pub fn mean_speed(&self, t0: f64, t1: f64) -> f64 {
        let vals: Vec<f64> = self
            .speed_stream
            .iter()
            .filter(|s| s.0 >= t0 && s.0 < t1)
            .map(|s| s.1)
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

/// Synthesize an IMU trace from a trajectory sampled at the IMU rate.
///
/// World-frame acceleration is the second difference of the trajectory,
/// rotated into the body frame with the walker's heading quaternion. A fixed
/// bias of magnitude `bias` (seeded direction) and Gaussian noise `sigma` are
/// added per axis. The speed stream is the first-difference speed magnitude
/// plus the same Gaussian noise.
pub fn synth_imu_trace(
    trajectory: &Trajectory2D,
    sigma: f64,
    bias: f64,
    pid: Pid,
    rng: &mut ChaCha8Rng,
) -> Result<ImuTrace> {
    let n = trajectory.samples.len();
    if n < 3 {
        return Err(CoreError::Data("trajectory shorter than 3 samples".into()));
    }
    let s = &trajectory.samples;
    let dt = s[1].t - s[0].t;
    let fps2 = 1.0 / (dt * dt);

    // Fixed bias direction per trace.
    let bias_dir = {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let z = rng.gen_range(-1.0..1.0f64);
        let r = (1.0 - z * z).sqrt();
        [r * a.cos(), r * a.sin(), z]
    };
    let bias_vec = [bias_dir[0] * bias, bias_dir[1] * bias, bias_dir[2] * bias];

    let mut headings = vec![0.0f64; n];
    let mut last = 0.0;
    let mut seen_motion = false;
    for k in 0..n {
        let (dx, dy) = if k + 1 < n {
            (s[k + 1].x - s[k].x, s[k + 1].y - s[k].y)
        } else {
            (0.0, 0.0)
        };
        if dx * dx + dy * dy > 1e-16 {
            last = dy.atan2(dx);
            seen_motion = true;
        }
        headings[k] = last;
    }
    if !seen_motion {
        headings.fill(0.0);
    }
    // Walkers keep their first heading until they start moving.
    let first = headings.iter().copied().find(|h| *h != 0.0).unwrap_or(0.0);
    for h in headings.iter_mut() {
        if *h == 0.0 {
            *h = first;
        } else {
            break;
        }
    }

    let mut samples = Vec::with_capacity(n);
    let mut speed_stream = Vec::with_capacity(n);
    for k in 0..n {
        let world = if k >= 1 && k + 1 < n {
            [
                (s[k + 1].x - 2.0 * s[k].x + s[k - 1].x) * fps2,
                (s[k + 1].y - 2.0 * s[k].y + s[k - 1].y) * fps2,
                0.0,
            ]
        } else {
            [0.0, 0.0, 0.0]
        };
        let q = Quat::from_yaw(headings[k]);
        let body = q.rotate_inverse(world);
        let accel = [
            body[0] + bias_vec[0] + gauss(rng, sigma),
            body[1] + bias_vec[1] + gauss(rng, sigma),
            body[2] + bias_vec[2] + gauss(rng, sigma),
        ];
        samples.push(ImuSample { t: s[k].t, accel, quat: q });

        let speed = if k + 1 < n {
            let dx = s[k + 1].x - s[k].x;
            let dy = s[k + 1].y - s[k].y;
            (dx * dx + dy * dy).sqrt() / dt
        } else {
            0.0
        };
        speed_stream.push((s[k].t, (speed + gauss(rng, sigma)).max(0.0)));
    }

    Ok(ImuTrace { pid, samples, speed_stream })
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    use rand_distr::{Distribution, Normal};
    Normal::new(0.0, sigma).unwrap().sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TrajSample;
    use rand::SeedableRng;

    fn traj_from(points: Vec<(f64, f64)>, dt: f64) -> Trajectory2D {
        Trajectory2D {
            samples: points
                .into_iter()
                .enumerate()
                .map(|(k, (x, y))| TrajSample { t: k as f64 * dt, x, y })
                .collect(),
        }
    }

    #[test]
    fn stationary_zero_noise_gives_zero_accel() {
        let traj = traj_from(vec![(1.0, 2.0); 50], 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trace = synth_imu_trace(&traj, 0.0, 0.0, 1, &mut rng).unwrap();
        for s in &trace.samples {
            assert!(s.accel.iter().all(|a| a.abs() < 1e-12));
        }
    }

    #[test]
    fn constant_velocity_zero_accel_constant_speed() {
        let traj = traj_from((0..100).map(|k| (k as f64 * 0.012, 0.0)).collect(), 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trace = synth_imu_trace(&traj, 0.0, 0.0, 1, &mut rng).unwrap();
        for s in &trace.samples {
            assert!(s.accel.iter().all(|a| a.abs() < 1e-9));
        }
        for (_, v) in &trace.speed_stream[..trace.speed_stream.len() - 1] {
            assert!((v - 1.2).abs() < 1e-9);
        }
    }

    #[test]
    fn bias_shows_up_on_stationary_trace() {
        let traj = traj_from(vec![(0.0, 0.0); 50], 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = 0.3;
        let trace = synth_imu_trace(&traj, 0.0, b, 1, &mut rng).unwrap();
        for s in &trace.samples {
            let norm = (s.accel[0].powi(2) + s.accel[1].powi(2) + s.accel[2].powi(2)).sqrt();
            assert!((norm - b).abs() < 1e-12);
        }
    }

    #[test]
    fn too_short_trajectory_errors() {
        let traj = traj_from(vec![(0.0, 0.0), (0.1, 0.0)], 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(synth_imu_trace(&traj, 0.0, 0.0, 1, &mut rng).is_err());
    }

    #[test]
    fn quaternions_are_unit_and_timestamps_increase() {
        let traj = traj_from((0..200).map(|k| ((k as f64 * 0.01).sin(), k as f64 * 0.01)).collect(), 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trace = synth_imu_trace(&traj, 0.01, 0.01, 1, &mut rng).unwrap();
        for w in trace.samples.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        for s in &trace.samples {
            assert!((s.quat.norm() - 1.0).abs() < 1e-12);
        }
    }
}
