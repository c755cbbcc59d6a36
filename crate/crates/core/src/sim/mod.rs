//! Scenario simulation: ground-truth scenes, radar frames, IMU traces.

pub mod imu;
pub mod path;
pub mod radar;

pub use imu::{synth_imu_trace, ImuSample, ImuTrace};
pub use path::{gen_path, gen_path_slot, GaitParams};
pub use radar::{synth_radar_frame, BodyState, ClutterField};

use crate::config::{PathKind, ScenarioConfig};
use crate::error::Result;
use crate::types::{Pid, PointCloudFrame, Trajectory2D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Ground truth of one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// One trajectory per person: users first, then passengers.
    pub trajectories: Vec<Trajectory2D>,
    /// PIDs of the IMU-carrying users (1-based, index-aligned).
    pub pids: Vec<Pid>,
    /// Gait parameters for gait-textured users, `None` otherwise.
    pub gait: Vec<Option<GaitParams>>,
    pub arena: [f64; 2],
    pub imu_fps: f64,
}

impl GroundTruth {
    /// Number of IMU-carrying users.
    pub fn num_users(&self) -> usize {
        self.pids.len()
    }

    /// Ground-plane position and velocity of person `idx` at time `t`.
    pub fn body_state(&self, idx: usize, t: f64) -> BodyState {
        let traj = &self.trajectories[idx];
        let n = traj.samples.len();
        let k = ((t * self.imu_fps).round() as usize).min(n.saturating_sub(1));
        let s = traj.samples[k];
        let vel = if k + 1 < n {
            let nx = traj.samples[k + 1];
            [(nx.x - s.x) * self.imu_fps, (nx.y - s.y) * self.imu_fps]
        } else if k > 0 {
            let pv = traj.samples[k - 1];
            [(s.x - pv.x) * self.imu_fps, (s.y - pv.y) * self.imu_fps]
        } else {
            [0.0, 0.0]
        };
        BodyState { pos: [s.x, s.y], vel }
    }
}

/// Everything one scenario produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioDataset {
    pub config: ScenarioConfig,
    pub truth: GroundTruth,
    /// One frame stream per radar pose.
    pub radar_frames: Vec<Vec<PointCloudFrame>>,
    /// Per-radar, per-frame, per-point ground-truth labels.
    pub radar_labels: Vec<Vec<Vec<i32>>>,
    /// One trace per user; passengers carry no IMU.
    pub imu_traces: Vec<ImuTrace>,
}

fn stream_seed(base: u64, salt: u64, extra: u64) -> u64 {
    let mut z = base
        ^ salt.wrapping_mul(0x9e3779b97f4a7c15)
        ^ extra.wrapping_mul(0xd1b54a32d192ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Run a full scenario: paths, radar frames per pose, IMU traces per user.
///
/// Deterministic: identical configs produce bit-identical datasets.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioDataset> {
    config.validate()?;
    let users = config.effective_users();
    let total_people = config.num_users + config.num_passengers;

    let mut trajectories = Vec::with_capacity(total_people);
    let mut gait = Vec::with_capacity(total_people);
    for (i, user) in users.iter().enumerate() {
        let (traj, g) = path::gen_path_slot(
            user.path,
            config.duration,
            user.speed,
            config.imu_fps,
            stream_seed(config.seed, 0x757365, i as u64),
            config.arena,
            i,
        )?;
        trajectories.push(traj);
        gait.push(g);
    }
    for p in 0..config.num_passengers {
        let speed = 0.8 + 0.4 * ((p as f64 * 0.61) % 1.0);
        let (traj, _) = path::gen_path_slot(
            PathKind::RandomWalk,
            config.duration,
            speed,
            config.imu_fps,
            stream_seed(config.seed, 0x706173, p as u64),
            config.arena,
            config.num_users + p,
        )?;
        trajectories.push(traj);
        gait.push(None);
    }

    let truth = GroundTruth {
        trajectories,
        pids: (1..=config.num_users as Pid).collect(),
        gait,
        arena: config.arena,
        imu_fps: config.imu_fps,
    };

    let num_frames = (config.duration * config.radar_fps).floor() as usize;
    let mut radar_frames = Vec::with_capacity(config.radar_poses.len());
    let mut radar_labels = Vec::with_capacity(config.radar_poses.len());
    for (k, pose) in config.radar_poses.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 0x726164, k as u64));
        let clutter =
            ClutterField::generate(config.noise.static_clutter_count, config.arena, &mut rng);
        let mut frames = Vec::with_capacity(num_frames);
        let mut labels = Vec::with_capacity(num_frames);
        for j in 0..num_frames {
            let t = j as f64 / config.radar_fps;
            let bodies: Vec<BodyState> =
                (0..total_people).map(|i| truth.body_state(i, t)).collect();
            let (frame, frame_labels) =
                synth_radar_frame(&bodies, t, pose, &config.noise, &clutter, &mut rng)?;
            frames.push(frame);
            labels.push(frame_labels);
        }
        radar_frames.push(frames);
        radar_labels.push(labels);
    }

    let mut imu_traces = Vec::with_capacity(config.num_users);
    for i in 0..config.num_users {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 0x696d75, i as u64));
        imu_traces.push(synth_imu_trace(
            &truth.trajectories[i],
            config.noise.imu_accel_sigma,
            config.noise.imu_bias,
            truth.pids[i],
            &mut rng,
        )?);
    }

    Ok(ScenarioDataset { config: config.clone(), truth, radar_frames, radar_labels, imu_traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NoiseConfig;
    use crate::types::CLUTTER_LABEL;

    #[test]
    fn scenario_is_deterministic() {
        let mut cfg = ScenarioConfig::basic(3, 6.0, 11);
        cfg.noise = NoiseConfig::default();
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn frame_cadence_is_exact() {
        let cfg = ScenarioConfig::basic(2, 5.0, 1);
        let ds = run_scenario(&cfg).unwrap();
        let frames = &ds.radar_frames[0];
        assert_eq!(frames.len(), 40);
        for (j, f) in frames.iter().enumerate() {
            assert!((f.timestamp - j as f64 / 8.0).abs() < 1e-9);
        }
    }

    #[test]
    fn labels_point_to_nearest_user() {
        let mut cfg = ScenarioConfig::basic(4, 4.0, 9);
        cfg.noise = NoiseConfig::default();
        let ds = run_scenario(&cfg).unwrap();
        for (j, frame) in ds.radar_frames[0].iter().enumerate() {
            let bodies: Vec<BodyState> = (0..4).map(|i| ds.truth.body_state(i, frame.timestamp)).collect();
            for (p, &label) in frame.points.iter().zip(&ds.radar_labels[0][j]) {
                if label == CLUTTER_LABEL {
                    continue;
                }
                // The labelled user must be the nearest body in the ground
                // plane (scatter sigma is far below inter-user spacing).
                let mut best = 0usize;
                let mut best_d = f64::MAX;
                for (i, b) in bodies.iter().enumerate() {
                    let d = (p.x - b.pos[0]).powi(2) + (p.y - b.pos[1]).powi(2);
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                // Allow near-ties when users brush past each other.
                let labeled = &bodies[label as usize];
                let d_lab =
                    ((p.x - labeled.pos[0]).powi(2) + (p.y - labeled.pos[1]).powi(2)).sqrt();
                assert!(
                    best == label as usize || (d_lab - best_d.sqrt()).abs() < 0.8,
                    "frame {j}: label {label} but nearest {best}"
                );
            }
        }
    }

    #[test]
    fn passengers_have_no_imu() {
        let mut cfg = ScenarioConfig::basic(2, 4.0, 5);
        cfg.num_passengers = 2;
        let ds = run_scenario(&cfg).unwrap();
        assert_eq!(ds.imu_traces.len(), 2);
        assert_eq!(ds.truth.trajectories.len(), 4);
    }
}
