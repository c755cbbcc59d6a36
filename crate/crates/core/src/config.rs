//! Scenario configuration: users, sensors, noise, and arena geometry.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Motion pattern followed by one simulated person.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// Waypoint-to-waypoint walk with random headings and brief pauses at
    /// each waypoint (the pauses anchor IMU zero-velocity updates).
    RandomWalk,
    /// Square zig-zag sweep of the arena with pauses at the corners.
    SquareZigzag,
    /// Constant-heading walk with per-step gait texture.
    Straight,
    /// Paired walk: both users share one straight path offset laterally,
    /// with per-user gait texture. Users are assigned in consecutive pairs.
    SideBySide,
}

/// 2D pose of one radar: position on the ground plane plus boresight heading.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RadarPose {
    pub position: [f64; 2],
    /// Boresight heading, radians in the world frame.
    pub heading: f64,
    /// Mount height of the sensor, meters.
    #[serde(default = "default_radar_height")]
    pub height: f64,
}

fn default_radar_height() -> f64 {
    1.0
}

/// Sensor noise and sparsity knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Gaussian scatter of radar points around the torso surface, meters.
    pub radar_point_sigma: f64,
    /// Gaussian noise on per-point radial velocity, m/s.
    pub radar_velocity_sigma: f64,
    /// Uniform range of point counts contributed by one visible user.
    pub points_per_user_range: [usize; 2],
    /// Probability that a user occluded by another body is dropped for a frame.
    pub occlusion_probability: f64,
    /// Gaussian noise on IMU acceleration, m/s^2.
    pub imu_accel_sigma: f64,
    /// Constant accelerometer bias magnitude, m/s^2.
    pub imu_bias: f64,
    /// Static background returns added to every frame.
    pub static_clutter_count: usize,
}

impl NoiseConfig {
    /// All noise sources disabled; clutter kept at zero as well.
    pub fn zero() -> Self {
        NoiseConfig {
            radar_point_sigma: 0.0,
            radar_velocity_sigma: 0.0,
            points_per_user_range: [12, 12],
            occlusion_probability: 0.0,
            imu_accel_sigma: 0.0,
            imu_bias: 0.0,
            static_clutter_count: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radar_point_sigma < 0.0
            || self.radar_velocity_sigma < 0.0
            || self.imu_accel_sigma < 0.0
            || self.imu_bias < 0.0
        {
            return Err(CoreError::Config("noise sigmas must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.occlusion_probability) {
            return Err(CoreError::Config("occlusion_probability must be in [0,1]".into()));
        }
        if self.points_per_user_range[0] == 0
            || self.points_per_user_range[0] > self.points_per_user_range[1]
        {
            return Err(CoreError::Config("points_per_user_range must be a nonempty range".into()));
        }
        Ok(())
    }
}

impl Default for NoiseConfig {
    /// Default sensing quality used by the bundled scenes.
    fn default() -> Self {
        NoiseConfig {
            radar_point_sigma: 0.06,
            radar_velocity_sigma: 0.05,
            points_per_user_range: [8, 24],
            occlusion_probability: 0.05,
            imu_accel_sigma: 0.01,
            imu_bias: 0.005,
            static_clutter_count: 40,
        }
    }
}

/// Per-user motion settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserConfig {
    pub path: PathKind,
    /// Mean walking speed, m/s.
    pub speed: f64,
}

/// Full scenario description; everything downstream is a function of this.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Number of IMU-carrying users, N.
    pub num_users: usize,
    /// People visible to the radar but carrying no IMU.
    #[serde(default)]
    pub num_passengers: usize,
    /// Scenario length, seconds.
    pub duration: f64,
    #[serde(default = "default_radar_fps")]
    pub radar_fps: f64,
    #[serde(default = "default_imu_fps")]
    pub imu_fps: f64,
    /// Arena dimensions, meters; people are confined to it.
    #[serde(default = "default_arena")]
    pub arena: [f64; 2],
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Radar poses; at least one.
    #[serde(rename = "radar", default = "default_radars")]
    pub radar_poses: Vec<RadarPose>,
    /// Per-user settings. Missing entries are filled deterministically
    /// (random-walk paths, speeds spread over 0.9..1.4 m/s).
    #[serde(rename = "user", default)]
    pub users: Vec<UserConfig>,
}

fn default_radar_fps() -> f64 {
    8.0
}

fn default_imu_fps() -> f64 {
    100.0
}

fn default_arena() -> [f64; 2] {
    [20.0, 20.0]
}

fn default_radars() -> Vec<RadarPose> {
    vec![RadarPose { position: [0.0, 0.0], heading: std::f64::consts::FRAC_PI_4, height: 1.0 }]
}

impl ScenarioConfig {
    /// Minimal valid scenario used as a starting point by tests and tools.
    pub fn basic(num_users: usize, duration: f64, seed: u64) -> Self {
        ScenarioConfig {
            num_users,
            num_passengers: 0,
            duration,
            radar_fps: default_radar_fps(),
            imu_fps: default_imu_fps(),
            arena: default_arena(),
            seed,
            noise: NoiseConfig::default(),
            radar_poses: default_radars(),
            users: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_users < 1 {
            return Err(CoreError::Config("num_users must be >= 1".into()));
        }
        if self.duration <= 0.0 {
            return Err(CoreError::Config("duration must be > 0".into()));
        }
        if self.radar_fps <= 0.0 {
            return Err(CoreError::Config("radar_fps must be > 0".into()));
        }
        if self.imu_fps < self.radar_fps {
            return Err(CoreError::Config("imu_fps must be >= radar_fps".into()));
        }
        if self.arena[0] <= 0.0 || self.arena[1] <= 0.0 {
            return Err(CoreError::Config("arena must have positive area".into()));
        }
        if self.radar_poses.is_empty() {
            return Err(CoreError::Config("at least one radar pose required".into()));
        }
        if self.users.len() > self.num_users {
            return Err(CoreError::Config("more user entries than num_users".into()));
        }
        for u in &self.users {
            if u.speed <= 0.0 {
                return Err(CoreError::Config("user speed must be > 0".into()));
            }
        }
        self.noise.validate()
    }

    /// Effective per-user settings with missing entries filled.
    pub fn effective_users(&self) -> Vec<UserConfig> {
        let mut out = self.users.clone();
        for i in out.len()..self.num_users {
            let speed = 0.9 + 0.5 * ((i as f64 * 0.37) % 1.0);
            out.push(UserConfig { path: PathKind::RandomWalk, speed });
        }
        out
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| CoreError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_toml() {
        let cfg = ScenarioConfig::from_toml_str(
            r#"
            num_users = 3
            duration = 20.0
            seed = 7

            [[radar]]
            position = [0.0, 10.0]
            heading = 0.0

            [[user]]
            path = "straight"
            speed = 1.1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.num_users, 3);
        assert_eq!(cfg.radar_fps, 8.0);
        assert_eq!(cfg.imu_fps, 100.0);
        assert_eq!(cfg.effective_users().len(), 3);
        assert_eq!(cfg.users[0].path, PathKind::Straight);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ScenarioConfig::basic(0, 10.0, 1).validate().is_err());
        let mut cfg = ScenarioConfig::basic(2, 10.0, 1);
        cfg.imu_fps = 4.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::basic(2, 10.0, 1);
        cfg.arena = [0.0, 20.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::basic(2, 10.0, 1);
        cfg.noise.occlusion_probability = 1.5;
        assert!(cfg.validate().is_err());
    }
}
