//! Radar point-cloud synthesis.

use crate::config::{NoiseConfig, RadarPose};
use crate::error::Result;
use crate::types::{PointCloudFrame, RadarPoint, CLUTTER_LABEL};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Torso model: vertical cylinder, radius and height in meters.
pub const TORSO_RADIUS: f64 = 0.2;
pub const TORSO_HEIGHT: f64 = 1.7;

/// A user is a candidate for occlusion dropout when another body passes
/// within this distance of its radar ray.
const OCCLUSION_RAY_DISTANCE: f64 = 0.3;

/// Instantaneous state of one person as seen by the synthesizer.
#[derive(Debug, Clone, Copy)]
pub struct BodyState {
    /// Ground-plane position, meters.
    pub pos: [f64; 2],
    /// Ground-plane velocity, m/s.
    pub vel: [f64; 2],
}

/// Fixed background clutter layout, generated once per scenario.
#[derive(Debug, Clone)]
pub struct ClutterField {
    positions: Vec<[f64; 3]>,
}

impl ClutterField {
    pub fn generate(count: usize, arena: [f64; 2], rng: &mut ChaCha8Rng) -> Self {
        let positions = (0..count)
            .map(|_| {
                [
                    rng.gen_range(0.0..arena[0]),
                    rng.gen_range(0.0..arena[1]),
                    rng.gen_range(0.0..2.2),
                ]
            })
            .collect();
        ClutterField { positions }
    }
}

/// Synthesize one radar frame at time `t`.
///
/// Returns the frame plus per-point ground-truth labels: the index of the
/// contributing person, or [`CLUTTER_LABEL`] for background returns.
pub fn synth_radar_frame(
    bodies: &[BodyState],
    t: f64,
    radar: &RadarPose,
    noise: &NoiseConfig,
    clutter: &ClutterField,
    rng: &mut ChaCha8Rng,
) -> Result<(PointCloudFrame, Vec<i32>)> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let rp = [radar.position[0], radar.position[1], radar.height];

    for (idx, body) in bodies.iter().enumerate() {
        if occluded(idx, bodies, radar, noise, rng) {
            continue;
        }
        let center = [body.pos[0], body.pos[1]];
        // Direction from the body toward the radar; points reflect off the
        // facing half of the torso cylinder.
        let toward = [radar.position[0] - center[0], radar.position[1] - center[1]];
        let toward_angle = toward[1].atan2(toward[0]);
        let count = rng.gen_range(noise.points_per_user_range[0]..=noise.points_per_user_range[1]);
        for _ in 0..count {
            let surf_angle = toward_angle
                + rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
            let z = rng.gen_range(0.1..TORSO_HEIGHT - 0.1);
            let mut p = [
                center[0] + TORSO_RADIUS * surf_angle.cos(),
                center[1] + TORSO_RADIUS * surf_angle.sin(),
                z,
            ];
            for c in p.iter_mut() {
                *c += gauss(rng, noise.radar_point_sigma);
            }
            // Radial velocity: projection of the body velocity on the
            // radar -> point ray.
            let ray = [p[0] - rp[0], p[1] - rp[1], p[2] - rp[2]];
            let norm = (ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2]).sqrt();
            let radial = if norm > 0.0 {
                (body.vel[0] * ray[0] + body.vel[1] * ray[1]) / norm
            } else {
                0.0
            };
            let radial = radial + gauss(rng, noise.radar_velocity_sigma);
            points.push(RadarPoint::new(p[0], p[1], p[2], radial));
            labels.push(idx as i32);
        }
    }

    for pos in &clutter.positions {
        let v = rng.gen_range(-0.019..0.019);
        points.push(RadarPoint::new(pos[0], pos[1], pos[2], v));
        labels.push(CLUTTER_LABEL);
    }

    Ok((PointCloudFrame { timestamp: t, points }, labels))
}

/// Ray-proximity occlusion: user `idx` may be dropped when another body lies
/// near the segment radar -> user and closer to the radar.
fn occluded(
    idx: usize,
    bodies: &[BodyState],
    radar: &RadarPose,
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> bool {
    if noise.occlusion_probability == 0.0 {
        return false;
    }
    let target = bodies[idx].pos;
    let origin = radar.position;
    let ray = [target[0] - origin[0], target[1] - origin[1]];
    let len = (ray[0] * ray[0] + ray[1] * ray[1]).sqrt();
    if len == 0.0 {
        return false;
    }
    let dir = [ray[0] / len, ray[1] / len];
    for (j, other) in bodies.iter().enumerate() {
        if j == idx {
            continue;
        }
        let rel = [other.pos[0] - origin[0], other.pos[1] - origin[1]];
        let along = rel[0] * dir[0] + rel[1] * dir[1];
        if along <= 0.0 || along >= len {
            continue;
        }
        let perp = (rel[0] * rel[0] + rel[1] * rel[1] - along * along).max(0.0).sqrt();
        if perp < OCCLUSION_RAY_DISTANCE {
            return rng.gen::<f64>() < noise.occlusion_probability;
        }
    }
    false
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
    use rand::SeedableRng;

    fn zero_noise() -> NoiseConfig {
        NoiseConfig::zero()
    }

    fn radar_at_origin() -> RadarPose {
        RadarPose { position: [0.0, 0.0], heading: 0.0, height: 1.0 }
    }

    #[test]
    fn pure_radial_motion_gives_speed_on_xy_plane_rays() {
        // User at (5, 0) moving +x at 1 m/s, radar at origin. Points sit on
        // the torso near (5, 0); the ray has a z component (radar at 1 m,
        // points spread over the torso) so the projection is scaled by the
        // horizontal share of the ray.
        let bodies = [BodyState { pos: [5.0, 0.0], vel: [1.0, 0.0] }];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clutter = ClutterField::generate(0, [20.0, 20.0], &mut rng);
        let (frame, labels) =
            synth_radar_frame(&bodies, 0.0, &radar_at_origin(), &zero_noise(), &clutter, &mut rng)
                .unwrap();
        assert!(!frame.points.is_empty());
        assert!(labels.iter().all(|&l| l == 0));
        for p in &frame.points {
            let ray = [p.x, p.y, p.z - 1.0];
            let norm = (ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2]).sqrt();
            let expect = (1.0 * ray[0] + 0.0 * ray[1]) / norm;
            assert!((p.radial_velocity - expect).abs() < 1e-9);
            // Receding along +x from the origin: positive and near 1.
            assert!(p.radial_velocity > 0.9);
        }
    }

    #[test]
    fn tangential_motion_gives_near_zero_radial_velocity() {
        let bodies = [BodyState { pos: [5.0, 0.0], vel: [0.0, 1.0] }];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let clutter = ClutterField::generate(0, [20.0, 20.0], &mut rng);
        let (frame, _) =
            synth_radar_frame(&bodies, 0.0, &radar_at_origin(), &zero_noise(), &clutter, &mut rng)
                .unwrap();
        for p in &frame.points {
            // The torso has finite extent, so projections are small, not 0.
            assert!(p.radial_velocity.abs() < 0.1, "radial {}", p.radial_velocity);
        }
    }

    #[test]
    fn clutter_count_and_speed() {
        let bodies = [BodyState { pos: [5.0, 5.0], vel: [1.0, 0.0] }];
        let mut noise = zero_noise();
        noise.static_clutter_count = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clutter = ClutterField::generate(10, [20.0, 20.0], &mut rng);
        let (frame, labels) =
            synth_radar_frame(&bodies, 0.0, &radar_at_origin(), &noise, &clutter, &mut rng)
                .unwrap();
        let n_clutter = labels.iter().filter(|&&l| l == CLUTTER_LABEL).count();
        assert_eq!(n_clutter, 10);
        let slow = frame
            .points
            .iter()
            .zip(&labels)
            .filter(|(p, &l)| l == CLUTTER_LABEL && p.radial_velocity.abs() < 0.02)
            .count();
        assert_eq!(slow, 10);
    }

    #[test]
    fn occlusion_drops_shadowed_user() {
        // User 1 sits directly behind user 0 on the same ray.
        let bodies = [
            BodyState { pos: [4.0, 0.0], vel: [1.0, 0.0] },
            BodyState { pos: [8.0, 0.0], vel: [1.0, 0.0] },
        ];
        let mut noise = zero_noise();
        noise.occlusion_probability = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clutter = ClutterField::generate(0, [20.0, 20.0], &mut rng);
        let (_, labels) =
            synth_radar_frame(&bodies, 0.0, &radar_at_origin(), &noise, &clutter, &mut rng)
                .unwrap();
        assert!(labels.iter().any(|&l| l == 0));
        assert!(labels.iter().all(|&l| l != 1));
    }
}
