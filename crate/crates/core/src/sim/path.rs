//! Ground-truth trajectory generation.
//!
//! All walkers move stop-and-go: motion legs use a smooth sin^2 speed bump
//! that starts and ends at rest, separated by short pauses. The pauses are
//! what lets acceleration-gated zero-velocity updates anchor IMU dead
//! reckoning; the bump keeps instantaneous speed below the configured cap.

use crate::config::PathKind;
use crate::error::{CoreError, Result};
use crate::types::{TrajSample, Trajectory2D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Walking-pattern parameters of a gait-textured user.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaitParams {
    /// Step frequency, Hz.
    pub step_frequency: f64,
    /// Step length, meters.
    pub step_length: f64,
    /// Start phase, radians.
    pub phase: f64,
}

impl GaitParams {
    /// Mean walking speed implied by the gait.
    pub fn mean_speed(&self) -> f64 {
        self.step_frequency * self.step_length
    }
}

/// Stance time between steps; long enough to trigger a zero-velocity update.
pub const STANCE_SECONDS: f64 = 0.25;

/// Margin kept between walkers and the arena walls.
const WALL_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy)]
enum Leg {
    Pause { duration: f64 },
    /// Smooth bump from rest to rest covering `to - from` in `duration`.
    Move { from: [f64; 2], to: [f64; 2], duration: f64 },
    /// Constant-velocity glide (used by the straight kind only).
    Glide { from: [f64; 2], to: [f64; 2], duration: f64 },
}

impl Leg {
    fn duration(&self) -> f64 {
        match *self {
            Leg::Pause { duration } => duration,
            Leg::Move { duration, .. } => duration,
            Leg::Glide { duration, .. } => duration,
        }
    }

    fn position(&self, tau: f64, anchor: [f64; 2]) -> [f64; 2] {
        match *self {
            Leg::Pause { .. } => anchor,
            Leg::Move { from, to, duration } => {
                if duration <= 0.0 {
                    return to;
                }
                // Displacement fraction of a sin^2 speed bump:
                // s(tau) = tau/T - sin(2 pi tau / T) / (2 pi), in [0, 1].
                let x = (tau / duration).clamp(0.0, 1.0);
                let s = x - (2.0 * std::f64::consts::PI * x).sin() / (2.0 * std::f64::consts::PI);
                [from[0] + (to[0] - from[0]) * s, from[1] + (to[1] - from[1]) * s]
            }
            Leg::Glide { from, to, duration } => {
                if duration <= 0.0 {
                    return to;
                }
                let x = (tau / duration).clamp(0.0, 1.0);
                [from[0] + (to[0] - from[0]) * x, from[1] + (to[1] - from[1]) * x]
            }
        }
    }
}

/// Plan of one walker: a list of legs starting at `t = 0`.
struct LegPlan {
    legs: Vec<Leg>,
}

impl LegPlan {
    fn sample(&self, duration: f64, fps: f64) -> Trajectory2D {
        let n = (duration * fps).round() as usize + 1;
        let mut samples = Vec::with_capacity(n);
        let mut leg_idx = 0;
        let mut leg_start = 0.0;
        let mut anchor = match self.legs.first() {
            Some(Leg::Pause { .. }) | None => [0.0, 0.0],
            Some(Leg::Move { from, .. }) | Some(Leg::Glide { from, .. }) => *from,
        };
        for k in 0..n {
            let t = k as f64 / fps;
            while leg_idx < self.legs.len() && t >= leg_start + self.legs[leg_idx].duration() {
                anchor = self.legs[leg_idx].position(self.legs[leg_idx].duration(), anchor);
                leg_start += self.legs[leg_idx].duration();
                leg_idx += 1;
            }
            let pos = if leg_idx < self.legs.len() {
                self.legs[leg_idx].position(t - leg_start, anchor)
            } else {
                anchor
            };
            samples.push(TrajSample { t, x: pos[0], y: pos[1] });
        }
        Trajectory2D { samples }
    }
}

fn inner_bounds(arena: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    ([WALL_MARGIN, WALL_MARGIN], [arena[0] - WALL_MARGIN, arena[1] - WALL_MARGIN])
}

fn clamp_to(p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])]
}

/// Generate a ground-truth trajectory.
///
/// Deterministic in `(kind, duration, speed, fps, seed, arena)`; the per-sample
/// displacement never exceeds `speed / fps`.
pub fn gen_path(
    kind: PathKind,
    duration: f64,
    speed: f64,
    fps: f64,
    seed: u64,
    arena: [f64; 2],
) -> Result<Trajectory2D> {
    Ok(gen_path_slot(kind, duration, speed, fps, seed, arena, 0)?.0)
}

/// Like [`gen_path`] but aware of the user's slot in the scenario, which
/// drives side-by-side pairing (consecutive slots share a patrol baseline,
/// offset laterally, with distinct cadences). Returns the gait parameters
/// for gait-textured kinds.
pub fn gen_path_slot(
    kind: PathKind,
    duration: f64,
    speed: f64,
    fps: f64,
    seed: u64,
    arena: [f64; 2],
    slot: usize,
) -> Result<(Trajectory2D, Option<GaitParams>)> {
    if speed <= 0.0 {
        return Err(CoreError::Config("path speed must be > 0".into()));
    }
    if duration <= 0.0 {
        return Err(CoreError::Config("path duration must be > 0".into()));
    }
    if arena[0] <= 2.0 * WALL_MARGIN || arena[1] <= 2.0 * WALL_MARGIN {
        return Err(CoreError::Config("arena too small for walkers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x70617468, slot as u64));
    let (plan, gait) = match kind {
        PathKind::RandomWalk => (random_walk_plan(&mut rng, duration, speed, arena), None),
        PathKind::SquareZigzag => (zigzag_plan(duration, speed, arena), None),
        PathKind::Straight => (straight_plan(&mut rng, duration, speed, arena), None),
        PathKind::SideBySide => {
            // Consecutive slots pair up and share the baseline seed.
            let pair = slot / 2;
            let mut pair_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x73696465, pair as u64));
            let side = if slot % 2 == 0 { -1.0 } else { 1.0 };
            let gait = GaitParams {
                step_frequency: if slot % 2 == 0 { 1.0 } else { 1.4 },
                step_length: 0.0, // filled below from the common mean speed
                phase: pair_rng.gen_range(0.0..std::f64::consts::TAU),
            };
            let mean_speed = 0.3 * speed;
            let gait = GaitParams { step_length: mean_speed / gait.step_frequency, ..gait };
            (side_by_side_plan(&mut pair_rng, duration, gait, arena, side), Some(gait))
        }
    };
    Ok((plan.sample(duration, fps), gait))
}

fn mix_seed(base: u64, salt: u64, extra: u64) -> u64 {
    // splitmix64 round over the xored inputs.
    let mut z = base ^ salt.wrapping_mul(0x9e3779b97f4a7c15) ^ extra.wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Waypoint walk: pause, then a smooth bump to a random nearby waypoint.
fn random_walk_plan(rng: &mut ChaCha8Rng, duration: f64, speed: f64, arena: [f64; 2]) -> LegPlan {
    let (lo, hi) = inner_bounds(arena);
    let start = [
        rng.gen_range(lo[0] + 1.0..hi[0] - 1.0),
        rng.gen_range(lo[1] + 1.0..hi[1] - 1.0),
    ];
    let mut legs = vec![Leg::Pause { duration: 0.5 }];
    let mut pos = start;
    let mut elapsed = 0.5;
    // Over-generate legs past the duration; sampling stops at `duration`.
    while elapsed < duration {
        let mut target;
        loop {
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let leg_len = rng.gen_range(1.5..3.5);
            target = [pos[0] + heading.cos() * leg_len, pos[1] + heading.sin() * leg_len];
            if target[0] > lo[0] && target[0] < hi[0] && target[1] > lo[1] && target[1] < hi[1] {
                break;
            }
        }
        let dist = ((target[0] - pos[0]).powi(2) + (target[1] - pos[1]).powi(2)).sqrt();
        // Peak bump speed equals the configured cap; mean is half of it.
        let move_dur = 2.0 * dist / speed;
        legs.push(Leg::Move { from: pos, to: target, duration: move_dur });
        elapsed += move_dur;
        let pause = rng.gen_range(0.3..0.6);
        legs.push(Leg::Pause { duration: pause });
        elapsed += pause;
        pos = target;
    }
    // `from` of the first Move provides the start anchor for the leading pause.
    legs.insert(0, Leg::Move { from: start, to: start, duration: 0.0 });
    LegPlan { legs }
}

/// Lawn-mower sweep of the arena with pauses at every corner.
fn zigzag_plan(duration: f64, speed: f64, arena: [f64; 2]) -> LegPlan {
    let (lo, hi) = inner_bounds(arena);
    let row_gap = 2.5;
    let mut waypoints = Vec::new();
    let mut y = lo[1] + 0.5;
    let mut left_to_right = true;
    while y < hi[1] {
        let (a, b) = if left_to_right { (lo[0] + 0.5, hi[0] - 0.5) } else { (hi[0] - 0.5, lo[0] + 0.5) };
        waypoints.push([a, y]);
        waypoints.push([b, y]);
        left_to_right = !left_to_right;
        y += row_gap;
    }
    let mut legs = vec![Leg::Move { from: waypoints[0], to: waypoints[0], duration: 0.0 }];
    legs.push(Leg::Pause { duration: 0.5 });
    let mut elapsed = 0.5;
    let mut idx = 0;
    while elapsed < duration {
        let from = waypoints[idx % waypoints.len()];
        let to = waypoints[(idx + 1) % waypoints.len()];
        let dist = ((to[0] - from[0]).powi(2) + (to[1] - from[1]).powi(2)).sqrt();
        let move_dur = 2.0 * dist / speed;
        legs.push(Leg::Move { from, to, duration: move_dur });
        legs.push(Leg::Pause { duration: 0.4 });
        elapsed += move_dur + 0.4;
        idx += 1;
    }
    LegPlan { legs }
}

/// Constant-velocity straight walk, bouncing off the walls when needed.
fn straight_plan(rng: &mut ChaCha8Rng, duration: f64, speed: f64, arena: [f64; 2]) -> LegPlan {
    let (lo, hi) = inner_bounds(arena);
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let dir = [heading.cos(), heading.sin()];
    let run = speed * duration;
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    // Center the run on the arena so short runs fit without bouncing.
    let start = clamp_to(
        [center[0] - dir[0] * run / 2.0, center[1] - dir[1] * run / 2.0],
        lo,
        hi,
    );
    let mut legs = Vec::new();
    let mut pos = start;
    let mut d = dir;
    // If clamping pushed the start onto a wall, point the heading inward.
    for axis in 0..2 {
        if pos[axis] <= lo[axis] {
            d[axis] = d[axis].abs();
        } else if pos[axis] >= hi[axis] {
            d[axis] = -d[axis].abs();
        }
    }
    let mut remaining = duration;
    while remaining > 1e-9 {
        // Time until the ray exits the inner box along each axis.
        let mut t_exit = remaining;
        for axis in 0..2 {
            if d[axis].abs() > 1e-12 {
                let wall = if d[axis] > 0.0 { hi[axis] } else { lo[axis] };
                let t = (wall - pos[axis]) / (d[axis] * speed);
                if t > 1e-9 {
                    t_exit = t_exit.min(t);
                }
            }
        }
        let to = [pos[0] + d[0] * speed * t_exit, pos[1] + d[1] * speed * t_exit];
        legs.push(Leg::Glide { from: pos, to, duration: t_exit });
        remaining -= t_exit;
        // Reflect off whichever wall was hit.
        for axis in 0..2 {
            if (to[axis] - lo[axis]).abs() < 1e-9 || (to[axis] - hi[axis]).abs() < 1e-9 {
                d[axis] = -d[axis];
            }
        }
        pos = to;
    }
    LegPlan { legs }
}

/// Patrol along a shared straight baseline with per-step gait texture.
fn side_by_side_plan(
    rng: &mut ChaCha8Rng,
    duration: f64,
    gait: GaitParams,
    arena: [f64; 2],
    side: f64,
) -> LegPlan {
    let (lo, hi) = inner_bounds(arena);
    // Baseline endpoints span most of the arena; shared by the pair.
    let angle: f64 = rng.gen_range(-0.3..0.3);
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let half = (hi[0] - lo[0]) / 2.0 - 1.5;
    let dirv = [angle.cos(), angle.sin()];
    let a = [mid[0] - dirv[0] * half, mid[1] - dirv[1] * half];
    let b = [mid[0] + dirv[0] * half, mid[1] + dirv[1] * half];
    // Lateral offset keeps the pair ~0.6 m apart.
    let perp = [-dirv[1], dirv[0]];
    let offset = [perp[0] * 0.3 * side, perp[1] * 0.3 * side];

    let step_period = 1.0 / gait.step_frequency;
    let move_dur = step_period - STANCE_SECONDS;
    assert!(move_dur > 0.05, "gait frequency too high for the stance time");

    let mut legs = Vec::new();
    let mut elapsed = 0.0;
    let mut pos = [a[0] + offset[0], a[1] + offset[1]];
    let goal_base = b;
    let mut toward_b = true;
    legs.push(Leg::Move { from: pos, to: pos, duration: 0.0 });
    legs.push(Leg::Pause { duration: 0.5 });
    elapsed += 0.5;
    let mut goal = [goal_base[0] + offset[0], goal_base[1] + offset[1]];
    while elapsed < duration {
        let to_goal = [goal[0] - pos[0], goal[1] - pos[1]];
        let dist = (to_goal[0] * to_goal[0] + to_goal[1] * to_goal[1]).sqrt();
        if dist < gait.step_length {
            // Turn around at the end of the baseline.
            toward_b = !toward_b;
            let base = if toward_b { b } else { a };
            goal = [base[0] + offset[0], base[1] + offset[1]];
            legs.push(Leg::Pause { duration: 0.5 });
            elapsed += 0.5;
            continue;
        }
        let dir = [to_goal[0] / dist, to_goal[1] / dist];
        let to = [pos[0] + dir[0] * gait.step_length, pos[1] + dir[1] * gait.step_length];
        legs.push(Leg::Move { from: pos, to, duration: move_dur });
        legs.push(Leg::Pause { duration: STANCE_SECONDS });
        elapsed += step_period;
        pos = to;
    }
    LegPlan { legs }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FPS: f64 = 100.0;
    const ARENA: [f64; 2] = [20.0, 20.0];

    fn max_step(traj: &Trajectory2D) -> f64 {
        traj.samples
            .windows(2)
            .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    #[test]
    fn straight_endpoint_matches_kinematics() {
        let traj = gen_path(PathKind::Straight, 10.0, 1.0, FPS, 3, ARENA).unwrap();
        let first = traj.samples[0];
        let last = traj.samples[traj.samples.len() - 1];
        let d = ((last.x - first.x).powi(2) + (last.y - first.y).powi(2)).sqrt();
        assert!((d - 10.0).abs() < 1e-6, "straight displacement {d}");
    }

    #[test]
    fn same_seed_reproduces() {
        for kind in [PathKind::RandomWalk, PathKind::SquareZigzag, PathKind::Straight, PathKind::SideBySide] {
            let a = gen_path(kind, 12.0, 1.2, FPS, 99, ARENA).unwrap();
            let b = gen_path(kind, 12.0, 1.2, FPS, 99, ARENA).unwrap();
            assert_eq!(a.samples.len(), b.samples.len());
            for (s, t) in a.samples.iter().zip(&b.samples) {
                assert_eq!((s.x, s.y), (t.x, t.y));
            }
        }
    }

    #[test]
    fn random_walk_respects_speed_cap() {
        let speed = 1.3;
        let traj = gen_path(PathKind::RandomWalk, 12.0, speed, FPS, 42, ARENA).unwrap();
        assert!(max_step(&traj) <= speed / FPS + 1e-9);
    }

    #[test]
    fn all_kinds_stay_in_arena_and_respect_cap() {
        for (i, kind) in [PathKind::RandomWalk, PathKind::SquareZigzag, PathKind::Straight, PathKind::SideBySide]
            .into_iter()
            .enumerate()
        {
            for seed in 0..5u64 {
                let speed = 1.0 + 0.1 * i as f64;
                let traj = gen_path(kind, 25.0, speed, FPS, seed, ARENA).unwrap();
                assert!(max_step(&traj) <= speed / FPS + 1e-9, "{kind:?} seed {seed}");
                for s in &traj.samples {
                    assert!(s.x >= 0.0 && s.x <= ARENA[0] && s.y >= 0.0 && s.y <= ARENA[1]);
                }
            }
        }
    }

    #[test]
    fn side_by_side_pair_stays_close_with_distinct_cadence() {
        let (a, ga) = gen_path_slot(PathKind::SideBySide, 20.0, 1.2, FPS, 5, ARENA, 0).unwrap();
        let (b, gb) = gen_path_slot(PathKind::SideBySide, 20.0, 1.2, FPS, 5, ARENA, 1).unwrap();
        let (ga, gb) = (ga.unwrap(), gb.unwrap());
        assert!((ga.step_frequency - gb.step_frequency).abs() > 0.2);
        // Same mean progression speed keeps them together.
        assert!((ga.mean_speed() - gb.mean_speed()).abs() < 1e-9);
        let mut max_gap = 0.0f64;
        for (s, t) in a.samples.iter().zip(&b.samples) {
            let gap = ((s.x - t.x).powi(2) + (s.y - t.y).powi(2)).sqrt();
            max_gap = max_gap.max(gap);
        }
        assert!(max_gap < 2.0, "pair separated by {max_gap}");
    }

    #[test]
    fn zero_area_arena_is_config_error() {
        assert!(gen_path(PathKind::RandomWalk, 5.0, 1.0, FPS, 1, [0.0, 0.0]).is_err());
    }

    #[test]
    fn pauses_exist_for_zupt() {
        // A random walk must contain runs of >= 0.2 s with no motion.
        let traj = gen_path(PathKind::RandomWalk, 15.0, 1.2, FPS, 7, ARENA).unwrap();
        let mut longest_still = 0usize;
        let mut run = 0usize;
        for w in traj.samples.windows(2) {
            let step = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
            if step < 1e-12 {
                run += 1;
                longest_still = longest_still.max(run);
            } else {
                run = 0;
            }
        }
        assert!(longest_still as f64 / FPS >= 0.2, "longest pause {longest_still} samples");
    }
}
