//! Trace maps: trajectory windows encoded as frame-count grids and RGB
//! images, plus IMU dead reckoning.

use crate::error::{CoreError, Result};
use crate::sim::ImuTrace;
use crate::types::{TrajSample, Trajectory2D};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Side length of the crop around the trajectory origin, meters.
pub const CROP_METERS: f64 = 20.0;
/// Grid cell size for radar-derived maps.
pub const RHO_RADAR: f64 = 0.5;
/// Grid cell size for IMU-derived maps.
pub const RHO_IMU: f64 = 0.2;
/// Paper-scale image side.
pub const RESIZE_FULL: usize = 193;
/// Desk-scale training image side.
pub const RESIZE_DESK: usize = 64;

/// Zero-velocity update: acceleration magnitude floor and dwell time.
const ZUPT_ACCEL: f64 = 0.05;
const ZUPT_SECONDS: f64 = 0.2;

/// Frame-count grid of one trajectory window.
///
/// `values[cell]` sums `round(fs * (t - t0))` over the samples that fall in
/// the cell; `occupied` distinguishes a cell crossed only at `t0` (value 0)
/// from one never crossed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMap {
    pub size: usize,
    pub values: Vec<u32>,
    pub occupied: Vec<bool>,
    pub rho: f64,
    pub origin: [f64; 2],
    pub fs: f64,
    pub window: [f64; 2],
    /// Samples dropped for leaving the crop.
    pub dropped: usize,
}

impl TraceMap {
    pub fn value_at(&self, gx: usize, gy: usize) -> u32 {
        self.values[gy * self.size + gx]
    }

    pub fn occupied_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for gy in 0..self.size {
            for gx in 0..self.size {
                if self.occupied[gy * self.size + gx] {
                    out.push((gx, gy));
                }
            }
        }
        out
    }
}

/// RGB image form of a trace map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceImage {
    pub size: usize,
    /// Row-major RGB bytes, `size * size * 3`.
    pub pixels: Vec<u8>,
}

/// Rasterize a trajectory window into a trace map.
///
/// The origin is the first sample inside the window; the grid covers the
/// square crop centered there. Samples leaving the crop are dropped and
/// counted.
pub fn rasterize(trajectory: &Trajectory2D, rho: f64, fs: f64, window: [f64; 2]) -> Result<TraceMap> {
    if rho <= 0.0 {
        return Err(CoreError::Config("rho must be > 0".into()));
    }
    let samples: Vec<&TrajSample> = trajectory
        .samples
        .iter()
        .filter(|s| s.t >= window[0] && s.t < window[1])
        .collect();
    let half_cells = (CROP_METERS / 2.0 / rho).round() as i64;
    let size = (2 * half_cells) as usize;
    let mut map = TraceMap {
        size,
        values: vec![0; size * size],
        occupied: vec![false; size * size],
        rho,
        origin: [0.0, 0.0],
        fs,
        window,
        dropped: 0,
    };
    let Some(first) = samples.first() else {
        return Ok(map);
    };
    map.origin = [first.x, first.y];
    let t0 = window[0];
    for s in &samples {
        let gx = ((s.x - map.origin[0]) / rho).floor() as i64 + half_cells;
        let gy = ((s.y - map.origin[1]) / rho).floor() as i64 + half_cells;
        if gx < 0 || gy < 0 || gx >= size as i64 || gy >= size as i64 {
            map.dropped += 1;
            continue;
        }
        let cell = gy as usize * size + gx as usize;
        map.values[cell] += (fs * (s.t - t0)).round() as u32;
        map.occupied[cell] = true;
    }
    Ok(map)
}

/// Spill a frame-count value across the three 8-bit channels: R saturates
/// first, then G, then B.
pub fn spill_rgb(v: u32) -> [u8; 3] {
    let r = v.min(255) as u8;
    let g = v.saturating_sub(255).min(255) as u8;
    let b = v.saturating_sub(510).min(255) as u8;
    [r, g, b]
}

/// Convert a trace map to an RGB image, nearest-neighbor resized to
/// `resize_target` per side.
pub fn to_image(map: &TraceMap, resize_target: usize) -> TraceImage {
    let mut pixels = vec![0u8; resize_target * resize_target * 3];
    let src = map.size;
    for dy in 0..resize_target {
        let sy = ((dy as f64 + 0.5) * src as f64 / resize_target as f64) as usize;
        for dx in 0..resize_target {
            let sx = ((dx as f64 + 0.5) * src as f64 / resize_target as f64) as usize;
            let v = map.values[sy.min(src - 1) * src + sx.min(src - 1)];
            let rgb = spill_rgb(v);
            let off = (dy * resize_target + dx) * 3;
            pixels[off..off + 3].copy_from_slice(&rgb);
        }
    }
    TraceImage { size: resize_target, pixels }
}

/// Dead-reckon an IMU window: rotate body accelerations to the world frame,
/// double-integrate from zero initial velocity, and reset velocity whenever
/// the acceleration magnitude stays below 0.05 m/s^2 for at least 0.2 s.
pub fn imu_dead_reckon(trace: &ImuTrace, window: [f64; 2]) -> Result<Trajectory2D> {
    let samples: Vec<_> =
        trace.samples.iter().filter(|s| s.t >= window[0] && s.t < window[1]).collect();
    if samples.len() < 3 {
        return Err(CoreError::Data("dead reckoning window has fewer than 3 samples".into()));
    }
    let dt = samples[1].t - samples[0].t;
    let zupt_run = (ZUPT_SECONDS / dt).ceil() as usize;
    let mut vel = [0.0f64; 2];
    let mut pos = [0.0f64; 2];
    let mut still_run = 0usize;
    let mut out = Vec::with_capacity(samples.len());
    for s in &samples {
        let world = s.quat.rotate(s.accel);
        let mag = (world[0] * world[0] + world[1] * world[1] + world[2] * world[2]).sqrt();
        if mag < ZUPT_ACCEL {
            still_run += 1;
        } else {
            still_run = 0;
        }
        vel[0] += world[0] * dt;
        vel[1] += world[1] * dt;
        if still_run >= zupt_run {
            vel = [0.0, 0.0];
        }
        pos[0] += vel[0] * dt;
        pos[1] += vel[1] * dt;
        out.push(TrajSample { t: s.t, x: pos[0], y: pos[1] });
    }
    Ok(Trajectory2D { samples: out })
}

/// Write a trace image as binary PPM (P6).
pub fn write_ppm<W: Write>(image: &TraceImage, mut w: W) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", image.size, image.size)?;
    w.write_all(&image.pixels)?;
    Ok(())
}

/// Read a binary PPM (P6) written by [`write_ppm`].
pub fn read_ppm<R: Read>(mut r: R) -> Result<TraceImage> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut newlines = 0usize;
    let mut header_end = None;
    for (i, b) in data.iter().enumerate() {
        if *b == b'\n' {
            newlines += 1;
            if newlines == 3 {
                header_end = Some(i + 1);
                break;
            }
        }
    }
    let header_end = header_end.ok_or_else(|| CoreError::Data("truncated ppm header".into()))?;
    let header = std::str::from_utf8(&data[..header_end])
        .map_err(|_| CoreError::Data("bad ppm header".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("P6") {
        return Err(CoreError::Data("not a P6 ppm".into()));
    }
    let dims: Vec<usize> = lines
        .next()
        .unwrap_or("")
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    if dims.len() != 2 || dims[0] != dims[1] {
        return Err(CoreError::Data("expected a square ppm".into()));
    }
    let size = dims[0];
    let body = &data[header_end..];
    if body.len() != size * size * 3 {
        return Err(CoreError::Data("ppm body size mismatch".into()));
    }
    Ok(TraceImage { size, pixels: body.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::imu::ImuSample;
    use crate::types::Quat;

    fn make_trace(accels: Vec<[f64; 3]>, dt: f64) -> ImuTrace {
        ImuTrace {
            pid: 1,
            samples: accels
                .into_iter()
                .enumerate()
                .map(|(k, a)| ImuSample { t: k as f64 * dt, accel: a, quat: Quat::IDENTITY })
                .collect(),
            speed_stream: Vec::new(),
        }
    }

    #[test]
    fn zero_accel_stays_at_origin() {
        let trace = make_trace(vec![[0.0; 3]; 100], 0.01);
        let traj = imu_dead_reckon(&trace, [0.0, 1.0]).unwrap();
        for s in &traj.samples {
            assert!(s.x.abs() < 1e-12 && s.y.abs() < 1e-12);
        }
    }

    #[test]
    fn bang_bang_accel_matches_kinematics() {
        // a for t, then -a for t: displacement a t^2 when stopping.
        let a = 0.5;
        let t = 1.0;
        let dt = 0.001;
        let n = (t / dt) as usize;
        let mut accels = vec![[a, 0.0, 0.0]; n];
        accels.extend(vec![[-a, 0.0, 0.0]; n]);
        let trace = make_trace(accels, dt);
        let traj = imu_dead_reckon(&trace, [0.0, 2.0 * t]).unwrap();
        let end = traj.samples.last().unwrap();
        assert!((end.x - a * t * t).abs() < 5e-3, "end {} vs {}", end.x, a * t * t);
    }

    #[test]
    fn constant_bias_drift_is_quadratic() {
        // Bias above the ZUPT floor never triggers a reset: drift b T^2 / 2.
        let b = 0.2;
        let total = 2.0;
        let dt = 0.01;
        let trace = make_trace(vec![[b, 0.0, 0.0]; (total / dt) as usize], dt);
        let traj = imu_dead_reckon(&trace, [0.0, total]).unwrap();
        let end = traj.samples.last().unwrap();
        let expect = 0.5 * b * total * total;
        assert!((end.x - expect).abs() / expect < 0.02, "drift {} vs {}", end.x, expect);
    }

    #[test]
    fn zupt_floors_velocity() {
        // Accelerate hard, then go quiet: ZUPT must stop the drift.
        let dt = 0.01;
        let mut accels = vec![[1.0, 0.0, 0.0]; 50];
        accels.extend(vec![[0.0, 0.0, 0.0]; 200]);
        let trace = make_trace(accels, dt);
        let traj = imu_dead_reckon(&trace, [0.0, 2.5]).unwrap();
        let at_1s = traj.samples.iter().find(|s| s.t >= 1.0).unwrap();
        let end = traj.samples.last().unwrap();
        assert!((end.x - at_1s.x).abs() < 1e-9, "still drifting after ZUPT");
    }

    #[test]
    fn rasterize_accumulates_frame_counts() {
        // Same cell crossed at t0 and t0 + 1 s with fs = 8: value 0 + 8.
        let traj = Trajectory2D {
            samples: vec![
                TrajSample { t: 0.0, x: 0.05, y: 0.05 },
                TrajSample { t: 0.5, x: 3.0, y: 0.05 },
                TrajSample { t: 1.0, x: 0.05, y: 0.05 },
            ],
        };
        let map = rasterize(&traj, 0.5, 8.0, [0.0, 2.0]).unwrap();
        let half = map.size / 2;
        assert_eq!(map.value_at(half, half), 8);
        assert!(map.occupied[half * map.size + half]);
    }

    #[test]
    fn rasterize_t0_crossing_is_occupied_zero() {
        let traj = Trajectory2D {
            samples: vec![
                TrajSample { t: 0.0, x: 0.0, y: 0.0 },
                TrajSample { t: 1.0, x: 2.0, y: 0.0 },
            ],
        };
        let map = rasterize(&traj, 0.5, 8.0, [0.0, 2.0]).unwrap();
        let half = map.size / 2;
        assert_eq!(map.value_at(half, half), 0);
        assert!(map.occupied[half * map.size + half]);
        // The cell visited at t = 1 is occupied with value 8.
        let cells = map.occupied_cells();
        assert_eq!(cells.len(), 2);
    }

    #[test]
    fn stationary_trajectory_occupies_one_cell() {
        let traj = Trajectory2D {
            samples: (0..50)
                .map(|k| TrajSample { t: k as f64 * 0.01, x: 1.0, y: 1.0 })
                .collect(),
        };
        let map = rasterize(&traj, 0.2, 100.0, [0.0, 1.0]).unwrap();
        assert_eq!(map.occupied_cells().len(), 1);
    }

    #[test]
    fn translation_invariance() {
        // Steps chosen off the cell-boundary lattice; exactly-on-boundary
        // samples are float-sensitive under translation by construction.
        let base: Vec<TrajSample> = (0..100)
            .map(|k| TrajSample {
                t: k as f64 * 0.01,
                x: 0.0314159 * k as f64,
                y: (k as f64 * 0.05).sin() * 1.7,
            })
            .collect();
        let shifted: Vec<TrajSample> =
            base.iter().map(|s| TrajSample { t: s.t, x: s.x + 7.3, y: s.y - 4.1 }).collect();
        let a = rasterize(&Trajectory2D { samples: base }, 0.2, 100.0, [0.0, 1.0]).unwrap();
        let b = rasterize(&Trajectory2D { samples: shifted }, 0.2, 100.0, [0.0, 1.0]).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.occupied, b.occupied);
    }

    #[test]
    fn monotone_recency_along_path() {
        // Straight walk through distinct cells: values increase with visit order.
        let traj = Trajectory2D {
            samples: (0..100)
                .map(|k| TrajSample { t: k as f64 * 0.01, x: 0.05 * k as f64, y: 0.0 })
                .collect(),
        };
        let map = rasterize(&traj, 0.2, 100.0, [0.0, 1.0]).unwrap();
        let half = map.size / 2;
        let mut prev = -1i64;
        for gx in half..map.size {
            let idx = half * map.size + gx;
            if map.occupied[idx] {
                assert!((map.values[idx] as i64) > prev);
                prev = map.values[idx] as i64;
            }
        }
    }

    #[test]
    fn spill_rule() {
        assert_eq!(spill_rgb(8), [8, 0, 0]);
        assert_eq!(spill_rgb(0), [0, 0, 0]);
        assert_eq!(spill_rgb(300), [255, 45, 0]);
        assert_eq!(spill_rgb(600), [255, 255, 90]);
        assert_eq!(spill_rgb(100_000), [255, 255, 255]);
    }

    #[test]
    fn ppm_round_trip() {
        let traj = Trajectory2D {
            samples: (0..100)
                .map(|k| TrajSample { t: k as f64 * 0.01, x: 0.05 * k as f64, y: 0.02 * k as f64 })
                .collect(),
        };
        let map = rasterize(&traj, 0.2, 100.0, [0.0, 1.0]).unwrap();
        let img = to_image(&map, 64);
        let mut buf = Vec::new();
        write_ppm(&img, &mut buf).unwrap();
        let back = read_ppm(&buf[..]).unwrap();
        assert_eq!(img, back);
    }
}
