//! Per-frame radar point-cloud processing: static removal, Kalman-seeded
//! clustering, PID transfer, outlier cleanup, and the ARI clustering metric.

pub mod rkf;

pub use rkf::{psd_clip, TrackState, DEFAULT_COV_W_DIAG};

use crate::config::RadarPose;
use crate::error::{CoreError, Result};
use crate::types::{cartesian_to_spherical, spherical_to_cartesian, Pid, PointCloudFrame, RadarPoint};
use serde::{Deserialize, Serialize};

/// Histogram bin count for the adaptive static threshold.
pub const SPEED_HIST_BINS: usize = 32;

/// A pseudo-identified cluster of one frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledCluster {
    pub pid: Pid,
    pub points: Vec<RadarPoint>,
    /// Centroid in radar-centered spherical coordinates `[r, theta, phi]`.
    pub centroid: [f64; 3],
    /// Centroid in world Cartesian coordinates.
    pub centroid_xyz: [f64; 3],
    /// Mean of per-point radial-velocity vectors, world frame.
    pub centroid_velocity: [f64; 3],
    /// Set when outlier removal emptied the cluster.
    pub degenerate: bool,
}

impl LabeledCluster {
    /// Build a cluster from points; the radar origin fixes the spherical
    /// frame and the per-point ray directions.
    pub fn from_points(pid: Pid, points: Vec<RadarPoint>, radar_origin: [f64; 3]) -> Self {
        assert!(!points.is_empty(), "cluster must be non-empty");
        let centroid_xyz = centroid_of(&points);
        let rel = [
            centroid_xyz[0] - radar_origin[0],
            centroid_xyz[1] - radar_origin[1],
            centroid_xyz[2] - radar_origin[2],
        ];
        let centroid = cartesian_to_spherical(rel);
        let mut vel = [0.0f64; 3];
        for p in &points {
            let v = radial_velocity_vector(p, radar_origin);
            for i in 0..3 {
                vel[i] += v[i];
            }
        }
        for v in vel.iter_mut() {
            *v /= points.len() as f64;
        }
        LabeledCluster { pid, points, centroid, centroid_xyz, centroid_velocity: vel, degenerate: false }
    }
}

/// Per-point radial velocity as a world-frame vector along the radar ray.
pub fn radial_velocity_vector(p: &RadarPoint, radar_origin: [f64; 3]) -> [f64; 3] {
    let ray = [p.x - radar_origin[0], p.y - radar_origin[1], p.z - radar_origin[2]];
    let n = (ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2]).sqrt();
    if n == 0.0 {
        return [0.0; 3];
    }
    [
        p.radial_velocity * ray[0] / n,
        p.radial_velocity * ray[1] / n,
        p.radial_velocity * ray[2] / n,
    ]
}

fn centroid_of(points: &[RadarPoint]) -> [f64; 3] {
    let mut c = [0.0f64; 3];
    for p in points {
        c[0] += p.x;
        c[1] += p.y;
        c[2] += p.z;
    }
    let n = points.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Triangle-threshold a histogram: the bin maximizing the perpendicular
/// distance to the chord from the peak to the last non-empty bin.
///
/// Returns the selected bin's lower edge (`bin_width` units); a single
/// non-empty bin yields that bin's upper edge. Ties prefer the rightmost bin.
pub fn triangle_threshold(counts: &[usize], bin_width: f64) -> f64 {
    let non_empty: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, _)| i)
        .collect();
    match non_empty.len() {
        0 => return 0.0,
        1 => return (non_empty[0] + 1) as f64 * bin_width,
        _ => {}
    }
    let peak = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let last = *non_empty.last().unwrap();
    if last <= peak {
        return last as f64 * bin_width;
    }
    let (x0, y0) = (peak as f64, counts[peak] as f64);
    let (x1, y1) = (last as f64, counts[last] as f64);
    let mut best = peak;
    let mut best_d = -1.0;
    for i in peak..=last {
        let (x, y) = (i as f64, counts[i] as f64);
        // Unnormalized point-to-line distance; the common scale cancels.
        let d = ((x1 - x0) * (y0 - y) - (x0 - x) * (y1 - y0)).abs();
        if d >= best_d {
            best_d = d;
            best = i;
        }
    }
    best as f64 * bin_width
}

/// Drop near-static points using the triangle threshold over the frame's
/// speed histogram. Returns retained indices into the input frame.
pub fn remove_static_points(frame: &PointCloudFrame) -> (PointCloudFrame, Vec<usize>) {
    if frame.points.is_empty() {
        return (frame.clone(), Vec::new());
    }
    let speeds: Vec<f64> = frame.points.iter().map(|p| p.radial_velocity.abs()).collect();
    let max_speed = speeds.iter().copied().fold(0.0, f64::max);
    if max_speed <= 0.0 {
        return (PointCloudFrame { timestamp: frame.timestamp, points: Vec::new() }, Vec::new());
    }
    let bin_width = max_speed / SPEED_HIST_BINS as f64;
    let mut counts = [0usize; SPEED_HIST_BINS];
    for s in &speeds {
        let idx = ((s / bin_width) as usize).min(SPEED_HIST_BINS - 1);
        counts[idx] += 1;
    }
    let threshold = triangle_threshold(&counts, bin_width);
    let mut points = Vec::new();
    let mut kept = Vec::new();
    for (i, p) in frame.points.iter().enumerate() {
        if p.radial_velocity.abs() > threshold {
            points.push(*p);
            kept.push(i);
        }
    }
    (PointCloudFrame { timestamp: frame.timestamp, points }, kept)
}

/// Standard density clustering; returns per-point labels, noise = -1.
pub fn dbscan(points: &[RadarPoint], eps: f64, min_pts: usize) -> Result<Vec<i32>> {
    if eps <= 0.0 || min_pts == 0 {
        return Err(CoreError::Config("dbscan needs eps > 0 and min_pts >= 1".into()));
    }
    let n = points.len();
    let mut labels = vec![-2i32; n]; // -2 unvisited, -1 noise
    let mut cluster = 0i32;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n).filter(|&j| points[i].dist(&points[j]) <= eps).collect()
    };
    for i in 0..n {
        if labels[i] != -2 {
            continue;
        }
        let seed_neighbors = neighbors(i);
        if seed_neighbors.len() < min_pts {
            labels[i] = -1;
            continue;
        }
        labels[i] = cluster;
        let mut queue = seed_neighbors;
        let mut qi = 0;
        while qi < queue.len() {
            let j = queue[qi];
            qi += 1;
            if labels[j] == -1 {
                labels[j] = cluster;
            }
            if labels[j] != -2 {
                continue;
            }
            labels[j] = cluster;
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
        cluster += 1;
    }
    Ok(labels)
}

/// Lloyd iterations from the given seeds; cluster order follows seed order.
///
/// Runs in Cartesian space until centroid motion drops below 1e-4 m or 50
/// iterations. An emptied cluster is reseeded at the point farthest from all
/// other centroids.
pub fn kmeans_seeded(points: &[RadarPoint], seeds: &[[f64; 3]]) -> Result<Vec<Vec<usize>>> {
    let k = seeds.len();
    if k == 0 {
        return Err(CoreError::Config("kmeans needs at least one seed".into()));
    }
    if points.len() < k {
        return Err(CoreError::Data(format!(
            "kmeans needs at least {k} points, got {}",
            points.len()
        )));
    }
    let mut centroids: Vec<[f64; 3]> = seeds.to_vec();
    let mut assignment = vec![0usize; points.len()];
    for _ in 0..50 {
        for (pi, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::MAX;
            for (ci, c) in centroids.iter().enumerate() {
                let d = (p.x - c[0]).powi(2) + (p.y - c[1]).powi(2) + (p.z - c[2]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            assignment[pi] = best;
        }
        // Reseed empty clusters at the point farthest from other centroids.
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for ci in 0..k {
            if counts[ci] > 0 {
                continue;
            }
            let mut far = 0usize;
            let mut far_d = -1.0;
            for (pi, p) in points.iter().enumerate() {
                let d: f64 = centroids
                    .iter()
                    .enumerate()
                    .filter(|(cj, _)| *cj != ci && counts[*cj] > 0)
                    .map(|(_, c)| (p.x - c[0]).powi(2) + (p.y - c[1]).powi(2) + (p.z - c[2]).powi(2))
                    .fold(f64::MAX, f64::min);
                if d > far_d && counts[assignment[pi]] > 1 {
                    far_d = d;
                    far = pi;
                }
            }
            counts[assignment[far]] -= 1;
            assignment[far] = ci;
            counts[ci] = 1;
        }
        let mut moved = 0.0f64;
        for ci in 0..k {
            let members: Vec<&RadarPoint> =
                points.iter().enumerate().filter(|(pi, _)| assignment[*pi] == ci).map(|(_, p)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mut c = [0.0f64; 3];
            for p in &members {
                c[0] += p.x;
                c[1] += p.y;
                c[2] += p.z;
            }
            let n = members.len() as f64;
            let c = [c[0] / n, c[1] / n, c[2] / n];
            let d = (0..3).map(|i| (c[i] - centroids[ci][i]).powi(2)).sum::<f64>().sqrt();
            moved = moved.max(d);
            centroids[ci] = c;
        }
        if moved < 1e-4 {
            break;
        }
    }
    let mut clusters = vec![Vec::new(); k];
    for (pi, &a) in assignment.iter().enumerate() {
        clusters[a].push(pi);
    }
    Ok(clusters)
}

/// Within-cluster sum of squared distances to cluster means.
pub fn within_cluster_ss(points: &[RadarPoint], clusters: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for members in clusters {
        if members.is_empty() {
            continue;
        }
        let pts: Vec<RadarPoint> = members.iter().map(|&i| points[i]).collect();
        let c = centroid_of(&pts);
        for p in &pts {
            total += (p.x - c[0]).powi(2) + (p.y - c[1]).powi(2) + (p.z - c[2]).powi(2);
        }
    }
    total
}

/// Sequentially transfer seed PIDs to clusters: each seed, in PID order,
/// claims the nearest unclaimed cluster centroid.
pub fn transfer_pids(
    seeds: &[(Pid, [f64; 3])],
    cluster_centroids: &[[f64; 3]],
) -> Result<Vec<Pid>> {
    if seeds.len() != cluster_centroids.len() {
        return Err(CoreError::Data("transfer_pids needs |seeds| == |clusters|".into()));
    }
    let n = cluster_centroids.len();
    let mut claimed = vec![false; n];
    let mut out = vec![0 as Pid; n];
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.sort_by_key(|&i| seeds[i].0);
    for si in order {
        let (pid, pos) = seeds[si];
        let mut best = None;
        let mut best_d = f64::MAX;
        for (ci, c) in cluster_centroids.iter().enumerate() {
            if claimed[ci] {
                continue;
            }
            let d = (0..3).map(|k| (pos[k] - c[k]).powi(2)).sum::<f64>();
            if d < best_d {
                best_d = d;
                best = Some(ci);
            }
        }
        let ci = best.expect("unclaimed cluster must exist");
        claimed[ci] = true;
        out[ci] = pid;
    }
    Ok(out)
}

/// Drop points outside an axis-aligned box centered at the cluster centroid
/// and recompute the centroid. An emptied cluster degenerates to a single
/// synthetic point at the old centroid and is flagged.
pub fn remove_outliers(cluster: &LabeledCluster, bbox: [f64; 3], radar_origin: [f64; 3]) -> LabeledCluster {
    let c = cluster.centroid_xyz;
    let kept: Vec<RadarPoint> = cluster
        .points
        .iter()
        .copied()
        .filter(|p| {
            (p.x - c[0]).abs() <= bbox[0] / 2.0
                && (p.y - c[1]).abs() <= bbox[1] / 2.0
                && (p.z - c[2]).abs() <= bbox[2] / 2.0
        })
        .collect();
    if kept.is_empty() {
        let mut out = cluster.clone();
        let speed = (cluster.centroid_velocity.iter().map(|v| v * v).sum::<f64>()).sqrt();
        out.points = vec![RadarPoint::new(c[0], c[1], c[2], speed)];
        out.degenerate = true;
        return out;
    }
    let mut out = LabeledCluster::from_points(cluster.pid, kept, radar_origin);
    out.degenerate = false;
    out
}

/// Adjusted Rand Index between two labelings of the same points.
pub fn adjusted_rand_index(pred: &[i32], truth: &[i32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(CoreError::Data("ARI needs equal-length labelings".into()));
    }
    let n = pred.len();
    if n < 2 {
        return Ok(1.0);
    }
    use std::collections::BTreeMap;
    let mut table: BTreeMap<(i32, i32), u64> = BTreeMap::new();
    let mut rows: BTreeMap<i32, u64> = BTreeMap::new();
    let mut cols: BTreeMap<i32, u64> = BTreeMap::new();
    for (&a, &b) in pred.iter().zip(truth) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / (max_index - expected))
}

/// Session defaults.
#[derive(Debug, Clone)]
pub struct TrackConfig {
    /// DBSCAN bootstrap parameters.
    pub eps: f64,
    pub min_pts: usize,
    /// Outlier bounding box (x, y, z) in meters.
    pub bbox: [f64; 3],
    /// A track with no point within this radius is absent for the frame.
    pub gate_radius: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig { eps: 0.5, min_pts: 4, bbox: [0.6, 0.6, 2.0], gate_radius: 1.5 }
    }
}

/// One radar's tracking session: owns N Kalman tracks and runs the per-frame
/// pipeline static-removal -> predict seeds -> k-means -> PID transfer ->
/// outlier removal -> Kalman update.
pub struct TrackingSession {
    pub num_users: usize,
    pub radar_origin: [f64; 3],
    pub config: TrackConfig,
    pub tracks: Vec<TrackState>,
    last_update_time: Vec<f64>,
    bootstrapped: bool,
}

/// Result of one processed frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub timestamp: f64,
    pub clusters: Vec<LabeledCluster>,
    /// Indices into the original frame for every clustered point, aligned
    /// with the concatenation order of `clusters[i].points`.
    pub point_origins: Vec<Vec<usize>>,
}

impl TrackingSession {
    pub fn new(num_users: usize, radar: &RadarPose, config: TrackConfig) -> Self {
        TrackingSession {
            num_users,
            radar_origin: [radar.position[0], radar.position[1], radar.height],
            config,
            tracks: Vec::new(),
            last_update_time: Vec::new(),
            bootstrapped: false,
        }
    }

    fn to_spherical(&self, xyz: [f64; 3]) -> [f64; 3] {
        cartesian_to_spherical([
            xyz[0] - self.radar_origin[0],
            xyz[1] - self.radar_origin[1],
            xyz[2] - self.radar_origin[2],
        ])
    }

    fn to_world(&self, sph: [f64; 3]) -> [f64; 3] {
        let c = spherical_to_cartesian(sph);
        [
            c[0] + self.radar_origin[0],
            c[1] + self.radar_origin[1],
            c[2] + self.radar_origin[2],
        ]
    }

    /// DBSCAN bootstrap, adjusted to exactly N centroids by merging the
    /// nearest pair or splitting the most populated cluster.
    fn bootstrap_centroids(&self, points: &[RadarPoint]) -> Result<Vec<[f64; 3]>> {
        let labels = dbscan(points, self.config.eps, self.config.min_pts)?;
        let k = labels.iter().copied().max().unwrap_or(-1) + 1;
        let mut groups: Vec<Vec<RadarPoint>> = vec![Vec::new(); k.max(0) as usize];
        for (p, &l) in points.iter().zip(&labels) {
            if l >= 0 {
                groups[l as usize].push(*p);
            }
        }
        groups.retain(|g| !g.is_empty());
        if groups.is_empty() {
            // All noise: fall back to one group of everything.
            groups.push(points.to_vec());
        }
        // Merge nearest pairs until <= N.
        while groups.len() > self.num_users {
            let mut best = (0usize, 1usize);
            let mut best_d = f64::MAX;
            for i in 0..groups.len() {
                for j in (i + 1)..groups.len() {
                    let ci = centroid_of(&groups[i]);
                    let cj = centroid_of(&groups[j]);
                    let d = (0..3).map(|a| (ci[a] - cj[a]).powi(2)).sum::<f64>();
                    if d < best_d {
                        best_d = d;
                        best = (i, j);
                    }
                }
            }
            let merged = groups.remove(best.1);
            groups[best.0].extend(merged);
        }
        // Split the largest along its widest axis until == N.
        while groups.len() < self.num_users {
            let (gi, _) = groups
                .iter()
                .enumerate()
                .max_by_key(|(_, g)| g.len())
                .expect("non-empty groups");
            let g = groups.swap_remove(gi);
            if g.len() < 2 {
                // Cannot split further; duplicate the centroid.
                let c = centroid_of(&g);
                groups.push(g);
                groups.push(vec![RadarPoint::new(c[0], c[1], c[2], 0.0)]);
                continue;
            }
            let c = centroid_of(&g);
            let mut spans = [0.0f64; 3];
            for p in &g {
                spans[0] = spans[0].max((p.x - c[0]).abs());
                spans[1] = spans[1].max((p.y - c[1]).abs());
                spans[2] = spans[2].max((p.z - c[2]).abs());
            }
            let axis = if spans[0] >= spans[1] && spans[0] >= spans[2] {
                0
            } else if spans[1] >= spans[2] {
                1
            } else {
                2
            };
            let (lo, hi): (Vec<RadarPoint>, Vec<RadarPoint>) =
                g.into_iter().partition(|p| p.pos()[axis] < c[axis]);
            if lo.is_empty() || hi.is_empty() {
                let mut all = lo;
                all.extend(hi);
                let c = centroid_of(&all);
                groups.push(all);
                groups.push(vec![RadarPoint::new(c[0], c[1], c[2], 0.0)]);
            } else {
                groups.push(lo);
                groups.push(hi);
            }
        }
        Ok(groups.iter().map(|g| centroid_of(g)).collect())
    }

    /// Process one frame. `kept_truth` (when given) receives the retained
    /// original-point indices so callers can score clustering against labels.
    pub fn process_frame(&mut self, frame: &PointCloudFrame) -> Result<FrameResult> {
        let (moving, kept) = remove_static_points(frame);
        let t = frame.timestamp;
        let empty = FrameResult { timestamp: t, clusters: Vec::new(), point_origins: Vec::new() };
        if moving.points.len() < self.num_users.max(self.config.min_pts) {
            return Ok(empty);
        }

        if !self.bootstrapped {
            let centroids = self.bootstrap_centroids(&moving.points)?;
            self.tracks = centroids
                .iter()
                .enumerate()
                .map(|(i, c)| TrackState::new(i as Pid + 1, self.to_spherical(*c)))
                .collect();
            self.last_update_time = vec![t; self.num_users];
            self.bootstrapped = true;
        }

        // Predict seeds for every track; gate to find who is visible.
        let seeds_world: Vec<[f64; 3]> = self
            .tracks
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                let dt = (t - self.last_update_time[i]).max(1e-6);
                self.to_world(tr.rkf_predict(dt))
            })
            .collect();
        let mut present: Vec<usize> = Vec::new();
        for (i, seed) in seeds_world.iter().enumerate() {
            let near = moving.points.iter().any(|p| {
                let d = (p.x - seed[0]).powi(2) + (p.y - seed[1]).powi(2);
                d.sqrt() < self.config.gate_radius
            });
            if near {
                present.push(i);
            }
        }
        if present.is_empty() {
            return Ok(empty);
        }
        let present_seeds: Vec<[f64; 3]> = present.iter().map(|&i| seeds_world[i]).collect();
        if moving.points.len() < present_seeds.len() {
            return Ok(empty);
        }

        let clusters_idx = kmeans_seeded(&moving.points, &present_seeds)?;
        let centroids: Vec<[f64; 3]> = clusters_idx
            .iter()
            .map(|members| {
                let pts: Vec<RadarPoint> = members.iter().map(|&i| moving.points[i]).collect();
                centroid_of(&pts)
            })
            .collect();
        let seed_pids: Vec<(Pid, [f64; 3])> = present
            .iter()
            .zip(&present_seeds)
            .map(|(&i, s)| (self.tracks[i].pid, *s))
            .collect();
        let pid_per_cluster = transfer_pids(&seed_pids, &centroids)?;

        let mut clusters = Vec::new();
        let mut point_origins = Vec::new();
        for (ci, members) in clusters_idx.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let pts: Vec<RadarPoint> = members.iter().map(|&i| moving.points[i]).collect();
            let cluster = LabeledCluster::from_points(pid_per_cluster[ci], pts, self.radar_origin);
            let cleaned = remove_outliers(&cluster, self.config.bbox, self.radar_origin);
            point_origins.push(members.iter().map(|&i| kept[i]).collect());
            clusters.push(cleaned);
        }

        // Kalman update for the visible tracks.
        for cluster in &clusters {
            if let Some(ti) = self.tracks.iter().position(|tr| tr.pid == cluster.pid) {
                let dt = (t - self.last_update_time[ti]).max(1e-6);
                let obs = self.to_spherical(cluster.centroid_xyz);
                self.tracks[ti].rkf_update(obs, dt);
                self.last_update_time[ti] = t;
            }
        }
        Ok(FrameResult { timestamp: t, clusters, point_origins })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64, v: f64) -> RadarPoint {
        RadarPoint::new(x, y, 1.0, v)
    }

    // -- triangle threshold --------------------------------------------------

    #[test]
    fn triangle_matches_brute_force_on_spiky_histogram() {
        let counts = [100usize, 1, 1, 1, 20];
        let w = 0.1;
        let th = triangle_threshold(&counts, w);
        // Brute force: distance of each bin to the peak-tail chord.
        let (x0, y0) = (0.0, 100.0);
        let (x1, y1) = (4.0, 20.0);
        let mut best = 0;
        let mut best_d = -1.0;
        for i in 0..=4 {
            let (x, y) = (i as f64, counts[i] as f64);
            let d = ((x1 - x0) * (y0 - y) - (x0 - x) * (y1 - y0)).abs();
            if d >= best_d {
                best_d = d;
                best = i;
            }
        }
        assert!((th - best as f64 * w).abs() < 1e-12);
        assert!(th > 0.0 && th < 4.0 * w, "threshold strictly between peak and tail");
    }

    #[test]
    fn triangle_uniform_prefers_rightmost() {
        let th = triangle_threshold(&[5, 5, 5, 5], 1.0);
        assert!((th - 3.0).abs() < 1e-12);
    }

    #[test]
    fn triangle_two_equal_bins() {
        let th = triangle_threshold(&[10, 10], 0.5);
        assert!((th - 0.5).abs() < 1e-12);
    }

    #[test]
    fn triangle_single_bin_upper_edge() {
        let th = triangle_threshold(&[0, 7, 0, 0], 0.25);
        assert!((th - 0.5).abs() < 1e-12);
    }

    // -- static removal ------------------------------------------------------

    #[test]
    fn all_static_frame_empties() {
        let frame = PointCloudFrame {
            timestamp: 0.0,
            points: vec![pt(1.0, 1.0, 0.0), pt(2.0, 2.0, 0.0)],
        };
        let (out, kept) = remove_static_points(&frame);
        assert!(out.points.is_empty());
        assert!(kept.is_empty());
    }

    #[test]
    fn clutter_removed_users_survive() {
        let mut points = Vec::new();
        for i in 0..40 {
            points.push(pt(i as f64 * 0.1, 0.0, 0.001 * (i % 3) as f64));
        }
        for i in 0..20 {
            points.push(pt(5.0 + (i % 5) as f64 * 0.05, 5.0, 1.0 + 0.01 * (i % 4) as f64));
        }
        let frame = PointCloudFrame { timestamp: 0.0, points };
        let (out, kept) = remove_static_points(&frame);
        assert_eq!(out.points.len(), 20);
        assert!(kept.iter().all(|&i| i >= 40));
    }

    // -- dbscan ---------------------------------------------------------------

    #[test]
    fn dbscan_separates_far_blobs() {
        let mut points = Vec::new();
        for i in 0..10 {
            points.push(pt(0.0 + 0.01 * i as f64, 0.0, 1.0));
            points.push(pt(5.0 + 0.01 * i as f64, 0.0, 1.0));
        }
        let labels = dbscan(&points, 0.5, 3).unwrap();
        let a = labels[0];
        let b = labels[1];
        assert_ne!(a, b);
        assert!(labels.iter().all(|&l| l >= 0));
    }

    #[test]
    fn dbscan_single_dense_blob() {
        let points: Vec<RadarPoint> = (0..8).map(|i| pt(0.01 * i as f64, 0.0, 1.0)).collect();
        let labels = dbscan(&points, 0.5, 3).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn dbscan_merges_close_users() {
        // Two users 0.4 m apart with eps 0.5: one merged cluster.
        let mut points = Vec::new();
        for i in 0..8 {
            points.push(pt(0.0 + 0.02 * i as f64, 0.0, 1.0));
            points.push(pt(0.4 + 0.02 * i as f64, 0.0, 1.0));
        }
        let labels = dbscan(&points, 0.5, 3).unwrap();
        let first = labels[0];
        assert!(labels.iter().all(|&l| l == first));
    }

    // -- kmeans ----------------------------------------------------------------

    #[test]
    fn kmeans_recovers_separated_blobs_in_seed_order() {
        let mut points = Vec::new();
        for i in 0..10 {
            points.push(pt(0.0 + 0.01 * i as f64, 0.0, 1.0));
        }
        for i in 0..10 {
            points.push(pt(6.0 + 0.01 * i as f64, 0.0, 1.0));
        }
        let clusters = kmeans_seeded(&points, &[[6.0, 0.0, 1.0], [0.0, 0.0, 1.0]]).unwrap();
        assert!(clusters[0].iter().all(|&i| i >= 10));
        assert!(clusters[1].iter().all(|&i| i < 10));
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let points: Vec<RadarPoint> = (0..5).map(|i| pt(i as f64, 0.0, 1.0)).collect();
        let clusters = kmeans_seeded(&points, &[[10.0, 10.0, 0.0]]).unwrap();
        assert_eq!(clusters[0].len(), 5);
    }

    #[test]
    fn kmeans_never_increases_wcss() {
        // Radially scattered points, bad seeds; compare seed-assignment WCSS
        // with the final one.
        let mut points = Vec::new();
        for i in 0..30 {
            let a = i as f64 * 0.7;
            points.push(pt(a.cos() * (1.0 + 0.1 * (i % 5) as f64), a.sin(), 1.0));
        }
        let seeds = [[2.0, 0.0, 1.0], [-2.0, 0.0, 1.0], [0.0, 2.0, 1.0]];
        // Initial assignment to seeds.
        let mut initial = vec![Vec::new(); 3];
        for (pi, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut bd = f64::MAX;
            for (ci, c) in seeds.iter().enumerate() {
                let d = (p.x - c[0]).powi(2) + (p.y - c[1]).powi(2) + (p.z - c[2]).powi(2);
                if d < bd {
                    bd = d;
                    best = ci;
                }
            }
            initial[best].push(pi);
        }
        let before = within_cluster_ss(&points, &initial);
        let after = within_cluster_ss(&points, &kmeans_seeded(&points, &seeds).unwrap());
        assert!(after <= before + 1e-9);
    }

    // -- transfer_pids -----------------------------------------------------------

    #[test]
    fn transfer_identity_when_seeds_match() {
        let seeds = [(1, [0.0, 0.0, 0.0]), (2, [5.0, 0.0, 0.0])];
        let cents = [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let pids = transfer_pids(&seeds, &cents).unwrap();
        assert_eq!(pids, vec![1, 2]);
    }

    #[test]
    fn transfer_first_pid_wins_contested_cluster() {
        // Both seeds nearest to cluster 0; PID 1 claims it, PID 2 takes the rest.
        let seeds = [(1, [0.0, 0.0, 0.0]), (2, [0.2, 0.0, 0.0])];
        let cents = [[0.1, 0.0, 0.0], [9.0, 0.0, 0.0]];
        let pids = transfer_pids(&seeds, &cents).unwrap();
        assert_eq!(pids, vec![1, 2]);
    }

    #[test]
    fn transfer_is_bijective() {
        let seeds = [(3, [1.0, 0.0, 0.0]), (1, [2.0, 0.0, 0.0]), (2, [3.0, 0.0, 0.0])];
        let cents = [[2.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let mut pids = transfer_pids(&seeds, &cents).unwrap();
        pids.sort();
        assert_eq!(pids, vec![1, 2, 3]);
    }

    // -- remove_outliers -----------------------------------------------------------

    #[test]
    fn outlier_removal_keeps_tight_cluster() {
        let pts: Vec<RadarPoint> = (0..6).map(|i| pt(1.0 + 0.01 * i as f64, 1.0, 1.0)).collect();
        let c = LabeledCluster::from_points(1, pts.clone(), [0.0, 0.0, 1.0]);
        let out = remove_outliers(&c, [0.6, 0.6, 2.0], [0.0, 0.0, 1.0]);
        assert_eq!(out.points.len(), 6);
        assert!(!out.degenerate);
    }

    #[test]
    fn outlier_removal_drops_far_passenger_point() {
        let mut pts: Vec<RadarPoint> = (0..12).map(|i| pt(1.0 + 0.01 * i as f64, 1.0, 1.0)).collect();
        pts.push(pt(4.0, 1.0, 1.0)); // passenger leakage 3 m away
        let c = LabeledCluster::from_points(1, pts, [0.0, 0.0, 1.0]);
        let out = remove_outliers(&c, [0.6, 0.6, 2.0], [0.0, 0.0, 1.0]);
        assert_eq!(out.points.len(), 12);
        assert!(out.points.iter().all(|p| p.x < 2.0));
    }

    #[test]
    fn outlier_removal_degenerates_to_centroid() {
        let pts = vec![pt(0.0, 0.0, 1.0), pt(1.0, 0.0, 1.0)];
        let c = LabeledCluster::from_points(1, pts, [0.0, 0.0, 1.0]);
        // Box of 0.6 m centered at x = 0.5: both points 0.5 m away in x.
        let out = remove_outliers(&c, [0.6, 0.6, 2.0], [0.0, 0.0, 1.0]);
        assert!(out.degenerate);
        assert_eq!(out.points.len(), 1);
        assert!((out.points[0].x - 0.5).abs() < 1e-12);
    }

    // -- ARI -------------------------------------------------------------------

    #[test]
    fn ari_identical_is_one() {
        let l = [0, 0, 1, 1, 2];
        assert!((adjusted_rand_index(&l, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_permutation_invariant() {
        let a = [0, 0, 1, 1];
        let b = [1, 1, 0, 0];
        assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_matches_pair_count_formula() {
        let a = [0, 0, 1, 1];
        let b = [0, 1, 0, 1];
        // Brute force over all 6 pairs.
        let mut n11 = 0.0; // same in both
        let mut n00 = 0.0; // different in both
        let mut n10 = 0.0;
        let mut n01 = 0.0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => n11 += 1.0,
                    (false, false) => n00 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                }
            }
        }
        let expected = 2.0 * (n11 * n00 - n10 * n01)
            / ((n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00));
        let got = adjusted_rand_index(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got} want {expected}");
    }

    #[test]
    fn ari_symmetry() {
        let a = [0, 1, 1, 2, 2, 2];
        let b = [0, 0, 1, 1, 2, 2];
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }
}
