//! End-to-end orchestration: tracking sessions over frame streams, training
//! data construction, cross-modality association, and run reports.

use crate::analytics::{
    contact_time_matrix, detect_close_contacts, detect_infectious_contacts, precision_recall,
    ContactEvent, PrecisionRecall,
};
use crate::cluster_net::{
    interpolate_cluster, net_input, prematch_imus, tracking_feature, weighted_avg_velocity, Aabb,
    BbrTask, BoxTarget, NetInput, NetParams, OrientedBox, CLUSTER_POINTS,
};
use crate::config::{PathKind, ScenarioConfig};
use crate::error::{CoreError, Result};
use crate::frame_assoc::{hungarian, ratio_of_mismatches, TrajectoryPoint, TrajectorySet};
use crate::fusion::{coarse_align, icp, merge_frames, RigidTransform2D};
use crate::gait::{fit_gait, gait_associate, imu_gait, measured_spectrogram, GaitFeature};
use crate::radar_track::{adjusted_rand_index, TrackConfig, TrackingSession};
use crate::siamese::{augment_random_walk, cnn_forward, train_siamese, CnnParams, Triplet};
use crate::sim::{run_scenario, ScenarioDataset};
use crate::trace_map::{imu_dead_reckon, rasterize, to_image, TraceImage, RHO_IMU, RHO_RADAR};
use crate::types::{cosine_similarity, Pid, PointCloudFrame, RadarPoint, CLUTTER_LABEL};
use crate::xmodal::{
    detect_identical_maps, propose, AssociationLoop, SimilarityMatrix, IDENTICAL_MAP_THRESHOLD,
    STATIONARY_SPEED_FLOOR,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Knobs of the association stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Association window length, seconds.
    pub window_seconds: f64,
    /// Start-to-start step; 10 s gives the 2 s overlap.
    pub window_step: f64,
    /// Soft-voting depth W.
    pub soft_windows: usize,
    /// Trace-image side fed to the CNN.
    pub resize: usize,
    pub identical_threshold: f64,
    pub stationary_floor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_seconds: 12.0,
            window_step: 10.0,
            soft_windows: 3,
            resize: 64,
            identical_threshold: IDENTICAL_MAP_THRESHOLD,
            stationary_floor: STATIONARY_SPEED_FLOOR,
        }
    }
}

/// Output of the radar tracking stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackOutput {
    /// Per-track trajectories keyed by track id.
    pub trajectories: TrajectorySet,
    /// Per-track point-speed history `(t, |radial velocities|)` for gait.
    pub speed_history: BTreeMap<u32, Vec<(f64, Vec<f64>)>>,
    /// Per-frame `(track, true user)` pairs (simulated datasets only).
    pub frame_truth: Vec<Vec<(Pid, i32)>>,
    /// Per-frame clustering ARI against point labels.
    pub ari_per_frame: Vec<f64>,
    /// Majority-vote map from track id to true user index.
    pub track_to_user: BTreeMap<u32, i32>,
    pub radar_fps: f64,
}

struct ActiveTrack {
    id: u32,
    feature: Vec<f64>,
    last_seen: f64,
}

/// Run the per-frame radar pipeline plus feature-based inter-frame
/// association over one frame stream.
///
/// `labels` (per frame, per point) enables ARI and truth bookkeeping; pass
/// empty slices when unavailable.
pub fn track_frames(
    frames: &[PointCloudFrame],
    labels: &[Vec<i32>],
    num_users: usize,
    radar_pose: &crate::config::RadarPose,
    net: &NetParams,
    imu_speed_at: &dyn Fn(f64) -> Vec<(Pid, f64)>,
) -> Result<TrackOutput> {
    let mut session = TrackingSession::new(num_users, radar_pose, TrackConfig::default());
    let radar_origin = [radar_pose.position[0], radar_pose.position[1], radar_pose.height];
    let mut trajectories = TrajectorySet::default();
    let mut speed_history: BTreeMap<u32, Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    let mut frame_truth: Vec<Vec<(Pid, i32)>> = Vec::new();
    let mut ari_per_frame = Vec::new();
    let mut user_votes: BTreeMap<u32, BTreeMap<i32, usize>> = BTreeMap::new();
    let mut active: Vec<ActiveTrack> = Vec::new();
    let mut next_track_id: u32 = 1;
    // Tracks absent longer than this lose their association memory.
    let memory_seconds = 2.0;
    let radar_fps = if frames.len() >= 2 {
        1.0 / (frames[1].timestamp - frames[0].timestamp)
    } else {
        8.0
    };

    for (j, frame) in frames.iter().enumerate() {
        let result = session.process_frame(frame)?;
        if result.clusters.is_empty() {
            frame_truth.push(Vec::new());
            continue;
        }
        let t = frame.timestamp;

        // ARI of this frame's clustering against ground-truth point labels.
        if let Some(frame_labels) = labels.get(j) {
            if !frame_labels.is_empty() {
                let mut pred = Vec::new();
                let mut truth = Vec::new();
                for (ci, origins) in result.point_origins.iter().enumerate() {
                    for &oi in origins {
                        pred.push(ci as i32);
                        truth.push(frame_labels[oi]);
                    }
                }
                if pred.len() >= 2 {
                    ari_per_frame.push(adjusted_rand_index(&pred, &truth)?);
                }
            }
        }

        // Cluster features: shape-motion plus pre-matched PID encoding.
        let mut inputs: Vec<NetInput> = Vec::with_capacity(result.clusters.len());
        let mut cluster_speeds = Vec::with_capacity(result.clusters.len());
        for cluster in &result.clusters {
            let fixed = interpolate_cluster(&cluster.points, CLUSTER_POINTS)?;
            inputs.push(net_input(&fixed, cluster.centroid_xyz));
            let v = weighted_avg_velocity(cluster, radar_origin);
            cluster_speeds.push((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
        }
        let imu_speeds = imu_speed_at(t);
        let prematched: Vec<Option<Pid>> = if imu_speeds.len() == result.clusters.len() {
            let speeds: Vec<f64> = imu_speeds.iter().map(|(_, s)| *s).collect();
            match prematch_imus(&cluster_speeds, &speeds) {
                Ok(assignment) => {
                    assignment.iter().map(|&j| Some(imu_speeds[j].0)).collect()
                }
                Err(_) => vec![None; result.clusters.len()],
            }
        } else {
            vec![None; result.clusters.len()]
        };
        let features: Vec<Vec<f64>> = inputs
            .iter()
            .zip(&prematched)
            .map(|(input, pid)| tracking_feature(input, net, *pid).tracking)
            .collect();

        // Associate against active track memory.
        active.retain(|a| t - a.last_seen <= memory_seconds);
        let mut assigned_ids: Vec<Option<u32>> = vec![None; features.len()];
        if !active.is_empty() {
            let cost: Vec<Vec<f64>> = features
                .iter()
                .map(|f| active.iter().map(|a| 1.0 - cosine_similarity(f, &a.feature)).collect())
                .collect();
            let assignment = hungarian(&cost)?;
            for (row, col) in assignment.pairs {
                assigned_ids[row] = Some(active[col].id);
            }
        }
        let mut frame_pairs = Vec::new();
        for (ci, cluster) in result.clusters.iter().enumerate() {
            let id = match assigned_ids[ci] {
                Some(id) => id,
                None => {
                    let id = next_track_id;
                    next_track_id += 1;
                    id
                }
            };
            match active.iter_mut().find(|a| a.id == id) {
                Some(a) => {
                    a.feature = features[ci].clone();
                    a.last_seen = t;
                }
                None => active.push(ActiveTrack { id, feature: features[ci].clone(), last_seen: t }),
            }
            trajectories.push(
                id,
                TrajectoryPoint {
                    t,
                    x: cluster.centroid_xyz[0],
                    y: cluster.centroid_xyz[1],
                    speed: cluster_speeds[ci],
                },
            );
            speed_history
                .entry(id)
                .or_default()
                .push((t, cluster.points.iter().map(|p| p.radial_velocity.abs()).collect()));

            if let Some(frame_labels) = labels.get(j) {
                if !frame_labels.is_empty() {
                    let mut votes: BTreeMap<i32, usize> = BTreeMap::new();
                    for &oi in &result.point_origins[ci] {
                        let l = frame_labels[oi];
                        if l != CLUTTER_LABEL {
                            *votes.entry(l).or_default() += 1;
                        }
                    }
                    if let Some((&user, _)) = votes.iter().max_by_key(|(_, &c)| c) {
                        frame_pairs.push((id, user));
                        *user_votes.entry(id).or_default().entry(user).or_default() += 1;
                    }
                }
            }
        }
        frame_truth.push(frame_pairs);
    }

    let track_to_user = user_votes
        .into_iter()
        .filter_map(|(id, votes)| {
            votes.into_iter().max_by_key(|(_, c)| *c).map(|(user, _)| (id, user))
        })
        .collect();
    Ok(TrackOutput {
        trajectories,
        speed_history,
        frame_truth,
        ari_per_frame,
        track_to_user,
        radar_fps,
    })
}

/// Convenience: track radar 0 of a dataset.
pub fn track_dataset(ds: &ScenarioDataset, net: &NetParams) -> Result<TrackOutput> {
    let traces = ds.imu_traces.clone();
    let speed_at = move |t: f64| -> Vec<(Pid, f64)> {
        traces.iter().map(|tr| (tr.pid, tr.speed_at(t))).collect()
    };
    track_frames(
        &ds.radar_frames[0],
        &ds.radar_labels[0],
        ds.config.num_users + ds.config.num_passengers,
        &ds.config.radar_poses[0],
        net,
        &speed_at,
    )
}

/// Register radar 1 onto radar 0 (coarse pose alignment then ICP on a
/// 5-frame accumulation) and merge both streams frame by frame.
pub fn merge_two_radars(ds: &ScenarioDataset) -> Result<(Vec<PointCloudFrame>, Vec<Vec<i32>>)> {
    if ds.radar_frames.len() < 2 {
        return Err(CoreError::Data("two-radar merge needs two frame streams".into()));
    }
    let pose1 = &ds.config.radar_poses[1];
    // The second radar reports its cloud in its own frame; reconstruct that
    // local view, then coarse-align with the known mount pose.
    let world_to_local =
        RigidTransform2D::new(pose1.heading, [pose1.position[0], pose1.position[1]]).inverse();
    let coarse = world_to_local.inverse();
    let accum = |frames: &[PointCloudFrame]| -> Vec<RadarPoint> {
        frames.iter().take(5).flat_map(|f| f.points.iter().copied()).collect()
    };
    let target = accum(&ds.radar_frames[0]);
    let source_local: Vec<RadarPoint> = coarse_align(&accum(&ds.radar_frames[1]), &world_to_local);
    // Fine registration of coarse-aligned source onto the first radar's view.
    let coarse_applied = coarse_align(&source_local, &coarse);
    let fine = icp(&coarse_applied, &target, 50, 1e-9)?;
    let full = fine.transform.after(&coarse);

    let mut frames = Vec::with_capacity(ds.radar_frames[0].len());
    let mut labels = Vec::with_capacity(ds.radar_frames[0].len());
    for (j, (a, b)) in ds.radar_frames[0].iter().zip(&ds.radar_frames[1]).enumerate() {
        let local_b = PointCloudFrame {
            timestamp: b.timestamp,
            points: coarse_align(&b.points, &world_to_local),
        };
        frames.push(merge_frames(a, &local_b, &full));
        let mut l = ds.radar_labels[0][j].clone();
        l.extend_from_slice(&ds.radar_labels[1][j]);
        labels.push(l);
    }
    Ok((frames, labels))
}

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

/// Cluster-network training set from ground-truth labels: per user per
/// frame, the user's labeled points against the torso bounding box.
pub fn cluster_net_training(
    ds: &ScenarioDataset,
    task: BbrTask,
    max_samples: usize,
) -> Result<Vec<(NetInput, BoxTarget)>> {
    let mut out = Vec::new();
    let frames = &ds.radar_frames[0];
    let labels = &ds.radar_labels[0];
    'outer: for (j, frame) in frames.iter().enumerate() {
        for user in 0..ds.config.num_users {
            let pts: Vec<RadarPoint> = frame
                .points
                .iter()
                .zip(&labels[j])
                .filter(|(_, &l)| l == user as i32)
                .map(|(p, _)| *p)
                .collect();
            if pts.len() < 3 {
                continue;
            }
            let fixed = interpolate_cluster(&pts, CLUSTER_POINTS)?;
            let mut centroid = [0.0f64; 3];
            for p in &fixed {
                centroid[0] += p.x;
                centroid[1] += p.y;
                centroid[2] += p.z;
            }
            for c in centroid.iter_mut() {
                *c /= fixed.len() as f64;
            }
            let input = net_input(&fixed, centroid);
            let state = ds.truth.body_state(user, frame.timestamp);
            let target = match task {
                BbrTask::Bbr => BoxTarget::Axis(Aabb {
                    center: [
                        state.pos[0] - centroid[0],
                        state.pos[1] - centroid[1],
                        0.85 - centroid[2],
                    ],
                    extents: [0.5, 0.5, 1.7],
                }),
                BbrTask::Nbbr => {
                    let next = ds.truth.body_state(user, frame.timestamp + 1.0 / ds.config.radar_fps);
                    let heading = next.vel[1].atan2(next.vel[0]);
                    BoxTarget::Oriented(OrientedBox {
                        center: [next.pos[0] - centroid[0], next.pos[1] - centroid[1]],
                        extents: [0.5, 0.5],
                        angle: heading,
                    })
                }
            };
            out.push((input, target));
            if out.len() >= max_samples {
                break 'outer;
            }
        }
    }
    if out.is_empty() {
        return Err(CoreError::Data("no labeled clusters for training".into()));
    }
    Ok(out)
}

/// Triplet set: 80% random-walk augmentation pairs, 20% cross-modality
/// scenario pairs (ground-truth trajectory rendered radar-style vs the
/// dead-reckoned IMU rendering of the same user).
pub fn build_triplets(count: usize, resize: usize, seed: u64) -> Result<Vec<Triplet>> {
    let augmented_count = count * 4 / 5;
    let mut triplets = Vec::with_capacity(count);
    let mut pairs = Vec::with_capacity(augmented_count + 1);
    for i in 0..=augmented_count {
        pairs.push(augment_random_walk(seed.wrapping_add(i as u64 * 7919), resize)?);
    }
    for i in 0..augmented_count {
        triplets.push(Triplet {
            anchor: pairs[i].anchor.clone(),
            positive: pairs[i].positive.clone(),
            negative: pairs[i + 1].anchor.clone(),
        });
    }
    // Scenario pairs: window 0 of small 3-user scenes.
    let scenario_count = count - augmented_count;
    let mut made = 0usize;
    let mut scene = 0u64;
    while made < scenario_count {
        let mut cfg = ScenarioConfig::basic(3, 14.0, seed.wrapping_add(0x5eed + scene));
        cfg.users = (0..3)
            .map(|i| crate::config::UserConfig {
                path: PathKind::RandomWalk,
                speed: 1.0 + 0.15 * i as f64,
            })
            .collect();
        let ds = run_scenario(&cfg)?;
        let window = [0.0, 12.0];
        let mut radar_maps = Vec::new();
        let mut imu_maps = Vec::new();
        for u in 0..3 {
            // Radar-style rendering of the true walk at the radar cadence.
            let true_traj = &ds.truth.trajectories[u];
            let radar_cadence: Vec<crate::types::TrajSample> = true_traj
                .samples
                .iter()
                .copied()
                .filter(|s| (s.t * ds.config.radar_fps).fract().abs() < 1e-9)
                .collect();
            let rmap = rasterize(
                &crate::types::Trajectory2D { samples: radar_cadence },
                RHO_RADAR,
                ds.config.radar_fps,
                window,
            )?;
            radar_maps.push(to_image(&rmap, resize));
            let reckoned = imu_dead_reckon(&ds.imu_traces[u], window)?;
            let imap = rasterize(&reckoned, RHO_IMU, ds.config.imu_fps, window)?;
            imu_maps.push(to_image(&imap, resize));
        }
        for u in 0..3 {
            if made >= scenario_count {
                break;
            }
            triplets.push(Triplet {
                anchor: radar_maps[u].clone(),
                positive: imu_maps[u].clone(),
                negative: imu_maps[(u + 1) % 3].clone(),
            });
            made += 1;
        }
        scene += 1;
    }
    Ok(triplets)
}

/// Trained Siamese bundle: parameters plus the alpha its training data gives.
pub struct TrainedSiamese {
    pub params: CnnParams,
    pub alpha: f64,
    pub losses: Vec<f64>,
}

/// Train the comparative-feature CNN and derive the Criterion-1 threshold
/// from the training pairs.
pub fn train_siamese_bundle(
    triplets: &[Triplet],
    epochs: usize,
    lr: f64,
    margin: f64,
    resize: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<TrainedSiamese> {
    let (params, report) =
        train_siamese(triplets, epochs, lr, margin, resize, feature_dim, seed)?;
    let mut positives = Vec::with_capacity(triplets.len());
    let mut negatives = Vec::with_capacity(triplets.len());
    for t in triplets {
        let fa = cnn_forward(&t.anchor, &params)?;
        let fp = cnn_forward(&t.positive, &params)?;
        let fnn = cnn_forward(&t.negative, &params)?;
        positives.push(cosine_similarity(&fa, &fp));
        negatives.push(cosine_similarity(&fa, &fnn));
    }
    let alpha = crate::xmodal::compute_alpha(&positives, &negatives)?;
    Ok(TrainedSiamese { params, alpha, losses: report.losses })
}

// ---------------------------------------------------------------------------
// Association
// ---------------------------------------------------------------------------

/// Result of the cross-modality association stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssociationReport {
    /// Final track -> PID assignment (trace-map locked plus gait pairs).
    pub assigned: BTreeMap<u32, Pid>,
    pub locked: bool,
    pub lock_window: Option<usize>,
    /// Per-window single-matrix accuracy (available with ground truth).
    pub w_acc: Vec<f64>,
    /// Accuracy of the final assignment (available with ground truth).
    pub e2e_acc: f64,
    /// Tracks routed through the gait fallback.
    pub gait_tracks: Vec<u32>,
    pub rejection_count: usize,
    pub windows_used: usize,
}

/// Ground-truth track -> PID map: the majority true user of each track,
/// translated to that user's PID (passengers carry none).
pub fn truth_assignment(track: &TrackOutput, ds: &ScenarioDataset) -> BTreeMap<u32, Pid> {
    track
        .track_to_user
        .iter()
        .filter_map(|(&id, &user)| {
            if user >= 0 && (user as usize) < ds.truth.pids.len() {
                Some((id, ds.truth.pids[user as usize]))
            } else {
                None
            }
        })
        .collect()
}

/// Cross-modality association over the windowed stream.
pub fn associate_dataset(
    ds: &ScenarioDataset,
    track: &TrackOutput,
    cnn: &CnnParams,
    alpha: f64,
    cfg: &PipelineConfig,
) -> Result<AssociationReport> {
    let duration = ds.config.duration;
    let mut window_starts = Vec::new();
    let mut w0 = 0.0;
    while w0 + cfg.window_seconds <= duration + 1e-9 {
        window_starts.push(w0);
        w0 += cfg.window_step;
    }
    if window_starts.is_empty() {
        return Err(CoreError::Data("scenario shorter than one association window".into()));
    }

    // Participants: moving tracks and moving IMUs over the session.
    let track_ids: Vec<u32> = track
        .trajectories
        .tracks
        .iter()
        .filter(|(_, samples)| samples.len() >= 8)
        .filter(|(_, samples)| {
            let mean = samples.iter().map(|s| s.speed).sum::<f64>() / samples.len() as f64;
            mean >= cfg.stationary_floor
        })
        .map(|(id, _)| *id)
        .collect();
    let imu_pids: Vec<Pid> = ds
        .imu_traces
        .iter()
        .filter(|tr| tr.mean_speed(0.0, duration) >= cfg.stationary_floor)
        .map(|tr| tr.pid)
        .collect();
    if track_ids.is_empty() || imu_pids.is_empty() {
        return Err(CoreError::Data("no moving participants to associate".into()));
    }

    // Per-window features for every participant.
    let mut radar_feats: Vec<Vec<Option<Vec<f64>>>> = Vec::new();
    let mut imu_feats: Vec<Vec<Option<Vec<f64>>>> = Vec::new();
    for &start in &window_starts {
        let window = [start, start + cfg.window_seconds];
        let mut rrow = Vec::with_capacity(track_ids.len());
        for id in &track_ids {
            let samples = &track.trajectories.tracks[id];
            let traj = crate::types::Trajectory2D {
                samples: samples
                    .iter()
                    .filter(|s| s.t >= window[0] && s.t < window[1])
                    .map(|s| crate::types::TrajSample { t: s.t, x: s.x, y: s.y })
                    .collect(),
            };
            if traj.samples.len() < 4 {
                rrow.push(None);
                continue;
            }
            let map = rasterize(&traj, RHO_RADAR, track.radar_fps, window)?;
            rrow.push(Some(cnn_forward(&to_image(&map, cfg.resize), cnn)?));
        }
        radar_feats.push(rrow);
        let mut irow = Vec::with_capacity(imu_pids.len());
        for pid in &imu_pids {
            let trace = ds.imu_traces.iter().find(|t| t.pid == *pid).unwrap();
            match imu_dead_reckon(trace, window) {
                Ok(reckoned) => {
                    let map = rasterize(&reckoned, RHO_IMU, ds.config.imu_fps, window)?;
                    irow.push(Some(cnn_forward(&to_image(&map, cfg.resize), cnn)?));
                }
                Err(_) => irow.push(None),
            }
        }
        imu_feats.push(irow);
    }

    // Identical-map detection on the first window's radar features routes
    // grouped tracks to the gait fallback.
    let first_full: Vec<Vec<f64>> = radar_feats[0]
        .iter()
        .map(|f| f.clone().unwrap_or_default())
        .collect();
    let groups = detect_identical_maps(&first_full, cfg.identical_threshold);
    let mut gait_track_idx: Vec<usize> = groups
        .iter()
        .filter(|g| g.len() > 1)
        .flat_map(|g| g.iter().copied())
        .collect();
    gait_track_idx.sort_unstable();
    let imu_first: Vec<Vec<f64>> =
        imu_feats[0].iter().map(|f| f.clone().unwrap_or_default()).collect();
    let imu_groups = detect_identical_maps(&imu_first, cfg.identical_threshold);
    let mut gait_imu_idx: Vec<usize> = imu_groups
        .iter()
        .filter(|g| g.len() > 1)
        .flat_map(|g| g.iter().copied())
        .collect();
    gait_imu_idx.sort_unstable();
    // The split only holds together when both sides agree on the count.
    if gait_track_idx.len() != gait_imu_idx.len() {
        gait_track_idx.clear();
        gait_imu_idx.clear();
    }
    let normal_track_idx: Vec<usize> =
        (0..track_ids.len()).filter(|i| !gait_track_idx.contains(i)).collect();
    let normal_imu_idx: Vec<usize> =
        (0..imu_pids.len()).filter(|j| !gait_imu_idx.contains(j)).collect();

    // Per-window accuracy on the full matrix (diagnostic) and the
    // soft-voted loop on the normal submatrix.
    let truth_map = truth_assignment(track, ds);
    let mut w_acc = Vec::with_capacity(window_starts.len());
    let mut looper = AssociationLoop::new(cfg.soft_windows, alpha);
    let mut lock: Option<crate::xmodal::AssociationOutcome> = None;
    let mut windows_used = 0usize;
    for (w, start) in window_starts.iter().enumerate() {
        let _ = start;
        let full = build_matrix(&radar_feats[w], &imu_feats[w], None, None);
        if let Ok(assignment) = propose(&full) {
            let correct = assignment
                .pairs
                .iter()
                .filter(|(i, j)| {
                    truth_map.get(&track_ids[*i]).is_some_and(|pid| *pid == imu_pids[*j])
                })
                .count();
            w_acc.push(correct as f64 / imu_pids.len() as f64);
        }
        if lock.is_none() {
            let sub = build_matrix(
                &radar_feats[w],
                &imu_feats[w],
                Some(&normal_track_idx),
                Some(&normal_imu_idx),
            );
            windows_used = w + 1;
            if !sub.is_empty() {
                lock = looper.push(SimilarityMatrix { s: sub, window: w })?;
            }
        }
    }
    let outcome = match lock {
        Some(o) => o,
        None => looper.finish()?,
    };

    let mut assigned: BTreeMap<u32, Pid> = BTreeMap::new();
    for (i, j) in &outcome.pairs {
        assigned.insert(track_ids[normal_track_idx[*i]], imu_pids[normal_imu_idx[*j]]);
    }

    // Gait fallback for the grouped tracks.
    let gait_window = [window_starts[0], window_starts[0] + cfg.window_seconds];
    let mut gait_tracks = Vec::new();
    if !gait_track_idx.is_empty() {
        let mut radar_gaits: Vec<GaitFeature> = Vec::new();
        let mut ok = true;
        for &i in &gait_track_idx {
            let history = &track.speed_history[&track_ids[i]];
            let spec = measured_spectrogram(history, gait_window);
            match fit_gait(&spec) {
                Ok((g, _)) => radar_gaits.push(g),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        let mut imu_gaits: Vec<GaitFeature> = Vec::new();
        if ok {
            for &j in &gait_imu_idx {
                let trace = ds.imu_traces.iter().find(|t| t.pid == imu_pids[j]).unwrap();
                match imu_gait(trace, gait_window) {
                    Ok(g) => imu_gaits.push(g),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if ok && !radar_gaits.is_empty() {
            let assignment = gait_associate(&radar_gaits, &imu_gaits)?;
            for (i, j) in assignment.pairs {
                assigned.insert(track_ids[gait_track_idx[i]], imu_pids[gait_imu_idx[j]]);
                gait_tracks.push(track_ids[gait_track_idx[i]]);
            }
        }
    }

    let correct = assigned
        .iter()
        .filter(|(id, pid)| truth_map.get(id).is_some_and(|t| t == *pid))
        .count();
    let e2e_acc = if imu_pids.is_empty() { 1.0 } else { correct as f64 / imu_pids.len() as f64 };

    Ok(AssociationReport {
        assigned,
        locked: outcome.locked,
        lock_window: outcome.lock_window,
        w_acc,
        e2e_acc,
        gait_tracks,
        rejection_count: outcome.rejections.len(),
        windows_used,
    })
}

fn build_matrix(
    radar: &[Option<Vec<f64>>],
    imu: &[Option<Vec<f64>>],
    radar_idx: Option<&[usize]>,
    imu_idx: Option<&[usize]>,
) -> Vec<Vec<f64>> {
    let ridx: Vec<usize> = match radar_idx {
        Some(v) => v.to_vec(),
        None => (0..radar.len()).collect(),
    };
    let iidx: Vec<usize> = match imu_idx {
        Some(v) => v.to_vec(),
        None => (0..imu.len()).collect(),
    };
    ridx.iter()
        .map(|&i| {
            iidx.iter()
                .map(|&j| match (&radar[i], &imu[j]) {
                    (Some(a), Some(b)) => cosine_similarity(a, b),
                    _ => -1.0,
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

/// Contact scoring at one tau.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauReport {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub predicted_positives: usize,
    pub reference_positives: usize,
    pub empty_predictions: bool,
}

/// Full run summary (deterministic; no wall-clock content).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub num_users: usize,
    pub mean_ari: f64,
    pub mote: f64,
    pub rom: f64,
    pub w_acc_mean: f64,
    pub e2e_acc: f64,
    pub locked: bool,
    pub lock_window: Option<usize>,
    pub mean_distance_error: f64,
    pub contact: Vec<TauReport>,
    /// Accumulated close-contact seconds per pair: tracked vs reference.
    pub close_contact_seconds: Vec<(Pid, Pid, f64, f64)>,
}

/// Tracked trajectories re-keyed by assigned PID.
pub fn tracked_as_pids(track: &TrackOutput, assigned: &BTreeMap<u32, Pid>) -> TrajectorySet {
    let mut out = TrajectorySet::default();
    for (id, samples) in &track.trajectories.tracks {
        if let Some(pid) = assigned.get(id) {
            for s in samples {
                out.push(*pid, *s);
            }
        }
    }
    out
}

/// Ground-truth trajectories on the radar frame grid, keyed by PID.
pub fn truth_as_pids(ds: &ScenarioDataset) -> TrajectorySet {
    let mut out = TrajectorySet::default();
    let frames = (ds.config.duration * ds.config.radar_fps).floor() as usize;
    for (i, pid) in ds.truth.pids.iter().enumerate() {
        for j in 0..frames {
            let t = j as f64 / ds.config.radar_fps;
            let state = ds.truth.body_state(i, t);
            let speed = (state.vel[0] * state.vel[0] + state.vel[1] * state.vel[1]).sqrt();
            out.push(*pid, TrajectoryPoint { t, x: state.pos[0], y: state.pos[1], speed });
        }
    }
    out
}

/// Mean absolute interpersonal-distance error between tracked and reference
/// trajectories over all pairs and frames where both systems see the pair.
pub fn mean_distance_error(tracked: &TrajectorySet, reference: &TrajectorySet, dt: f64) -> f64 {
    let pids = reference.pids();
    let mut sum = 0.0;
    let mut count = 0usize;
    let span = reference
        .tracks
        .values()
        .filter_map(|s| s.last().map(|p| p.t))
        .fold(0.0f64, f64::max);
    let mut t = 0.0;
    while t <= span {
        for i in 0..pids.len() {
            for j in (i + 1)..pids.len() {
                let (Some(ta), Some(tb)) = (
                    tracked.position_at(pids[i], t, dt / 2.0),
                    tracked.position_at(pids[j], t, dt / 2.0),
                ) else {
                    continue;
                };
                let (Some(ra), Some(rb)) = (
                    reference.position_at(pids[i], t, dt / 2.0),
                    reference.position_at(pids[j], t, dt / 2.0),
                ) else {
                    continue;
                };
                let dtk = ((ta[0] - tb[0]).powi(2) + (ta[1] - tb[1]).powi(2)).sqrt();
                let dref = ((ra[0] - rb[0]).powi(2) + (ra[1] - rb[1]).powi(2)).sqrt();
                sum += (dtk - dref).abs();
                count += 1;
            }
        }
        t += dt;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Compose the run summary from the stage outputs.
pub fn summarize(
    ds: &ScenarioDataset,
    track: &TrackOutput,
    report: &AssociationReport,
    taus: &[f64],
) -> Result<RunSummary> {
    let dt = 1.0 / ds.config.radar_fps;
    let tracked = tracked_as_pids(track, &report.assigned);
    let reference = truth_as_pids(ds);
    let mote_val = crate::frame_assoc::mote(&tracked, &reference, dt / 2.0);
    let rom = ratio_of_mismatches(&track.frame_truth);
    let mean_ari = if track.ari_per_frame.is_empty() {
        0.0
    } else {
        track.ari_per_frame.iter().sum::<f64>() / track.ari_per_frame.len() as f64
    };
    let mut contact = Vec::with_capacity(taus.len());
    for &tau in taus {
        let (pred, _) = detect_infectious_contacts(&tracked, tau, dt);
        let (reference_set, _) = detect_infectious_contacts(&reference, tau, dt);
        let pr: PrecisionRecall = precision_recall(&pred, &reference_set);
        contact.push(TauReport {
            tau,
            precision: pr.precision,
            recall: pr.recall,
            predicted_positives: pr.predicted_positives,
            reference_positives: pr.reference_positives,
            empty_predictions: pr.empty_predictions,
        });
    }
    let tracked_close = contact_time_matrix(&detect_close_contacts(&tracked, dt));
    let reference_close = contact_time_matrix(&detect_close_contacts(&reference, dt));
    let mut close_contact_seconds = Vec::new();
    for (pair, ref_secs) in &reference_close {
        let tracked_secs = tracked_close.get(pair).copied().unwrap_or(0.0);
        close_contact_seconds.push((pair.0, pair.1, tracked_secs, *ref_secs));
    }
    let w_acc_mean = if report.w_acc.is_empty() {
        0.0
    } else {
        report.w_acc.iter().sum::<f64>() / report.w_acc.len() as f64
    };
    Ok(RunSummary {
        seed: ds.config.seed,
        num_users: ds.config.num_users,
        mean_ari,
        mote: mote_val,
        rom,
        w_acc_mean,
        e2e_acc: report.e2e_acc,
        locked: report.locked,
        lock_window: report.lock_window,
        mean_distance_error: mean_distance_error(&tracked, &reference, dt),
        contact,
        close_contact_seconds,
    })
}

/// Events of the tracked system for CSV export.
pub fn tracked_events(
    ds: &ScenarioDataset,
    track: &TrackOutput,
    report: &AssociationReport,
    tau: f64,
) -> (Vec<ContactEvent>, Vec<ContactEvent>) {
    let dt = 1.0 / ds.config.radar_fps;
    let tracked = tracked_as_pids(track, &report.assigned);
    let close = detect_close_contacts(&tracked, dt);
    let (_, infectious) = detect_infectious_contacts(&tracked, tau, dt);
    (close, infectious)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NoiseConfig;

    fn zero_noise_scene(n: usize, seed: u64) -> ScenarioDataset {
        let mut cfg = ScenarioConfig::basic(n, 14.0, seed);
        cfg.noise = NoiseConfig::zero();
        cfg.radar_poses[0].position = [0.0, 0.0];
        run_scenario(&cfg).unwrap()
    }

    #[test]
    fn tracking_zero_noise_scene_is_clean() {
        let ds = zero_noise_scene(3, 5);
        let net = NetParams::seeded(BbrTask::Bbr, 1);
        let out = track_dataset(&ds, &net).unwrap();
        // Perfect clustering on separated users.
        let mean_ari: f64 = out.ari_per_frame.iter().sum::<f64>() / out.ari_per_frame.len() as f64;
        assert!(mean_ari > 0.999, "mean ARI {mean_ari}");
        // No identity mismatches.
        let rom = ratio_of_mismatches(&out.frame_truth);
        assert!(rom < 0.02, "RoM {rom}");
        assert_eq!(out.track_to_user.len(), 3);
    }

    #[test]
    fn cluster_training_data_has_sane_targets() {
        let ds = zero_noise_scene(2, 8);
        let data = cluster_net_training(&ds, BbrTask::Bbr, 50).unwrap();
        assert!(!data.is_empty());
        for (input, target) in &data {
            assert_eq!(input.len(), CLUSTER_POINTS);
            if let BoxTarget::Axis(b) = target {
                // Cluster centroid sits near the torso center.
                assert!(b.center[0].abs() < 1.0 && b.center[1].abs() < 1.0);
            }
        }
    }

    #[test]
    fn truth_assignment_maps_users_to_pids() {
        let ds = zero_noise_scene(3, 9);
        let net = NetParams::seeded(BbrTask::Bbr, 1);
        let out = track_dataset(&ds, &net).unwrap();
        let map = truth_assignment(&out, &ds);
        assert_eq!(map.len(), 3);
        let mut pids: Vec<Pid> = map.values().copied().collect();
        pids.sort_unstable();
        assert_eq!(pids, vec![1, 2, 3]);
    }
}
