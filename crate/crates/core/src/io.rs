//! Dataset and artifact persistence: JSON-lines streams, weight files.

use crate::cluster_net::NetParams;
use crate::config::ScenarioConfig;
use crate::error::{CoreError, Result};
use crate::siamese::CnnParams;
use crate::sim::{GaitParams, GroundTruth, ImuSample, ImuTrace, ScenarioDataset};
use crate::types::{PointCloudFrame, Quat, RadarPoint, TrajSample, Trajectory2D};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(
        fs::File::open(path)
            .map_err(|e| CoreError::Data(format!("cannot open {}: {e}", path.display())))?,
    );
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// One radar frame on disk: timestamp plus `[x, y, z, radial_velocity]` rows.
#[derive(Debug, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: f64,
    pub points: Vec<[f64; 4]>,
    /// Ground-truth point labels (present in simulated datasets).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<i32>>,
}

/// One IMU sample on disk.
#[derive(Debug, Serialize, Deserialize)]
pub struct ImuRecord {
    pub t: f64,
    pub accel: [f64; 3],
    pub quat: [f64; 4],
    pub speed: f64,
}

/// One ground-truth tick: positions of every person.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t: f64,
    pub pos: Vec<[f64; 2]>,
}

/// Dataset-level metadata.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: ScenarioConfig,
    pub pids: Vec<u32>,
    pub gait: Vec<Option<GaitParams>>,
}

/// Persist a scenario dataset: `radar_<k>.jsonl`, `imu_<pid>.jsonl`,
/// `truth.jsonl`, and `meta.json`.
pub fn write_dataset(dir: &Path, ds: &ScenarioDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, frames) in ds.radar_frames.iter().enumerate() {
        let records = frames.iter().zip(&ds.radar_labels[k]).map(|(f, labels)| FrameRecord {
            t: f.timestamp,
            points: f.points.iter().map(|p| [p.x, p.y, p.z, p.radial_velocity]).collect(),
            labels: Some(labels.clone()),
        });
        write_jsonl(&dir.join(format!("radar_{k}.jsonl")), records)?;
    }
    for trace in &ds.imu_traces {
        let records = trace.samples.iter().zip(&trace.speed_stream).map(|(s, sp)| ImuRecord {
            t: s.t,
            accel: s.accel,
            quat: [s.quat.w, s.quat.x, s.quat.y, s.quat.z],
            speed: sp.1,
        });
        write_jsonl(&dir.join(format!("imu_{}.jsonl", trace.pid)), records)?;
    }
    let ticks = ds.truth.trajectories.first().map_or(0, |t| t.samples.len());
    let truth_records = (0..ticks).map(|k| TruthRecord {
        t: ds.truth.trajectories[0].samples[k].t,
        pos: ds.truth.trajectories.iter().map(|tr| [tr.samples[k].x, tr.samples[k].y]).collect(),
    });
    write_jsonl(&dir.join("truth.jsonl"), truth_records)?;
    let meta = DatasetMeta {
        config: ds.config.clone(),
        pids: ds.truth.pids.clone(),
        gait: ds.truth.gait.clone(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Load a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<ScenarioDataset> {
    let meta: DatasetMeta = serde_json::from_str(
        &fs::read_to_string(dir.join("meta.json"))
            .map_err(|e| CoreError::Data(format!("missing meta.json in {}: {e}", dir.display())))?,
    )?;
    let num_radars = meta.config.radar_poses.len();
    let mut radar_frames = Vec::with_capacity(num_radars);
    let mut radar_labels = Vec::with_capacity(num_radars);
    for k in 0..num_radars {
        let records: Vec<FrameRecord> = read_jsonl(&dir.join(format!("radar_{k}.jsonl")))?;
        let mut frames = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        for r in records {
            frames.push(PointCloudFrame {
                timestamp: r.t,
                points: r.points.iter().map(|p| RadarPoint::new(p[0], p[1], p[2], p[3])).collect(),
            });
            labels.push(r.labels.unwrap_or_default());
        }
        radar_frames.push(frames);
        radar_labels.push(labels);
    }
    let mut imu_traces = Vec::with_capacity(meta.pids.len());
    for pid in &meta.pids {
        let records: Vec<ImuRecord> = read_jsonl(&dir.join(format!("imu_{pid}.jsonl")))?;
        imu_traces.push(ImuTrace {
            pid: *pid,
            samples: records
                .iter()
                .map(|r| ImuSample {
                    t: r.t,
                    accel: r.accel,
                    quat: Quat { w: r.quat[0], x: r.quat[1], y: r.quat[2], z: r.quat[3] },
                })
                .collect(),
            speed_stream: records.iter().map(|r| (r.t, r.speed)).collect(),
        });
    }
    let truth_records: Vec<TruthRecord> = read_jsonl(&dir.join("truth.jsonl"))?;
    let people = truth_records.first().map_or(0, |r| r.pos.len());
    let mut trajectories = vec![Trajectory2D::default(); people];
    for r in &truth_records {
        for (i, p) in r.pos.iter().enumerate() {
            trajectories[i].samples.push(TrajSample { t: r.t, x: p[0], y: p[1] });
        }
    }
    let truth = GroundTruth {
        trajectories,
        pids: meta.pids,
        gait: meta.gait,
        arena: meta.config.arena,
        imu_fps: meta.config.imu_fps,
    };
    Ok(ScenarioDataset { config: meta.config, truth, radar_frames, radar_labels, imu_traces })
}

/// Cluster-network weight file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterNetFile {
    pub format: String,
    pub params: NetParams,
    pub final_loss: f64,
}

/// Siamese weight file, carrying the acceptance threshold its training data
/// produced.
#[derive(Debug, Serialize, Deserialize)]
pub struct SiameseFile {
    pub format: String,
    pub params: CnnParams,
    pub alpha: f64,
    pub margin: f64,
}

pub const CLUSTER_NET_FILE: &str = "cluster_net.json";
pub const SIAMESE_FILE: &str = "siamese.json";

pub fn write_cluster_net(dir: &Path, params: &NetParams, final_loss: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = ClusterNetFile { format: "cluster-net-v1".into(), params: params.clone(), final_loss };
    fs::write(dir.join(CLUSTER_NET_FILE), serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn read_cluster_net(dir: &Path) -> Result<NetParams> {
    let path = dir.join(CLUSTER_NET_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CoreError::Data(format!("missing weights file {}: {e}", path.display())))?;
    let file: ClusterNetFile = serde_json::from_str(&text)?;
    Ok(file.params)
}

pub fn write_siamese(dir: &Path, params: &CnnParams, alpha: f64, margin: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = SiameseFile { format: "siamese-v1".into(), params: params.clone(), alpha, margin };
    fs::write(dir.join(SIAMESE_FILE), serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn read_siamese(dir: &Path) -> Result<(CnnParams, f64)> {
    let path = dir.join(SIAMESE_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CoreError::Data(format!("missing weights file {}: {e}", path.display())))?;
    let file: SiameseFile = serde_json::from_str(&text)?;
    Ok((file.params, file.alpha))
}

/// Write `(epoch, loss)` rows as CSV.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster_net::BbrTask;
    use crate::config::NoiseConfig;
    use crate::sim::run_scenario;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::basic(2, 3.0, 21);
        cfg.noise = NoiseConfig::default();
        let ds = run_scenario(&cfg).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(
            serde_json::to_string(&ds.radar_frames).unwrap(),
            serde_json::to_string(&back.radar_frames).unwrap()
        );
        assert_eq!(ds.imu_traces.len(), back.imu_traces.len());
        assert_eq!(
            serde_json::to_string(&ds.truth.trajectories).unwrap(),
            serde_json::to_string(&back.truth.trajectories).unwrap()
        );
    }

    #[test]
    fn weight_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = NetParams::seeded(BbrTask::Bbr, 5);
        write_cluster_net(dir.path(), &params, 0.25).unwrap();
        let back = read_cluster_net(dir.path()).unwrap();
        assert_eq!(params.flatten(), back.flatten());
        let cnn = CnnParams::seeded(16, 8, 6);
        write_siamese(dir.path(), &cnn, 0.31, 0.2).unwrap();
        let (cnn_back, alpha) = read_siamese(dir.path()).unwrap();
        assert_eq!(cnn.flatten(), cnn_back.flatten());
        assert!((alpha - 0.31).abs() < 1e-12);
    }

    #[test]
    fn missing_weights_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        match read_cluster_net(dir.path()) {
            Err(CoreError::Data(msg)) => assert!(msg.contains("cluster_net.json")),
            other => panic!("expected data error, got {other:?}"),
        }
    }
}
