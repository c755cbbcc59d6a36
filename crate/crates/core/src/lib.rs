//! Multi-user tracking from simulated mmWave radar and IMU streams.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`sim`] synthesizes ground-truth scenes, radar point clouds, and IMU
//!   traces;
//! - [`radar_track`] clusters each radar frame with Kalman-predicted seeds
//!   and maintains per-user tracks;
//! - [`cluster_net`] extracts shape-motion-identity features per cluster;
//! - [`frame_assoc`] links clusters across frames (Hungarian assignment)
//!   and scores tracking quality;
//! - [`trace_map`] turns trajectory windows into trace-map images and dead
//!   reckons IMU windows;
//! - [`siamese`] trains the comparative-feature CNN with triplet loss;
//! - [`xmodal`] soft-votes per-window similarity matrices into a locked
//!   radar-to-IMU identity assignment;
//! - [`gait`] resolves users with near-identical trace maps through
//!   spectrogram gait fitting;
//! - [`fusion`] registers and merges point clouds from two radars;
//! - [`analytics`] computes interpersonal distances and contact events;
//! - [`pipeline`] wires the stages into reproducible end-to-end runs.

pub mod analytics;
pub mod cluster_net;
pub mod config;
pub mod error;
pub mod frame_assoc;
pub mod fusion;
pub mod gait;
pub mod io;
pub mod nn;
pub mod radar_track;
pub mod siamese;
pub mod xmodal;
pub mod sim;
pub mod trace_map;
pub mod types;

pub use error::{CoreError, Result};
