//! Recursive Kalman filter over a user's centroid in radar-centered
//! spherical coordinates.
//!
//! State `x = [r, r', theta, theta', phi, phi']` with block transition
//! `F = diag(A, A, A)`, `A = [1, dt; 0, 1]`, and `H` selecting the three
//! position components. The observation-noise covariance is re-estimated
//! from a sliding window of frame-to-frame observation residuals, and the
//! gain comes from a steady-state Riccati iteration, so the filter adapts
//! to the radar's sensing quality without per-frame covariance plumbing.

use crate::types::Pid;
use nalgebra::{SMatrix, SVector};
use std::collections::VecDeque;
use std::f64::consts::PI;

type Vec6 = SVector<f64, 6>;
type Vec3 = SVector<f64, 3>;
type Mat6 = SMatrix<f64, 6, 6>;
type Mat3 = SMatrix<f64, 3, 3>;
type Mat63 = SMatrix<f64, 6, 3>;
type Mat36 = SMatrix<f64, 3, 6>;

/// Sliding-window length for observation-noise estimation.
const RESIDUAL_WINDOW: usize = 20;
/// Steady-state Riccati iterations for the constant gain.
const RICCATI_ITERS: usize = 100;

/// Default process-noise diagonal: positions then rates, per spherical axis.
pub const DEFAULT_COV_W_DIAG: [f64; 6] = [1e-4, 1e-2, 1e-4, 1e-2, 1e-4, 1e-2];

fn transition(dt: f64) -> Mat6 {
    let mut f = Mat6::identity();
    f[(0, 1)] = dt;
    f[(2, 3)] = dt;
    f[(4, 5)] = dt;
    f
}

fn observation() -> Mat36 {
    let mut h = Mat36::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 2)] = 1.0;
    h[(2, 4)] = 1.0;
    h
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Per-user track state.
#[derive(Debug, Clone)]
pub struct TrackState {
    /// Internal PID in `[1, N]`.
    pub pid: Pid,
    /// `[r, r', theta, theta', phi, phi']`.
    pub x: Vec6,
    /// Process-noise covariance (fixed diagonal by default).
    pub cov_w: Mat6,
    /// Estimated observation-noise covariance.
    pub cov_z: Mat3,
    /// Constant Kalman gain from the steady-state Riccati iteration.
    pub gain: Mat63,
    pub last_observation: Option<[f64; 3]>,
    /// Set when a non-finite observation was rejected.
    pub flagged: bool,
    /// Number of accepted observations.
    pub updates: usize,
    residuals: VecDeque<[f64; 3]>,
}

impl TrackState {
    /// Bootstrap a track from its first observed centroid (zero rates).
    pub fn new(pid: Pid, first_observation: [f64; 3]) -> Self {
        let mut cov_w = Mat6::zeros();
        for (i, v) in DEFAULT_COV_W_DIAG.iter().enumerate() {
            cov_w[(i, i)] = *v;
        }
        let cov_z = Mat3::identity() * 1e-2;
        let mut state = TrackState {
            pid,
            x: Vec6::zeros(),
            cov_w,
            cov_z,
            gain: Mat63::zeros(),
            last_observation: Some(first_observation),
            flagged: false,
            updates: 1,
            residuals: VecDeque::new(),
        };
        state.x[0] = first_observation[0];
        state.x[2] = first_observation[1];
        state.x[4] = first_observation[2];
        state.recompute_gain(0.125);
        state
    }

    /// Predicted centroid `H F x` after `dt` seconds: `[r, theta, phi]`.
    pub fn rkf_predict(&self, dt: f64) -> [f64; 3] {
        let pred = observation() * (transition(dt) * self.x);
        [pred[0], wrap_angle(pred[1]), pred[2]]
    }

    /// Fold in an observed centroid `[r, theta, phi]`.
    ///
    /// A non-finite observation leaves the state untouched and flags the
    /// track. The second observation initializes the rates by differencing;
    /// later ones apply the constant-gain update and refresh the
    /// observation-noise estimate.
    pub fn rkf_update(&mut self, c: [f64; 3], dt: f64) {
        if !c.iter().all(|v| v.is_finite()) || dt <= 0.0 {
            self.flagged = true;
            return;
        }
        let prev = self.last_observation;
        if let Some(p) = prev {
            let d = [c[0] - p[0], wrap_angle(c[1] - p[1]), c[2] - p[2]];
            self.residuals.push_back(d);
            if self.residuals.len() > RESIDUAL_WINDOW {
                self.residuals.pop_front();
            }
        }

        if self.updates == 1 {
            // Two-point initialization: trust the first pair of observations
            // for both position and rate.
            if let Some(p) = prev {
                self.x[0] = c[0];
                self.x[1] = (c[0] - p[0]) / dt;
                self.x[2] = c[1];
                self.x[3] = wrap_angle(c[1] - p[1]) / dt;
                self.x[4] = c[2];
                self.x[5] = (c[2] - p[2]) / dt;
            }
        } else {
            self.estimate_cov_z();
            self.recompute_gain(dt);
            let predicted = transition(dt) * self.x;
            let mut innovation = Vec3::new(
                c[0] - predicted[0],
                wrap_angle(c[1] - predicted[2]),
                c[2] - predicted[4],
            );
            // Guard against wild centroids (cluster steals) with a soft gate.
            let max_innov = 3.0;
            for i in 0..3 {
                innovation[i] = innovation[i].clamp(-max_innov, max_innov);
            }
            self.x = predicted + self.gain * innovation;
            self.x[2] = wrap_angle(self.x[2]);
            self.x[4] = self.x[4].clamp(0.0, PI);
            self.x[0] = self.x[0].max(0.0);
        }
        self.updates += 1;
        self.last_observation = Some(c);
    }

    /// Observation-noise estimate: sample covariance of the residual window
    /// minus the observed part of the process noise, clipped to PSD.
    fn estimate_cov_z(&mut self) {
        if self.residuals.len() < 3 {
            return;
        }
        let n = self.residuals.len() as f64;
        let mut mean = [0.0f64; 3];
        for r in &self.residuals {
            for i in 0..3 {
                mean[i] += r[i];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut cov = Mat3::zeros();
        for r in &self.residuals {
            for i in 0..3 {
                for j in 0..3 {
                    cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        cov /= n - 1.0;
        let h = observation();
        cov -= h * self.cov_w * h.transpose();
        self.cov_z = psd_clip(cov);
    }

    /// Steady-state gain for the current `(F, H, cov_w, cov_z)`.
    fn recompute_gain(&mut self, dt: f64) {
        let f = transition(dt);
        let h = observation();
        let mut p = self.cov_w;
        let mut k = Mat63::zeros();
        for _ in 0..RICCATI_ITERS {
            p = f * p * f.transpose() + self.cov_w;
            let s = h * p * h.transpose() + self.cov_z;
            let s_inv = match s.try_inverse() {
                Some(inv) => inv,
                None => break,
            };
            k = p * h.transpose() * s_inv;
            p = (Mat6::identity() - k * h) * p;
        }
        self.gain = k;
    }
}

/// Eigen-clip a symmetric matrix to the nearest positive-semidefinite one.
pub fn psd_clip(m: Mat3) -> Mat3 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut out = Mat3::zeros();
    for i in 0..3 {
        let lambda = eig.eigenvalues[i].max(0.0);
        let v = eig.eigenvectors.column(i);
        out += lambda * v * v.transpose();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_is_explicit_matrix_product() {
        let mut s = TrackState::new(1, [1.0, 0.0, PI / 2.0]);
        s.x = Vec6::from_column_slice(&[1.0, 0.5, 0.0, 0.0, PI / 2.0, 0.0]);
        let c = s.rkf_predict(0.125);
        assert!((c[0] - 1.0625).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12);
        assert!((c[2] - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn predict_with_zero_rates_is_identity() {
        let s = TrackState::new(2, [3.0, 0.4, 1.2]);
        let c = s.rkf_predict(1.0);
        assert!((c[0] - 3.0).abs() < 1e-12);
        assert!((c[1] - 0.4).abs() < 1e-12);
        assert!((c[2] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn pure_angular_rate_advances_theta() {
        let mut s = TrackState::new(1, [2.0, 0.0, 1.0]);
        s.x[3] = 0.1;
        let c = s.rkf_predict(1.0);
        assert!((c[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_innovation_leaves_state_unchanged() {
        // A stationary track observed exactly at H x has zero innovation and
        // must coast without any correction.
        let mut s = TrackState::new(1, [2.0, 0.3, 1.4]);
        let dt = 0.125;
        for _ in 0..4 {
            s.rkf_update([2.0, 0.3, 1.4], dt);
        }
        let before = s.x;
        let pred = s.rkf_predict(dt);
        s.rkf_update(pred, dt);
        for i in 0..6 {
            assert!((s.x[i] - before[i]).abs() < 1e-9, "component {i}");
        }
    }

    #[test]
    fn noiseless_constant_velocity_track_converges() {
        let dt = 0.125;
        let truth = |t: f64| [5.0 + 0.8 * t, -0.4 + 0.05 * t, 1.5 + 0.01 * t];
        let mut s = TrackState::new(1, truth(0.0));
        let mut err = f64::MAX;
        for j in 1..=6 {
            let t = j as f64 * dt;
            // Prediction error measured before folding in the observation.
            let pred = s.rkf_predict(t - (j - 1) as f64 * dt);
            let tr = truth(t);
            err = (0..3).map(|i| (pred[i] - tr[i]).powi(2)).sum::<f64>().sqrt();
            s.rkf_update(tr, dt);
        }
        assert!(err < 1e-6, "prediction error after updates: {err}");
    }

    #[test]
    fn cov_z_estimate_vanishes_on_zero_noise_stream() {
        let dt = 0.125;
        let mut s = TrackState::new(1, [4.0, 0.2, 1.5]);
        for j in 1..=25 {
            let t = j as f64 * dt;
            s.rkf_update([4.0 + 0.6 * t, 0.2, 1.5], dt);
        }
        let norm = s.cov_z.norm();
        assert!(norm < 1e-9, "cov_z norm {norm}");
    }

    #[test]
    fn non_finite_observation_flags_and_keeps_state() {
        let mut s = TrackState::new(1, [2.0, 0.0, 1.5]);
        s.rkf_update([2.1, 0.0, 1.5], 0.125);
        let before = s.x;
        s.rkf_update([f64::NAN, 0.0, 1.5], 0.125);
        assert!(s.flagged);
        assert_eq!(s.x, before);
    }

    #[test]
    fn psd_clip_removes_negative_eigenvalues() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, -0.5, 0.2));
        let c = psd_clip(m);
        let eig = c.symmetric_eigen();
        for i in 0..3 {
            assert!(eig.eigenvalues[i] >= -1e-12);
        }
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(c[(1, 1)].abs() < 1e-12);
    }
}
