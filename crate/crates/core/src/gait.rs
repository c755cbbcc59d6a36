//! Gait fallback for users with near-identical trace maps: Doppler
//! spectrogram fitting against a parametric two-limb gait model on the radar
//! side, step analysis on the IMU side, and gait-feature association.

use crate::error::{CoreError, Result};
use crate::frame_assoc::{hungarian, Assignment};
use crate::sim::ImuTrace;
use crate::trace_map::imu_dead_reckon;
use crate::types::cosine_similarity;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Velocity bin width, m/s.
pub const VEL_BIN: f64 = 0.1;
/// Time bin width, s.
pub const TIME_BIN: f64 = 0.25;
/// Velocity axis ceiling, m/s.
pub const VEL_MAX: f64 = 4.0;
/// Relative amplitude of the limb velocity oscillation.
pub const LIMB_AMPLITUDE: f64 = 0.8;

/// Valid gait parameter ranges.
pub const FREQ_RANGE: (f64, f64) = (0.3, 3.5);
pub const STEP_RANGE: (f64, f64) = (0.2, 1.2);

/// Velocity-time energy map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrogram {
    /// `data[v * time_bins + t]`, non-negative.
    pub data: Vec<f64>,
    pub vel_bins: usize,
    pub time_bins: usize,
}

impl Spectrogram {
    pub fn new(duration: f64) -> Self {
        let vel_bins = (VEL_MAX / VEL_BIN).round() as usize;
        let time_bins = (duration / TIME_BIN).ceil() as usize;
        Spectrogram { data: vec![0.0; vel_bins * time_bins], vel_bins, time_bins }
    }

    pub fn at(&self, v: usize, t: usize) -> f64 {
        self.data[v * self.time_bins + t]
    }

    /// Deposit `weight` at speed `v` in time bin `t`, splitting linearly
    /// between the two nearest velocity bins.
    fn deposit(&mut self, speed: f64, tbin: usize, weight: f64) {
        if tbin >= self.time_bins {
            return;
        }
        let pos = (speed / VEL_BIN - 0.5).max(0.0);
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        if i0 < self.vel_bins {
            self.data[i0 * self.time_bins + tbin] += weight * (1.0 - frac);
        }
        if i0 + 1 < self.vel_bins {
            self.data[(i0 + 1) * self.time_bins + tbin] += weight * frac;
        }
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for v in 0..self.vel_bins {
            let row: Vec<String> =
                (0..self.time_bins).map(|t| format!("{}", self.at(v, t))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Gait descriptor: step frequency (Hz), step length (m), start phase (rad).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaitFeature {
    pub step_frequency: f64,
    pub step_length: f64,
    pub start_phase: f64,
}

/// Spectrogram of a tracked cluster's point speeds.
///
/// `history` holds, per frame, the timestamp and the absolute radial
/// velocities of the cluster's points; each point deposits unit weight.
pub fn measured_spectrogram(history: &[(f64, Vec<f64>)], window: [f64; 2]) -> Spectrogram {
    let mut spec = Spectrogram::new(window[1] - window[0]);
    for (t, speeds) in history {
        if *t < window[0] || *t >= window[1] {
            continue;
        }
        let tbin = ((t - window[0]) / TIME_BIN) as usize;
        for v in speeds {
            spec.deposit(v.abs(), tbin, 1.0);
        }
    }
    spec
}

/// Render the simplified gait model: a torso band at `f * l` plus two limb
/// components oscillating at the step frequency with amplitude 0.8.
pub fn simulate_gait_spectrogram(
    step_frequency: f64,
    step_length: f64,
    start_phase: f64,
    duration: f64,
) -> Spectrogram {
    let mut spec = Spectrogram::new(duration);
    let torso = step_frequency * step_length;
    let dt = 0.01;
    let steps = (duration / dt).round() as usize;
    for k in 0..steps {
        let t = k as f64 * dt;
        let tbin = (t / TIME_BIN) as usize;
        let osc = LIMB_AMPLITUDE * (TAU * step_frequency * t + start_phase).sin();
        spec.deposit(torso, tbin, 1.0);
        spec.deposit(torso * (1.0 + osc), tbin, 1.0);
        spec.deposit(torso * (1.0 - osc), tbin, 1.0);
    }
    spec
}

/// Element-wise log normalization: `ln(1 + X)` scaled to unit maximum.
pub fn log_normalize(spec: &Spectrogram) -> Result<Vec<f64>> {
    let logged: Vec<f64> = spec.data.iter().map(|v| v.ln_1p()).collect();
    let max = logged.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(CoreError::Data("all-zero spectrogram".into()));
    }
    Ok(logged.iter().map(|v| v / max).collect())
}

fn fit_objective(measured_norm: &[f64], time_bins: usize, params: &[f64; 3]) -> f64 {
    let (f, l, phase) = (params[0], params[1], params[2]);
    let mut penalty = 0.0;
    if f < FREQ_RANGE.0 {
        penalty += 1e3 * (FREQ_RANGE.0 - f);
    }
    if f > FREQ_RANGE.1 {
        penalty += 1e3 * (f - FREQ_RANGE.1);
    }
    if l < STEP_RANGE.0 {
        penalty += 1e3 * (STEP_RANGE.0 - l);
    }
    if l > STEP_RANGE.1 {
        penalty += 1e3 * (l - STEP_RANGE.1);
    }
    if penalty > 0.0 {
        return 1e3 + penalty;
    }
    let duration = time_bins as f64 * TIME_BIN;
    let sim = simulate_gait_spectrogram(f, l, phase.rem_euclid(TAU), duration);
    let sim_norm = match log_normalize(&sim) {
        Ok(v) => v,
        Err(_) => return 1e6,
    };
    measured_norm.iter().zip(&sim_norm).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Derivative-free Nelder-Mead minimization in 3 dimensions.
fn nelder_mead(
    f: &dyn Fn(&[f64; 3]) -> f64,
    start: [f64; 3],
    scale: [f64; 3],
    iterations: usize,
) -> ([f64; 3], f64) {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, f(&start)));
    for d in 0..3 {
        let mut p = start;
        p[d] += scale[d];
        simplex.push((p, f(&p)));
    }
    for _ in 0..iterations {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if (simplex[3].1 - simplex[0].1).abs() < 1e-12 {
            break;
        }
        let mut centroid = [0.0f64; 3];
        for s in &simplex[..3] {
            for d in 0..3 {
                centroid[d] += s.0[d] / 3.0;
            }
        }
        let worst = simplex[3];
        let mut reflect = [0.0f64; 3];
        for d in 0..3 {
            reflect[d] = centroid[d] + (centroid[d] - worst.0[d]);
        }
        let fr = f(&reflect);
        if fr < simplex[0].1 {
            // Try expansion.
            let mut expand = [0.0f64; 3];
            for d in 0..3 {
                expand[d] = centroid[d] + 2.0 * (centroid[d] - worst.0[d]);
            }
            let fe = f(&expand);
            simplex[3] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflect, fr);
        } else {
            // Contraction toward the centroid.
            let mut contract = [0.0f64; 3];
            for d in 0..3 {
                contract[d] = centroid[d] + 0.5 * (worst.0[d] - centroid[d]);
            }
            let fc = f(&contract);
            if fc < worst.1 {
                simplex[3] = (contract, fc);
            } else {
                // Shrink toward the best point.
                let best = simplex[0].0;
                for i in 1..4 {
                    let mut p = [0.0f64; 3];
                    for d in 0..3 {
                        p[d] = best[d] + 0.5 * (simplex[i].0[d] - best[d]);
                    }
                    simplex[i] = (p, f(&p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    (simplex[0].0, simplex[0].1)
}

/// Fit the gait model to a measured spectrogram by multi-start Nelder-Mead
/// on the log-normalized squared difference. Returns the best fit and its
/// objective value.
pub fn fit_gait(measured: &Spectrogram) -> Result<(GaitFeature, f64)> {
    let measured_norm = log_normalize(measured)?;
    let objective =
        |p: &[f64; 3]| fit_objective(&measured_norm, measured.time_bins, p);
    let mut best: Option<([f64; 3], f64)> = None;
    for fi in 0..4 {
        let f0 = FREQ_RANGE.0 + (fi as f64 + 0.5) * (FREQ_RANGE.1 - FREQ_RANGE.0) / 4.0;
        for li in 0..4 {
            let l0 = STEP_RANGE.0 + (li as f64 + 0.5) * (STEP_RANGE.1 - STEP_RANGE.0) / 4.0;
            for pi in 0..4 {
                let p0 = (pi as f64 + 0.5) * TAU / 4.0;
                let (point, value) =
                    nelder_mead(&objective, [f0, l0, p0], [0.15, 0.08, 0.5], 200);
                if best.as_ref().map_or(true, |(_, b)| value < *b) {
                    best = Some((point, value));
                }
            }
        }
    }
    let (p, value) = best.unwrap();
    Ok((
        GaitFeature {
            step_frequency: p[0].clamp(FREQ_RANGE.0, FREQ_RANGE.1),
            step_length: p[1].clamp(STEP_RANGE.0, STEP_RANGE.1),
            start_phase: p[2].rem_euclid(TAU),
        },
        value,
    ))
}

/// Objective value of arbitrary parameters against a measured spectrogram
/// (exposed so callers can sanity-check fits against grid starts).
pub fn gait_objective(measured: &Spectrogram, feature: &GaitFeature) -> Result<f64> {
    let measured_norm = log_normalize(measured)?;
    Ok(fit_objective(
        &measured_norm,
        measured.time_bins,
        &[feature.step_frequency, feature.step_length, feature.start_phase],
    ))
}

/// Power spectrum of a real signal at frequencies `k / T`.
fn dft_power(signal: &[f64], dt: f64, max_freq: f64) -> Vec<(f64, f64)> {
    let n = signal.len();
    let total = n as f64 * dt;
    let mean = signal.iter().sum::<f64>() / n as f64;
    let kmax = ((max_freq * total) as usize).min(n / 2);
    let mut out = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let w = TAU * k as f64 / n as f64;
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, s) in signal.iter().enumerate() {
            let x = s - mean;
            re += x * (w * i as f64).cos();
            im -= x * (w * i as f64).sin();
        }
        out.push((k as f64 / total, re * re + im * im));
    }
    out
}

/// IMU-side gait estimate over a window.
///
/// Step frequency is the dominant DFT peak of the vertical acceleration,
/// falling back to the horizontal acceleration magnitude when the vertical
/// channel is flat; step length is the dead-reckoned distance divided by the
/// number of steps in the window.
pub fn imu_gait(trace: &ImuTrace, window: [f64; 2]) -> Result<GaitFeature> {
    let samples: Vec<_> =
        trace.samples.iter().filter(|s| s.t >= window[0] && s.t < window[1]).collect();
    if samples.len() < 16 {
        return Err(CoreError::Data("gait window too short".into()));
    }
    let dt = samples[1].t - samples[0].t;
    let vertical: Vec<f64> = samples.iter().map(|s| s.accel[2]).collect();
    let horizontal: Vec<f64> = samples
        .iter()
        .map(|s| (s.accel[0] * s.accel[0] + s.accel[1] * s.accel[1]).sqrt())
        .collect();
    let pick_peak = |signal: &[f64]| -> Option<(f64, f64, f64)> {
        let spectrum = dft_power(signal, dt, FREQ_RANGE.1);
        let in_band: Vec<&(f64, f64)> =
            spectrum.iter().filter(|(f, _)| *f >= FREQ_RANGE.0).collect();
        if in_band.is_empty() {
            return None;
        }
        let mut powers: Vec<f64> = in_band.iter().map(|(_, p)| *p).collect();
        powers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = powers[powers.len() / 2];
        let (freq, peak) =
            in_band.iter().fold((0.0, 0.0), |acc, (f, p)| if *p > acc.1 { (*f, *p) } else { acc });
        Some((freq, peak, median))
    };
    let freq = match pick_peak(&vertical) {
        Some((f, peak, median)) if peak > 5.0 * median.max(1e-12) && peak > 1e-6 => f,
        _ => match pick_peak(&horizontal) {
            Some((f, peak, median)) if peak > 5.0 * median.max(1e-12) && peak > 1e-6 => f,
            _ => {
                return Err(CoreError::Data(
                    "no dominant gait peak above the noise floor".into(),
                ))
            }
        },
    };
    let reckoned = imu_dead_reckon(trace, window)?;
    let distance = reckoned.path_length();
    let span = window[1] - window[0];
    let step_length = (distance / (freq * span)).clamp(STEP_RANGE.0, STEP_RANGE.1);
    Ok(GaitFeature { step_frequency: freq, step_length, start_phase: 0.0 })
}

/// Associate radar and IMU gait features: per-dimension normalization by the
/// pooled mean, then Hungarian on `1 - cosine`.
pub fn gait_associate(radar: &[GaitFeature], imu: &[GaitFeature]) -> Result<Assignment> {
    if radar.is_empty() || imu.is_empty() {
        return Err(CoreError::Data("empty gait feature sets".into()));
    }
    let all: Vec<&GaitFeature> = radar.iter().chain(imu.iter()).collect();
    let mean_f = all.iter().map(|g| g.step_frequency).sum::<f64>() / all.len() as f64;
    let mean_l = all.iter().map(|g| g.step_length).sum::<f64>() / all.len() as f64;
    let norm = |g: &GaitFeature| vec![g.step_frequency / mean_f, g.step_length / mean_l];
    let rf: Vec<Vec<f64>> = radar.iter().map(norm).collect();
    let inf: Vec<Vec<f64>> = imu.iter().map(norm).collect();
    let cost: Vec<Vec<f64>> = rf
        .iter()
        .map(|a| inf.iter().map(|b| 1.0 - cosine_similarity(a, b)).collect())
        .collect();
    hungarian(&cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::imu::ImuSample;
    use crate::types::Quat;

    #[test]
    fn single_speed_history_fills_one_band() {
        let history: Vec<(f64, Vec<f64>)> =
            (0..96).map(|k| (k as f64 * 0.125, vec![1.0; 10])).collect();
        let spec = measured_spectrogram(&history, [0.0, 12.0]);
        // All energy near the 1 m/s bin in every time bin.
        for t in 0..spec.time_bins {
            let col: f64 = (0..spec.vel_bins).map(|v| spec.at(v, t)).sum();
            assert!(col > 0.0);
            let near: f64 = (8..=11).map(|v| spec.at(v, t)).sum();
            assert!((near - col).abs() < 1e-9, "energy outside the 1 m/s band");
        }
        let empty = measured_spectrogram(&[], [0.0, 12.0]);
        assert_eq!(empty.total(), 0.0);
    }

    #[test]
    fn torso_band_at_product_of_frequency_and_step() {
        let spec = simulate_gait_spectrogram(1.0, 0.7, 0.0, 12.0);
        // Time-collapsed profile must put its maximum at ~0.7 m/s.
        let profile: Vec<f64> =
            (0..spec.vel_bins).map(|v| (0..spec.time_bins).map(|t| spec.at(v, t)).sum()).collect();
        let peak = profile.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        let peak_speed = (peak as f64 + 0.5) * VEL_BIN;
        assert!((peak_speed - 0.7).abs() < 0.15, "peak at {peak_speed}");
    }

    #[test]
    fn columns_repeat_with_gait_period() {
        // f = 2.0 Hz: period 0.5 s = 2 time bins.
        let spec = simulate_gait_spectrogram(2.0, 0.5, 0.3, 4.0);
        for t in 0..spec.time_bins - 2 {
            for v in 0..spec.vel_bins {
                let a = spec.at(v, t);
                let b = spec.at(v, t + 2);
                assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "cell ({v},{t})");
            }
        }
    }

    #[test]
    fn phase_shift_by_pi_is_half_period_time_shift() {
        // f = 1.0 Hz: half period = 0.5 s = 2 time bins.
        let base = simulate_gait_spectrogram(1.0, 0.6, 0.4, 8.0);
        let shifted = simulate_gait_spectrogram(1.0, 0.6, 0.4 + std::f64::consts::PI, 8.0);
        for t in 0..base.time_bins - 2 {
            for v in 0..base.vel_bins {
                let a = shifted.at(v, t);
                let b = base.at(v, t + 2);
                assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "cell ({v},{t})");
            }
        }
    }

    #[test]
    fn fit_recovers_known_parameters() {
        for (f, l, p) in [(1.2, 0.6, 0.0), (0.8, 0.9, std::f64::consts::FRAC_PI_2)] {
            let spec = simulate_gait_spectrogram(f, l, p, 12.0);
            let (fit, value) = fit_gait(&spec).unwrap();
            assert!((fit.step_frequency - f).abs() < 0.05, "f {} vs {}", fit.step_frequency, f);
            assert!((fit.step_length - l).abs() < 0.05, "l {} vs {}", fit.step_length, l);
            assert!(value < 1e-6, "objective {value}");
        }
    }

    #[test]
    fn fit_survives_additive_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut spec = simulate_gait_spectrogram(1.2, 0.6, 0.7, 12.0);
        let max = spec.data.iter().copied().fold(0.0, f64::max);
        for v in spec.data.iter_mut() {
            *v += rng.gen_range(0.0..0.05 * max);
        }
        let (fit, _) = fit_gait(&spec).unwrap();
        assert!((fit.step_frequency - 1.2).abs() < 0.1, "f {}", fit.step_frequency);
    }

    #[test]
    fn all_zero_spectrogram_is_error() {
        let spec = Spectrogram::new(12.0);
        assert!(fit_gait(&spec).is_err());
    }

    #[test]
    fn imu_gait_finds_sinusoid_frequency() {
        let dt = 0.01;
        let f = 1.5;
        let samples: Vec<ImuSample> = (0..1200)
            .map(|k| {
                let t = k as f64 * dt;
                ImuSample {
                    t,
                    accel: [0.35, 0.0, (TAU * f * t).sin()],
                    quat: Quat::IDENTITY,
                }
            })
            .collect();
        let trace = ImuTrace { pid: 1, samples, speed_stream: Vec::new() };
        let g = imu_gait(&trace, [0.0, 12.0]).unwrap();
        assert!((g.step_frequency - 1.5).abs() <= 1.0 / 12.0 + 1e-9, "f {}", g.step_frequency);
    }

    #[test]
    fn imu_gait_stationary_errors() {
        let samples: Vec<ImuSample> = (0..1200)
            .map(|k| ImuSample { t: k as f64 * 0.01, accel: [0.0; 3], quat: Quat::IDENTITY })
            .collect();
        let trace = ImuTrace { pid: 1, samples, speed_stream: Vec::new() };
        assert!(imu_gait(&trace, [0.0, 12.0]).is_err());
    }

    #[test]
    fn gait_association_matches_and_crosses() {
        let r = [
            GaitFeature { step_frequency: 1.0, step_length: 0.5, start_phase: 0.0 },
            GaitFeature { step_frequency: 1.4, step_length: 0.3, start_phase: 0.0 },
        ];
        let i = [
            GaitFeature { step_frequency: 1.02, step_length: 0.49, start_phase: 0.0 },
            GaitFeature { step_frequency: 1.38, step_length: 0.31, start_phase: 0.0 },
        ];
        let a = gait_associate(&r, &i).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        let swapped = [i[1], i[0]];
        let a = gait_associate(&r, &swapped).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        // Identical features: deterministic tie-break to the identity.
        let same = [r[0], r[0]];
        let a = gait_associate(&same, &same).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }
}
