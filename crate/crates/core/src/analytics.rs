//! Interpersonal-distance tracking, contact detection, and scoring.

use crate::frame_assoc::TrajectorySet;
use crate::types::Pid;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Close contact: interpersonal distance below this, meters.
pub const CLOSE_DISTANCE: f64 = 2.0;
/// Infectious contact: interpersonal distance below this, meters.
pub const INFECTIOUS_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    Close,
    Infectious,
}

/// One detected contact interval between a pair of users.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactEvent {
    pub pid_a: Pid,
    pub pid_b: Pid,
    pub start: f64,
    pub end: f64,
    pub min_distance: f64,
    pub kind: ContactKind,
}

/// Pairwise distances at one time instant; `None` marks an absent user.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub pids: Vec<Pid>,
    /// Row-major `n x n`; diagonal is zero for present users.
    pub values: Vec<Option<f64>>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.pids.len() + j]
    }
}

/// Pairwise 2D distances at time `t` using nearest samples within `tol`.
pub fn interpersonal_distance(set: &TrajectorySet, t: f64, tol: f64) -> DistanceMatrix {
    let pids = set.pids();
    let n = pids.len();
    let positions: Vec<Option<[f64; 2]>> =
        pids.iter().map(|pid| set.position_at(*pid, t, tol)).collect();
    let mut values = vec![None; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = match (positions[i], positions[j]) {
                (Some(a), Some(b)) if i == j => {
                    debug_assert_eq!(a, b);
                    Some(0.0)
                }
                (Some(a), Some(b)) => {
                    Some(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                }
                _ => None,
            };
        }
    }
    DistanceMatrix { pids, values }
}

fn pair_distance_series(
    set: &TrajectorySet,
    a: Pid,
    b: Pid,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Vec<(f64, Option<f64>)> {
    let mut out = Vec::new();
    let mut t = t0;
    while t < t1 {
        let d = match (set.position_at(a, t, dt / 2.0), set.position_at(b, t, dt / 2.0)) {
            (Some(pa), Some(pb)) => {
                Some(((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt())
            }
            _ => None,
        };
        out.push((t, d));
        t += dt;
    }
    out
}

fn time_span(set: &TrajectorySet) -> Option<(f64, f64)> {
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for samples in set.tracks.values() {
        if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
            lo = lo.min(first.t);
            hi = hi.max(last.t);
        }
    }
    if lo <= hi {
        Some((lo, hi))
    } else {
        None
    }
}

/// Maximal intervals with pair distance below 2 m, sampled every `dt`.
pub fn detect_close_contacts(set: &TrajectorySet, dt: f64) -> Vec<ContactEvent> {
    let Some((t0, t1)) = time_span(set) else {
        return Vec::new();
    };
    let pids = set.pids();
    let mut events = Vec::new();
    for i in 0..pids.len() {
        for j in (i + 1)..pids.len() {
            let series = pair_distance_series(set, pids[i], pids[j], t0, t1 + dt / 2.0, dt);
            let mut run_start: Option<f64> = None;
            let mut run_min = f64::MAX;
            let mut last_t = t0;
            for (t, d) in &series {
                let close = matches!(d, Some(v) if *v < CLOSE_DISTANCE);
                if close {
                    if run_start.is_none() {
                        run_start = Some(*t);
                        run_min = f64::MAX;
                    }
                    run_min = run_min.min(d.unwrap());
                    last_t = *t;
                } else if let Some(start) = run_start.take() {
                    events.push(ContactEvent {
                        pid_a: pids[i],
                        pid_b: pids[j],
                        start,
                        end: last_t,
                        min_distance: run_min,
                        kind: ContactKind::Close,
                    });
                }
            }
            if let Some(start) = run_start {
                events.push(ContactEvent {
                    pid_a: pids[i],
                    pid_b: pids[j],
                    start,
                    end: last_t,
                    min_distance: run_min,
                    kind: ContactKind::Close,
                });
            }
        }
    }
    events
}

/// Accumulated close-contact seconds per pair.
pub fn contact_time_matrix(events: &[ContactEvent]) -> BTreeMap<(Pid, Pid), f64> {
    let mut out: BTreeMap<(Pid, Pid), f64> = BTreeMap::new();
    for e in events {
        *out.entry((e.pid_a, e.pid_b)).or_default() += e.end - e.start;
    }
    out
}

/// A positive infectious-contact window: the pair and the window index.
pub type ContactWindow = (Pid, Pid, usize);

/// Infectious-contact windows: slide windows of `tau + 2` seconds stepping
/// `tau` (2 s overlap); a window is positive for a pair if the pair stays
/// under 1 m for at least `tau` contiguous seconds inside it.
pub fn detect_infectious_contacts(
    set: &TrajectorySet,
    tau: f64,
    dt: f64,
) -> (BTreeSet<ContactWindow>, Vec<ContactEvent>) {
    let mut positives = BTreeSet::new();
    let mut events = Vec::new();
    let Some((t0, t1)) = time_span(set) else {
        return (positives, events);
    };
    let pids = set.pids();
    let mut k = 0usize;
    loop {
        let w0 = t0 + k as f64 * tau;
        if w0 >= t1 {
            break;
        }
        let w1 = w0 + tau + 2.0;
        for i in 0..pids.len() {
            for j in (i + 1)..pids.len() {
                let series = pair_distance_series(set, pids[i], pids[j], w0, w1.min(t1 + dt / 2.0), dt);
                // Longest contiguous run under 1 m.
                let mut best: Option<(f64, f64, f64)> = None; // start, end, min
                let mut cur: Option<(f64, f64, f64)> = None;
                for (t, d) in &series {
                    let under = matches!(d, Some(v) if *v < INFECTIOUS_DISTANCE);
                    if under {
                        let dv = d.unwrap();
                        cur = match cur {
                            None => Some((*t, *t, dv)),
                            Some((s, _, m)) => Some((s, *t, m.min(dv))),
                        };
                        if let Some(c) = cur {
                            if best.map_or(true, |b| c.1 - c.0 > b.1 - b.0) {
                                best = Some(c);
                            }
                        }
                    } else {
                        cur = None;
                    }
                }
                if let Some((s, e, m)) = best {
                    if e - s >= tau - dt / 2.0 {
                        positives.insert((pids[i], pids[j], k));
                        events.push(ContactEvent {
                            pid_a: pids[i],
                            pid_b: pids[j],
                            start: s,
                            end: e,
                            min_distance: m,
                            kind: ContactKind::Infectious,
                        });
                    }
                }
            }
        }
        k += 1;
    }
    (positives, events)
}

/// Precision/recall of predicted contact windows against a reference.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub predicted_positives: usize,
    pub reference_positives: usize,
    /// Set when precision was reported as 1 with zero predictions.
    pub empty_predictions: bool,
}

pub fn precision_recall(
    predicted: &BTreeSet<ContactWindow>,
    reference: &BTreeSet<ContactWindow>,
) -> PrecisionRecall {
    let tp = predicted.intersection(reference).count();
    let precision = if predicted.is_empty() { 1.0 } else { tp as f64 / predicted.len() as f64 };
    let recall = if reference.is_empty() { 1.0 } else { tp as f64 / reference.len() as f64 };
    PrecisionRecall {
        precision,
        recall,
        true_positives: tp,
        predicted_positives: predicted.len(),
        reference_positives: reference.len(),
        empty_predictions: predicted.is_empty(),
    }
}
