//! Inter-frame cluster association and tracking metrics.
//!
//! The Hungarian solver here is the assignment workhorse for the whole
//! pipeline: inter-frame tracking, velocity pre-matching, cross-modality
//! association, and gait matching all go through it.

use crate::error::{CoreError, Result};
use crate::types::{cosine_similarity, Pid};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Cost used to pad rectangular matrices to square; exceeds any
/// `1 - cosine` cost by a wide margin.
pub const PAD_COST: f64 = 1e6;

/// One-to-one assignment between rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, column)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    /// Column assigned to `row`, if any.
    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|(r, _)| *r == row).map(|(_, c)| *c)
    }
}

/// Minimum-cost one-to-one assignment on an `M x N` cost matrix.
///
/// Rectangular inputs are padded to square with [`PAD_COST`]; the result
/// covers `min(M, N)` real pairs. Among equal-cost optima the
/// lexicographically smallest assignment (by row, then column) is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return Ok(Assignment { pairs: Vec::new(), total_cost: 0.0 });
    }
    for r in cost {
        if r.len() != cols {
            return Err(CoreError::Data("ragged cost matrix".into()));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Data("non-finite cost entry".into()));
        }
    }
    let k = rows.max(cols);
    let square: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i < rows && j < cols { cost[i][j] } else { PAD_COST }).collect())
        .collect();

    let base = solve_square(&square);
    let optimal = total_of(&square, &base);

    // Lexicographic refinement: fix rows in order to the smallest column
    // that still allows an optimal completion.
    let tol = 1e-9 * optimal.abs().max(1.0);
    let mut fixed_cols: Vec<usize> = Vec::with_capacity(k);
    let mut used = vec![false; k];
    let mut fixed_cost = 0.0;
    for row in 0..k {
        let mut chosen = None;
        for col in 0..k {
            if used[col] {
                continue;
            }
            let sub = reduced_matrix(&square, row + 1, &used, col);
            let sub_cost = if sub.is_empty() {
                0.0
            } else {
                let a = solve_square(&sub);
                total_of(&sub, &a)
            };
            let total = fixed_cost + square[row][col] + sub_cost;
            if total <= optimal + tol {
                chosen = Some(col);
                break;
            }
        }
        let col = chosen.expect("an optimal completion always exists");
        used[col] = true;
        fixed_cost += square[row][col];
        fixed_cols.push(col);
    }

    let mut pairs = Vec::new();
    let mut total_cost = 0.0;
    for (row, &col) in fixed_cols.iter().enumerate() {
        if row < rows && col < cols {
            pairs.push((row, col));
            total_cost += cost[row][col];
        }
    }
    Ok(Assignment { pairs, total_cost })
}

fn total_of(square: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(r, &c)| square[r][c]).sum()
}

/// Rows `skip_rows..` and unused columns except `drop_col`.
fn reduced_matrix(square: &[Vec<f64>], skip_rows: usize, used: &[bool], drop_col: usize) -> Vec<Vec<f64>> {
    let k = square.len();
    let cols: Vec<usize> = (0..k).filter(|&c| !used[c] && c != drop_col).collect();
    (skip_rows..k).map(|r| cols.iter().map(|&c| square[r][c]).collect()).collect()
}

/// O(n^3) shortest-augmenting-path assignment on a square matrix.
/// Returns the column assigned to each row.
fn solve_square(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // row matched to column j (1-based rows)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Associate feature sets of two consecutive frames: Hungarian on
/// `1 - cosine_similarity`.
pub fn associate_frames(features_prev: &[Vec<f64>], features_cur: &[Vec<f64>]) -> Result<Assignment> {
    let cost: Vec<Vec<f64>> = features_prev
        .iter()
        .map(|a| features_cur.iter().map(|b| 1.0 - cosine_similarity(a, b)).collect())
        .collect();
    hungarian(&cost)
}

/// One tracked sample: time, planar position, speed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
}

/// Per-PID trajectories; gaps from missed frames stay as holes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub tracks: BTreeMap<Pid, Vec<TrajectoryPoint>>,
}

impl TrajectorySet {
    pub fn push(&mut self, pid: Pid, point: TrajectoryPoint) {
        self.tracks.entry(pid).or_default().push(point);
    }

    pub fn pids(&self) -> Vec<Pid> {
        self.tracks.keys().copied().collect()
    }

    /// Position of `pid` at the sample nearest to `t` within `tol`.
    pub fn position_at(&self, pid: Pid, t: f64, tol: f64) -> Option<[f64; 2]> {
        let samples = self.tracks.get(&pid)?;
        if samples.is_empty() {
            return None;
        }
        let idx = samples.partition_point(|s| s.t < t).min(samples.len() - 1);
        let mut best = &samples[idx];
        if idx > 0 && (samples[idx - 1].t - t).abs() < (best.t - t).abs() {
            best = &samples[idx - 1];
        }
        if (best.t - t).abs() <= tol {
            Some([best.x, best.y])
        } else {
            None
        }
    }
}

/// Assemble per-PID trajectories from a labeled frame stream of
/// `(timestamp, [(pid, position, speed)])` records.
pub fn assemble_trajectories(frames: &[(f64, Vec<(Pid, [f64; 2], f64)>)]) -> TrajectorySet {
    let mut set = TrajectorySet::default();
    for (t, entries) in frames {
        for (pid, pos, speed) in entries {
            set.push(*pid, TrajectoryPoint { t: *t, x: pos[0], y: pos[1], speed: *speed });
        }
    }
    set
}

/// Multiple-object tracking error: mean distance between matched tracked and
/// true positions over all samples where both exist.
pub fn mote(tracked: &TrajectorySet, truth: &TrajectorySet, time_tol: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pid, samples) in &tracked.tracks {
        for s in samples {
            if let Some(tp) = truth.position_at(*pid, s.t, time_tol) {
                sum += ((s.x - tp[0]).powi(2) + (s.y - tp[1]).powi(2)).sqrt();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Ratio of mismatches: frame-to-frame associations whose ground-truth users
/// differ, over all frame-to-frame associations. Input: per frame, the
/// `(track pid, true user)` pairs.
pub fn ratio_of_mismatches(frames: &[Vec<(Pid, i32)>]) -> f64 {
    let mut associations = 0usize;
    let mut mismatches = 0usize;
    for w in frames.windows(2) {
        let prev: BTreeMap<Pid, i32> = w[0].iter().copied().collect();
        for (pid, user) in &w[1] {
            if let Some(prev_user) = prev.get(pid) {
                associations += 1;
                if prev_user != user {
                    mismatches += 1;
                }
            }
        }
    }
    if associations == 0 {
        0.0
    } else {
        mismatches as f64 / associations as f64
    }
}
