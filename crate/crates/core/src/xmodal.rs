//! Cross-modality association: per-window similarity matrices, soft voting,
//! Hungarian proposals gated by two acceptance criteria, identical-map
//! detection, and the velocity-fingerprint baseline.

use crate::error::{CoreError, Result};
use crate::frame_assoc::{hungarian, Assignment};
use crate::siamese::{cnn_forward, CnnParams};
use crate::trace_map::TraceImage;
use crate::types::cosine_similarity;
use serde::{Deserialize, Serialize};

/// Threshold the paper's training data produced for Criterion 1; kept as a
/// reference constant, not a test target.
pub const TRAINED_ALPHA_REFERENCE: f64 = 0.23;

/// Default pairwise-similarity threshold for identical-map detection.
pub const IDENTICAL_MAP_THRESHOLD: f64 = 0.92;

/// Users slower than this over a window are excluded from association.
pub const STATIONARY_SPEED_FLOOR: f64 = 0.1;

/// Cosine-similarity matrix of one association window: rows are radar
/// clusters, columns are IMUs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub s: Vec<Vec<f64>>,
    pub window: usize,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.s.len()
    }

    pub fn cols(&self) -> usize {
        self.s.first().map_or(0, |r| r.len())
    }
}

/// Similarity matrix of one window from trace images of both modalities.
pub fn similarity_window(
    radar_images: &[TraceImage],
    imu_images: &[TraceImage],
    cnn: &CnnParams,
    window: usize,
) -> Result<SimilarityMatrix> {
    let radar_features: Vec<Vec<f64>> =
        radar_images.iter().map(|img| cnn_forward(img, cnn)).collect::<Result<_>>()?;
    let imu_features: Vec<Vec<f64>> =
        imu_images.iter().map(|img| cnn_forward(img, cnn)).collect::<Result<_>>()?;
    let s = radar_features
        .iter()
        .map(|a| imu_features.iter().map(|b| cosine_similarity(a, b)).collect())
        .collect();
    Ok(SimilarityMatrix { s, window })
}

/// Element-wise mean of the buffered matrices.
pub fn soft_vote(buffer: &[SimilarityMatrix]) -> Result<Vec<Vec<f64>>> {
    let first = buffer.first().ok_or_else(|| CoreError::Data("empty soft-vote buffer".into()))?;
    let (rows, cols) = (first.rows(), first.cols());
    let mut out = vec![vec![0.0f64; cols]; rows];
    for m in buffer {
        if m.rows() != rows || m.cols() != cols {
            return Err(CoreError::Data("soft-vote buffer shape mismatch".into()));
        }
        for (o, r) in out.iter_mut().zip(&m.s) {
            for (v, x) in o.iter_mut().zip(r) {
                *v += x;
            }
        }
    }
    let n = buffer.len() as f64;
    for r in out.iter_mut() {
        for v in r.iter_mut() {
            *v /= n;
        }
    }
    Ok(out)
}

/// Acceptance threshold from training-set similarity pairs:
/// `max(min over positives, max over negatives)`.
pub fn compute_alpha(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(CoreError::Data("alpha needs both positive and negative pairs".into()));
    }
    let min_pos = positives.iter().copied().fold(f64::INFINITY, f64::min);
    let max_neg = negatives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(min_pos.max(max_neg))
}

/// Why a proposal was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    /// Some proposed pair's similarity is below alpha.
    BelowAlpha,
    /// Two radar clusters share the same most-similar IMU.
    AmbiguousBestImu,
}

/// Check the two acceptance criteria against a proposal on `s`.
pub fn check_criteria(
    s: &[Vec<f64>],
    proposal: &Assignment,
    alpha: f64,
) -> std::result::Result<(), Rejection> {
    for (i, j) in &proposal.pairs {
        if s[*i][*j] < alpha {
            return Err(Rejection::BelowAlpha);
        }
    }
    // Row-wise argmax columns must be unique.
    let mut seen = std::collections::BTreeSet::new();
    for row in s {
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        if !seen.insert(best) {
            return Err(Rejection::AmbiguousBestImu);
        }
    }
    Ok(())
}

/// Proposal from a similarity matrix: Hungarian on `1 - S`.
pub fn propose(s: &[Vec<f64>]) -> Result<Assignment> {
    let cost: Vec<Vec<f64>> =
        s.iter().map(|row| row.iter().map(|v| 1.0 - v).collect()).collect();
    hungarian(&cost)
}

/// Outcome of the association loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssociationOutcome {
    /// Accepted pairs `(radar cluster, imu index)`, or the best-scoring
    /// proposal when the stream ended without a lock.
    pub pairs: Vec<(usize, usize)>,
    pub locked: bool,
    /// Index of the newest window in the accepted buffer.
    pub lock_window: Option<usize>,
    /// Soft-voted matrix behind `pairs`.
    pub soft_matrix: Vec<Vec<f64>>,
    /// Rejections observed along the way.
    pub rejections: Vec<(usize, Rejection)>,
}

/// Buffered soft-voting association over a window stream.
///
/// Keeps up to `w` similarity matrices; once full, proposes an assignment on
/// the soft-voted mean and checks both criteria. On rejection the oldest
/// window is evicted; on acceptance the assignment locks for the session.
pub struct AssociationLoop {
    pub w: usize,
    pub alpha: f64,
    buffer: Vec<SimilarityMatrix>,
    locked: Option<AssociationOutcome>,
    rejections: Vec<(usize, Rejection)>,
    best: Option<(f64, Vec<(usize, usize)>, Vec<Vec<f64>>)>,
}

impl AssociationLoop {
    pub fn new(w: usize, alpha: f64) -> Self {
        assert!(w >= 1);
        AssociationLoop { w, alpha, buffer: Vec::new(), locked: None, rejections: Vec::new(), best: None }
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Feed one window; returns the locked outcome once accepted.
    pub fn push(&mut self, matrix: SimilarityMatrix) -> Result<Option<AssociationOutcome>> {
        if let Some(outcome) = &self.locked {
            return Ok(Some(outcome.clone()));
        }
        self.buffer.push(matrix);
        if self.buffer.len() < self.w {
            return Ok(None);
        }
        debug_assert!(self.buffer.len() == self.w);
        let s = soft_vote(&self.buffer)?;
        let proposal = propose(&s)?;
        let score = proposal.pairs.iter().map(|(i, j)| s[*i][*j]).sum::<f64>()
            / proposal.pairs.len().max(1) as f64;
        if self.best.as_ref().map_or(true, |(b, _, _)| score > *b) {
            self.best = Some((score, proposal.pairs.clone(), s.clone()));
        }
        let newest = self.buffer.last().unwrap().window;
        match check_criteria(&s, &proposal, self.alpha) {
            Ok(()) => {
                let outcome = AssociationOutcome {
                    pairs: proposal.pairs,
                    locked: true,
                    lock_window: Some(newest),
                    soft_matrix: s,
                    rejections: self.rejections.clone(),
                };
                self.locked = Some(outcome.clone());
                Ok(Some(outcome))
            }
            Err(reason) => {
                self.rejections.push((newest, reason));
                self.buffer.remove(0);
                Ok(None)
            }
        }
    }

    /// Final outcome: the lock, or the best proposal seen.
    pub fn finish(self) -> Result<AssociationOutcome> {
        if let Some(outcome) = self.locked {
            return Ok(outcome);
        }
        let (_, pairs, soft_matrix) = self.best.ok_or_else(|| {
            CoreError::Data("association stream ended before any full buffer".into())
        })?;
        Ok(AssociationOutcome {
            pairs,
            locked: false,
            lock_window: None,
            soft_matrix,
            rejections: self.rejections,
        })
    }
}

/// Connected-component groups of near-identical maps within one modality.
///
/// Maps are linked when the cosine similarity of their comparative features
/// reaches `threshold`; singleton groups go through the normal pipeline,
/// larger groups to gait association.
pub fn detect_identical_maps(features: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    let n = features.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if cosine_similarity(&features[i], &features[j]) >= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Velocity-fingerprint baseline: binarize each speed stream at `threshold`,
/// score pairs by the fraction of agreeing bits, and assign by Hungarian.
pub fn velocity_fingerprint_baseline(
    radar_speeds: &[Vec<f64>],
    imu_speeds: &[Vec<f64>],
    threshold: f64,
) -> Result<Assignment> {
    let to_bits = |stream: &Vec<f64>| -> Vec<bool> { stream.iter().map(|v| *v > threshold).collect() };
    let radar_bits: Vec<Vec<bool>> = radar_speeds.iter().map(to_bits).collect();
    let imu_bits: Vec<Vec<bool>> = imu_speeds.iter().map(to_bits).collect();
    let mut cost = Vec::with_capacity(radar_bits.len());
    for rb in &radar_bits {
        let mut row = Vec::with_capacity(imu_bits.len());
        for ib in &imu_bits {
            let n = rb.len().min(ib.len());
            if n == 0 {
                row.push(1.0);
                continue;
            }
            let agree = rb.iter().zip(ib).take(n).filter(|(a, b)| a == b).count();
            row.push(1.0 - agree as f64 / n as f64);
        }
        cost.push(row);
    }
    hungarian(&cost)
}

/// Fraction of correctly associated users: `pairs` against the ground-truth
/// cluster-to-IMU mapping, normalized by the user count.
pub fn association_accuracy(pairs: &[(usize, usize)], truth: &[(usize, usize)]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let correct = pairs.iter().filter(|p| truth.contains(p)).count();
    correct as f64 / truth.len() as f64
}
