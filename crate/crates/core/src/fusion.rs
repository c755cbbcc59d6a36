//! Two-radar fusion: coarse known-geometry alignment followed by 2D
//! iterative-closest-point fine registration, then cloud merging.

use crate::error::{CoreError, Result};
use crate::types::{PointCloudFrame, RadarPoint};
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// Correspondences farther apart than this are trimmed from the fit.
pub const TRIM_DISTANCE: f64 = 1.0;

/// Planar rigid transform: rotation then translation; z is untouched.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RigidTransform2D {
    /// Rotation angle, radians in `[-pi, pi]`.
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl RigidTransform2D {
    pub const IDENTITY: RigidTransform2D =
        RigidTransform2D { rotation: 0.0, translation: [0.0, 0.0] };

    pub fn new(rotation: f64, translation: [f64; 2]) -> Self {
        let mut r = rotation.rem_euclid(std::f64::consts::TAU);
        if r > std::f64::consts::PI {
            r -= std::f64::consts::TAU;
        }
        RigidTransform2D { rotation: r, translation }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        [
            c * p[0] - s * p[1] + self.translation[0],
            s * p[0] + c * p[1] + self.translation[1],
        ]
    }

    /// Composition: apply `self` after `first`.
    pub fn after(&self, first: &RigidTransform2D) -> RigidTransform2D {
        let t = self.apply(first.translation);
        RigidTransform2D::new(self.rotation + first.rotation, t)
    }

    pub fn inverse(&self) -> RigidTransform2D {
        let (s, c) = self.rotation.sin_cos();
        let tx = -(c * self.translation[0] + s * self.translation[1]);
        let ty = -(-s * self.translation[0] + c * self.translation[1]);
        RigidTransform2D::new(-self.rotation, [tx, ty])
    }
}

/// Apply a planar transform to every point; z and velocity unchanged.
pub fn coarse_align(cloud: &[RadarPoint], transform: &RigidTransform2D) -> Vec<RadarPoint> {
    cloud
        .iter()
        .map(|p| {
            let q = transform.apply([p.x, p.y]);
            RadarPoint::new(q[0], q[1], p.z, p.radial_velocity)
        })
        .collect()
}

/// Result of an ICP registration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: RigidTransform2D,
    /// Mean correspondence distance at the last iteration.
    pub residual: f64,
    pub iterations: usize,
}

fn collinear(points: &[[f64; 2]]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let a = points[0];
    let mut reference: Option<[f64; 2]> = None;
    for p in &points[1..] {
        let d = [p[0] - a[0], p[1] - a[1]];
        let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if norm < 1e-9 {
            continue;
        }
        let dir = [d[0] / norm, d[1] / norm];
        match reference {
            None => reference = Some(dir),
            Some(r) => {
                if (r[0] * dir[1] - r[1] * dir[0]).abs() > 1e-6 {
                    return false;
                }
            }
        }
    }
    true
}

/// Closed-form least-squares rigid fit from paired points (SVD of the 2x2
/// cross-covariance).
fn rigid_fit(source: &[[f64; 2]], target: &[[f64; 2]]) -> RigidTransform2D {
    let n = source.len() as f64;
    let mut sc = [0.0f64; 2];
    let mut tc = [0.0f64; 2];
    for (s, t) in source.iter().zip(target) {
        sc[0] += s[0];
        sc[1] += s[1];
        tc[0] += t[0];
        tc[1] += t[1];
    }
    for v in sc.iter_mut().chain(tc.iter_mut()) {
        *v /= n;
    }
    let mut h = Matrix2::zeros();
    for (s, t) in source.iter().zip(target) {
        let sv = Vector2::new(s[0] - sc[0], s[1] - sc[1]);
        let tv = Vector2::new(t[0] - tc[0], t[1] - tc[1]);
        h += sv * tv.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut r = vt.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        let mut v = vt.transpose();
        v.set_column(1, &(-v.column(1)));
        r = v * u.transpose();
    }
    let angle = r[(1, 0)].atan2(r[(0, 0)]);
    let rot = RigidTransform2D::new(angle, [0.0, 0.0]);
    let rsc = rot.apply(sc);
    RigidTransform2D::new(angle, [tc[0] - rsc[0], tc[1] - rsc[1]])
}

/// Point-to-point ICP with correspondence trimming.
///
/// Alternates nearest-neighbor matching (pairs farther than 1 m are
/// trimmed) and the closed-form rigid fit until the mean correspondence
/// distance changes by less than `tol` or `max_iter` is reached.
pub fn icp(
    source: &[RadarPoint],
    target: &[RadarPoint],
    max_iter: usize,
    tol: f64,
) -> Result<IcpResult> {
    if source.len() < 3 || target.len() < 3 {
        return Err(CoreError::Data("icp needs at least 3 points per cloud".into()));
    }
    let src: Vec<[f64; 2]> = source.iter().map(|p| [p.x, p.y]).collect();
    let tgt: Vec<[f64; 2]> = target.iter().map(|p| [p.x, p.y]).collect();
    if collinear(&src) || collinear(&tgt) {
        return Err(CoreError::Data("degenerate (collinear) cloud".into()));
    }
    let mut transform = RigidTransform2D::IDENTITY;
    let mut prev_residual = f64::MAX;
    let mut residual = f64::MAX;
    let mut iterations = 0usize;
    for it in 0..max_iter {
        iterations = it + 1;
        let moved: Vec<[f64; 2]> = src.iter().map(|p| transform.apply(*p)).collect();
        let mut pairs_src = Vec::new();
        let mut pairs_tgt = Vec::new();
        let mut dist_sum = 0.0;
        for m in &moved {
            let mut best = f64::MAX;
            let mut best_j = 0usize;
            for (j, t) in tgt.iter().enumerate() {
                let d = (m[0] - t[0]).powi(2) + (m[1] - t[1]).powi(2);
                if d < best {
                    best = d;
                    best_j = j;
                }
            }
            let d = best.sqrt();
            if d <= TRIM_DISTANCE {
                pairs_src.push(*m);
                pairs_tgt.push(tgt[best_j]);
                dist_sum += d;
            }
        }
        if pairs_src.len() < 3 {
            return Err(CoreError::Numerical(
                "icp lost correspondences (clouds too far apart)".into(),
            ));
        }
        residual = dist_sum / pairs_src.len() as f64;
        if (prev_residual - residual).abs() < tol {
            break;
        }
        prev_residual = residual;
        let step = rigid_fit(&pairs_src, &pairs_tgt);
        transform = step.after(&transform);
    }
    Ok(IcpResult { transform, residual, iterations })
}

/// A merged point tagged with its source radar.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TaggedPoint {
    pub point: RadarPoint,
    pub source: u8,
}

/// Union of cloud `a` and transformed cloud `b`; velocities are retained
/// and every point carries its source tag. No deduplication.
pub fn merge_clouds(
    a: &[RadarPoint],
    b: &[RadarPoint],
    transform: &RigidTransform2D,
) -> Vec<TaggedPoint> {
    let mut out: Vec<TaggedPoint> =
        a.iter().map(|p| TaggedPoint { point: *p, source: 0 }).collect();
    for p in coarse_align(b, transform) {
        out.push(TaggedPoint { point: p, source: 1 });
    }
    out
}

/// Merge two synchronized frame streams after registering radar 1 onto
/// radar 0 with `transform`.
pub fn merge_frames(
    a: &PointCloudFrame,
    b: &PointCloudFrame,
    transform: &RigidTransform2D,
) -> PointCloudFrame {
    let merged = merge_clouds(&a.points, &b.points, transform);
    PointCloudFrame {
        timestamp: a.timestamp,
        points: merged.into_iter().map(|t| t.point).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(rng: &mut ChaCha8Rng, n: usize) -> Vec<RadarPoint> {
        (0..n)
            .map(|_| {
                RadarPoint::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(0.0..1.7),
                    0.0,
                )
            })
            .collect()
    }

    #[test]
    fn identity_transform_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = blob(&mut rng, 10);
        let out = coarse_align(&cloud, &RigidTransform2D::IDENTITY);
        for (a, b) in cloud.iter().zip(&out) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn quarter_turn_rotates_x_to_y() {
        let t = RigidTransform2D::new(std::f64::consts::FRAC_PI_2, [0.0, 0.0]);
        let out = coarse_align(&[RadarPoint::new(1.0, 0.0, 0.5, 0.2)], &t);
        assert!(out[0].x.abs() < 1e-12);
        assert!((out[0].y - 1.0).abs() < 1e-12);
        assert_eq!(out[0].z, 0.5);
        assert_eq!(out[0].radial_velocity, 0.2);
    }

    #[test]
    fn transform_inverse_round_trip() {
        let t = RigidTransform2D::new(0.7, [1.3, -2.2]);
        let inv = t.inverse();
        let p = [3.1, -0.4];
        let back = inv.apply(t.apply(p));
        assert!((back[0] - p[0]).abs() < 1e-12);
        assert!((back[1] - p[1]).abs() < 1e-12);
    }

    #[test]
    fn icp_identity_on_equal_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = blob(&mut rng, 30);
        let r = icp(&cloud, &cloud, 30, 1e-9).unwrap();
        assert!(r.transform.rotation.abs() < 1e-9);
        assert!(r.residual < 1e-9);
    }

    #[test]
    fn icp_recovers_small_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let source = blob(&mut rng, 60);
        let truth = RigidTransform2D::new(5.0f64.to_radians(), [0.1, -0.2]);
        let target = coarse_align(&source, &truth);
        let r = icp(&source, &target, 60, 1e-10).unwrap();
        assert!(
            (r.transform.rotation - truth.rotation).abs() < 0.1f64.to_radians(),
            "rotation {} vs {}",
            r.transform.rotation,
            truth.rotation
        );
        for d in 0..2 {
            assert!((r.transform.translation[d] - truth.translation[d]).abs() < 0.01);
        }
    }

    #[test]
    fn icp_with_outliers_and_trimming() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let source = blob(&mut rng, 50);
        let truth = RigidTransform2D::new(3.0f64.to_radians(), [0.05, 0.1]);
        let mut target = coarse_align(&source, &truth);
        // 20% far outliers; the 1 m trim gate should reject them.
        for _ in 0..10 {
            target.push(RadarPoint::new(
                rng.gen_range(20.0..30.0),
                rng.gen_range(20.0..30.0),
                1.0,
                0.0,
            ));
        }
        let r = icp(&source, &target, 60, 1e-10).unwrap();
        assert!((r.transform.rotation - truth.rotation).abs() < 0.5f64.to_radians());
        for d in 0..2 {
            assert!((r.transform.translation[d] - truth.translation[d]).abs() < 0.05);
        }
    }

    #[test]
    fn icp_rejects_degenerate_input() {
        let line: Vec<RadarPoint> =
            (0..5).map(|i| RadarPoint::new(i as f64, 2.0 * i as f64, 0.0, 0.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = blob(&mut rng, 10);
        assert!(icp(&line, &cloud, 10, 1e-6).is_err());
        assert!(icp(&cloud[..2], &cloud, 10, 1e-6).is_err());
    }

    #[test]
    fn merge_adds_densities_and_keeps_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = blob(&mut rng, 12);
        let b = a.clone();
        let merged = merge_clouds(&a, &b, &RigidTransform2D::IDENTITY);
        assert_eq!(merged.len(), 24);
        assert_eq!(merged.iter().filter(|p| p.source == 0).count(), 12);
        // Coincident duplicates are kept.
        assert_eq!(merged[0].point, merged[12].point);
    }
}
