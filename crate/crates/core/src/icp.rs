//! Rigid point-to-point ICP baseline and the Kabsch least-squares fit.

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};

use crate::cloud::{check_len, mean};
use crate::knn::KdTree;
use crate::parallel::map_range;
use crate::{Error, FlowField, PointCloud, Result, Vec3};

/// `x -> R x + t` with `R` a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRepr", try_from = "TransformRepr")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    /// Meters.
    pub translation: Vec3,
}

/// Row-major JSON layout.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    #[serde(default = "identity_rows")]
    rotation: [[f64; 3]; 3],
    #[serde(default)]
    translation: [f64; 3],
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        let rows = r.rotation;
        let t = RigidTransform {
            rotation: Matrix3::new(
                rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
                rows[2][1], rows[2][2],
            ),
            translation: Vec3::from(r.translation),
        };
        if !t.is_proper(1e-6) {
            return Err(Error::invalid("rotation is not orthonormal with det +1"));
        }
        Ok(t)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about the unit-normalized `axis`, then
    /// translation.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Largest entry of `|R^T R - I|` and `|det R - 1|` both below `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        ortho < tol && (self.rotation.determinant() - 1.0).abs() < tol
    }

    /// Angle of the relative rotation `R_a^T R_b`, radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Least-squares rigid fit minimizing `sum |R src_i + t - dst_i|^2`.
///
/// Needs at least three non-collinear correspondences.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<RigidTransform> {
    check_len(src.len(), dst.len())?;
    if src.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    let cs = mean(src);
    let cd = mean(dst);
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        h += a * (d - cd).transpose();
        spread += a * a.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let (lo, hi) = (sv.min(), sv.max());
    // Second-largest eigenvalue of the source scatter.
    let mid = sv.sum() - lo - hi;
    if !(hi > 0.0) || mid <= 1e-12 * hi {
        return Err(Error::Degenerate("source points are collinear or coincident".into()));
    }

    let svd = SVD::new(h, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not converge".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    // Flip the direction of the smallest singular value on reflection.
    let (min_idx, _) = svd.singular_values.argmin();
    let mut flip = Matrix3::identity();
    flip[(min_idx, min_idx)] = d;
    let rotation = v * flip * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop when the RMSE improves by less than this, meters.
    pub tol: f64,
    /// Fraction of worst correspondences dropped before each fit, in [0, 1).
    pub trim: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            trim: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Meters, for `transform`.
    pub rmse: f64,
    /// RMSE at the start of every iteration.
    pub rmse_history: Vec<f64>,
    pub iterations: usize,
}

/// Alternate nearest-neighbor matching and Kabsch fits from the identity.
pub fn icp_align(source: &PointCloud, target: &PointCloud, config: &IcpConfig) -> Result<IcpResult> {
    if config.max_iters == 0 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    if !(0.0..1.0).contains(&config.trim) {
        return Err(Error::invalid(format!("trim must lie in [0, 1), got {}", config.trim)));
    }
    let tree = KdTree::new(target.points());
    let src = source.points();
    let dst = target.points();
    let keep = ((src.len() as f64) * (1.0 - config.trim)).ceil().max(1.0) as usize;

    // Returns (rmse over kept pairs, kept source indices, matched target indices).
    let match_pairs = |t: &RigidTransform| {
        let hits = map_range(src.len(), |i| tree.nearest(&t.apply(&src[i])).expect("non-empty"));
        let mut order: Vec<usize> = (0..src.len()).collect();
        if keep < src.len() {
            order.sort_by(|&a, &b| hits[a].dist2.total_cmp(&hits[b].dist2).then(a.cmp(&b)));
            order.truncate(keep);
        }
        let sse: f64 = order.iter().map(|&i| hits[i].dist2).sum();
        let matched: Vec<usize> = order.iter().map(|&i| hits[i].index).collect();
        ((sse / order.len() as f64).sqrt(), order, matched)
    };

    let mut transform = RigidTransform::identity();
    let mut history = Vec::new();
    let mut iterations = 0;
    let (mut rmse, mut order, mut matched) = match_pairs(&transform);
    while iterations < config.max_iters {
        history.push(rmse);
        iterations += 1;
        let s: Vec<Vec3> = order.iter().map(|&i| src[i]).collect();
        let d: Vec<Vec3> = matched.iter().map(|&j| dst[j]).collect();
        let candidate = kabsch(&s, &d)?;
        let (next_rmse, next_order, next_matched) = match_pairs(&candidate);
        if next_rmse > rmse && config.trim == 0.0 {
            // Only reachable through roundoff; keep the better transform.
            break;
        }
        let improvement = rmse - next_rmse;
        transform = candidate;
        rmse = next_rmse;
        order = next_order;
        matched = next_matched;
        if improvement < config.tol {
            break;
        }
    }
    Ok(IcpResult {
        transform,
        rmse,
        rmse_history: history,
        iterations,
    })
}

/// Flow induced by a rigid motion: `f_i = R p_i + t - p_i`.
pub fn rigid_flow(cloud: &PointCloud, transform: &RigidTransform) -> FlowField {
    FlowField::from_vec_unchecked(
        cloud
            .points()
            .iter()
            .map(|p| transform.apply(p) - p)
            .collect(),
    )
}
