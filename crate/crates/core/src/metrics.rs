//! End-point error, threshold accuracies and angular error of a flow
//! estimate against ground truth.

use serde::{Deserialize, Serialize};

use crate::cloud::check_len;
use crate::parallel::map_range;
use crate::{Error, FlowField, Result, Vec3};

/// Guards the relative-error division for zero ground-truth vectors, meters.
pub const REL_EPS: f64 = 1e-12;
/// Vectors shorter than this have no direction: the angle is 0 when both
/// are that short and pi/2 when only one is.
pub const ANGLE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    /// Mean end-point error, meters.
    pub epe: f64,
    /// Percent of points with error < 0.05 m or relative error < 5 %.
    pub acc5: f64,
    /// Percent of points with error < 0.1 m or relative error < 10 %.
    pub acc10: f64,
    /// Mean angle between estimated and true vectors, radians.
    pub angle_err: f64,
}

struct PointStats {
    err: f64,
    within5: bool,
    within10: bool,
    angle: f64,
}

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    match (na < ANGLE_EPS, nb < ANGLE_EPS) {
        (true, true) => 0.0,
        (true, false) | (false, true) => std::f64::consts::FRAC_PI_2,
        (false, false) => (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos(),
    }
}

fn point_stats(est: &Vec3, gt: &Vec3) -> PointStats {
    let err = (est - gt).norm();
    let rel = err / gt.norm().max(REL_EPS);
    PointStats {
        err,
        within5: err < 0.05 || rel < 0.05,
        within10: err < 0.1 || rel < 0.1,
        angle: angle_between(est, gt),
    }
}

pub fn evaluate(est: &FlowField, gt: &FlowField) -> Result<FlowMetrics> {
    check_len(gt.len(), est.len())?;
    if gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (e, g) = (est.vectors(), gt.vectors());
    let stats = map_range(e.len(), |i| point_stats(&e[i], &g[i]));
    let n = stats.len() as f64;
    let mut sum_err = 0.0;
    let mut sum_angle = 0.0;
    let mut count5 = 0usize;
    let mut count10 = 0usize;
    for s in &stats {
        sum_err += s.err;
        sum_angle += s.angle;
        count5 += s.within5 as usize;
        count10 += s.within10 as usize;
    }
    Ok(FlowMetrics {
        epe: sum_err / n,
        acc5: 100.0 * count5 as f64 / n,
        acc10: 100.0 * count10 as f64 / n,
        angle_err: sum_angle / n,
    })
}
