//! Energy `E(F) = E_d(F) + alpha * E_L(F)` and its gradient.
//!
//! `E_d` is the Chamfer distance between the translated source and the
//! target. `E_L = tr(F^T L F)` penalizes flow that varies across graph
//! edges. Both terms are in m².
//!
//! The gradient treats nearest-neighbor assignments as fixed at the current
//! flow, which is exact wherever the assignments are locally constant:
//!
//! ```text
//! g_i = 2 (x_i - y_fwd(i)) + sum_{j : bwd(j) = i} 2 (x_i - y_j) + 2 alpha (L F)_i
//! ```

use serde::{Deserialize, Serialize};

use crate::cloud::check_len;
use crate::knn::{KdTree, Neighbor};
use crate::parallel::map_range;
use crate::{Error, FlowField, PointCloud, Result, SparseSym, Vec3};

/// Which Chamfer sums enter the data term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferMode {
    /// Source-to-target plus target-to-source.
    #[default]
    Both,
    /// Source-to-target only.
    Forward,
}

impl std::str::FromStr for ChamferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(ChamferMode::Both),
            "forward" => Ok(ChamferMode::Forward),
            other => Err(Error::invalid(format!("unknown chamfer mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for ChamferMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChamferMode::Both => "both",
            ChamferMode::Forward => "forward",
        })
    }
}

/// Nearest-neighbor pairings in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    /// For each point of `a`: nearest index in `b` and squared distance.
    pub fwd: Vec<Neighbor>,
    /// For each point of `b`: nearest index in `a` and squared distance.
    pub bwd: Vec<Neighbor>,
}

impl Correspondences {
    pub fn fwd_sum(&self) -> f64 {
        self.fwd.iter().map(|n| n.dist2).sum()
    }

    pub fn bwd_sum(&self) -> f64 {
        self.bwd.iter().map(|n| n.dist2).sum()
    }

    fn same_assignment(&self, other: &Self) -> bool {
        self.fwd.iter().zip(&other.fwd).all(|(a, b)| a.index == b.index)
            && self.bwd.iter().zip(&other.bwd).all(|(a, b)| a.index == b.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub laplacian: f64,
    pub total: f64,
    pub alpha: f64,
}

impl EnergyBreakdown {
    pub fn new(data: f64, laplacian: f64, alpha: f64) -> Self {
        Self {
            data,
            laplacian,
            total: data + alpha * laplacian,
            alpha,
        }
    }
}

fn nearest_all(tree: &KdTree, queries: &[Vec3]) -> Vec<Neighbor> {
    map_range(queries.len(), |i| {
        tree.nearest(&queries[i]).expect("tree is non-empty")
    })
}

/// Exact nearest neighbors from `a` into `b` and from `b` into `a`.
pub fn nearest_correspondences(a: &PointCloud, b: &PointCloud) -> Correspondences {
    let tree_a = KdTree::new(a.points());
    let tree_b = KdTree::new(b.points());
    Correspondences {
        fwd: nearest_all(&tree_b, a.points()),
        bwd: nearest_all(&tree_a, b.points()),
    }
}

/// Sum of squared nearest-neighbor distances in both directions.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let c = nearest_correspondences(a, b);
    c.fwd_sum() + c.bwd_sum()
}

/// Chamfer distance between the translated source and the target.
pub fn data_term(source: &PointCloud, flow: &FlowField, target: &PointCloud) -> Result<f64> {
    let moved = crate::translate(source, flow)?;
    Ok(chamfer(&moved, target))
}

/// `tr(F^T L F) = sum_ij L_ij (f_i . f_j)`.
pub fn laplacian_term(flow: &FlowField, l: &SparseSym) -> Result<f64> {
    let lf = l.mul_vec3(flow.vectors())?;
    Ok(quadratic_form(flow.vectors(), &lf))
}

fn quadratic_form(f: &[Vec3], lf: &[Vec3]) -> f64 {
    f.iter().zip(lf).map(|(a, b)| a.dot(b)).sum()
}

/// Full energy with bidirectional Chamfer.
pub fn energy(
    source: &PointCloud,
    flow: &FlowField,
    target: &PointCloud,
    l: &SparseSym,
    alpha: f64,
) -> Result<EnergyBreakdown> {
    Objective::new(source, target, l, alpha, ChamferMode::Both)?.energy(flow)
}

/// Analytic gradient of [`energy`] with respect to the flow.
pub fn energy_gradient(
    source: &PointCloud,
    flow: &FlowField,
    target: &PointCloud,
    l: &SparseSym,
    alpha: f64,
) -> Result<FlowField> {
    Objective::new(source, target, l, alpha, ChamferMode::Both)?
        .energy_and_gradient(flow)
        .map(|(_, g)| g)
}

/// Energy evaluator bound to one source/target pair and a fixed Laplacian.
///
/// The target index is built once; the translated source is re-indexed on
/// every evaluation.
#[derive(Debug)]
pub struct Objective<'a> {
    source: &'a PointCloud,
    target: &'a PointCloud,
    target_tree: KdTree,
    laplacian: &'a SparseSym,
    alpha: f64,
    mode: ChamferMode,
}

impl<'a> Objective<'a> {
    pub fn new(
        source: &'a PointCloud,
        target: &'a PointCloud,
        laplacian: &'a SparseSym,
        alpha: f64,
        mode: ChamferMode,
    ) -> Result<Self> {
        check_len(source.len(), laplacian.dim())?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(Self {
            source,
            target,
            target_tree: KdTree::new(target.points()),
            laplacian,
            alpha,
            mode,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode(&self) -> ChamferMode {
        self.mode
    }

    fn moved(&self, flow: &FlowField) -> Result<Vec<Vec3>> {
        check_len(self.source.len(), flow.len())?;
        Ok(self
            .source
            .points()
            .iter()
            .zip(flow.vectors())
            .map(|(p, f)| p + f)
            .collect())
    }

    /// Correspondences between the translated source and the target.
    /// `bwd` is left empty in forward mode.
    pub fn correspondences(&self, flow: &FlowField) -> Result<Correspondences> {
        let moved = self.moved(flow)?;
        Ok(self.correspond(&moved))
    }

    fn correspond(&self, moved: &[Vec3]) -> Correspondences {
        let fwd = nearest_all(&self.target_tree, moved);
        let bwd = match self.mode {
            ChamferMode::Both => nearest_all(&KdTree::new(moved), self.target.points()),
            ChamferMode::Forward => Vec::new(),
        };
        Correspondences { fwd, bwd }
    }

    pub fn energy(&self, flow: &FlowField) -> Result<EnergyBreakdown> {
        let moved = self.moved(flow)?;
        let corr = self.correspond(&moved);
        let lap = laplacian_term(flow, self.laplacian)?;
        Ok(EnergyBreakdown::new(
            corr.fwd_sum() + corr.bwd_sum(),
            lap,
            self.alpha,
        ))
    }

    pub fn energy_and_gradient(&self, flow: &FlowField) -> Result<(EnergyBreakdown, FlowField)> {
        let moved = self.moved(flow)?;
        let corr = self.correspond(&moved);
        let lf = self.laplacian.mul_vec3(flow.vectors())?;
        let lap = quadratic_form(flow.vectors(), &lf);

        let target = self.target.points();
        let mut grad = map_range(moved.len(), |i| {
            2.0 * (moved[i] - target[corr.fwd[i].index]) + 2.0 * self.alpha * lf[i]
        });
        // Scatter in target order so the sum is thread-count independent.
        for (j, nb) in corr.bwd.iter().enumerate() {
            let i = nb.index;
            grad[i] += 2.0 * (moved[i] - target[j]);
        }
        let e = EnergyBreakdown::new(corr.fwd_sum() + corr.bwd_sum(), lap, self.alpha);
        Ok((e, FlowField::from_vec_unchecked(grad)))
    }

    /// True when the nearest-neighbor assignments at `a` and `b` agree.
    pub fn same_assignment(&self, a: &FlowField, b: &FlowField) -> Result<bool> {
        Ok(self.correspondences(a)?.same_assignment(&self.correspondences(b)?))
    }
}
