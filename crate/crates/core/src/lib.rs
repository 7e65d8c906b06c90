//! Non-rigid scene flow estimation between two point clouds.
//!
//! The flow field is recovered at runtime by minimizing a bidirectional
//! Chamfer data term plus a graph-Laplacian smoothness term built on a
//! symmetric k-NN graph of the source cloud:
//!
//! ```text
//! E(F) = C(P_src + F, P_dst) + alpha * tr(F^T L F)
//! ```
//!
//! The minimization uses Adam with nearest-neighbor correspondences
//! recomputed every iteration. A rigid point-to-point ICP baseline,
//! flow metrics, motion segmentation, multi-frame densification, PLY / raw
//! array I/O and a synthetic scene generator round out the crate.
//!
//! Per-point work (nearest-neighbor queries, gradient assembly, metric
//! evaluation) runs on rayon when the `parallel` feature is enabled
//! (the default). All reductions are performed sequentially in index
//! order, so results are bit-identical regardless of thread count.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod cloud;
pub mod error;
pub mod graph;
pub mod icp;
pub mod io;
pub mod knn;
pub mod metrics;
pub mod objective;
pub mod parallel;
pub mod solver;
pub mod synth;

pub use cloud::{centroid, translate, FlowField, PointCloud};
pub use error::{Error, Result};
pub use graph::{build_knn_graph, degree_matrix, laplacian, weight_matrix, KnnGraph, SparseSym};
pub use icp::{icp_align, kabsch, rigid_flow, IcpConfig, IcpResult, RigidTransform};
pub use metrics::{evaluate, FlowMetrics};
pub use objective::{
    chamfer, data_term, energy, energy_gradient, laplacian_term, nearest_correspondences,
    ChamferMode, Correspondences, EnergyBreakdown, Objective,
};
pub use solver::{solve, solve_with_laplacian, AdamState, SolveReport, SolverConfig};

/// A 3D point or displacement, meters.
pub type Vec3 = nalgebra::Vector3<f64>;
