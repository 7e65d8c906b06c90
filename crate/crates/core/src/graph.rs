//! Symmetric k-NN graph on a point cloud and the sparse matrices built on it.
//!
//! ```text
//! W_ij = exp(-r_ij^2)  for (i, j) an edge, r_ij in meters
//! W_ii = 1
//! D_ii = sum_j W_ij                 (self weight included)
//! L    = D - W                      (unnormalized)
//! L    = D^-1/2 (D - W) D^-1/2      (normalized)
//! ```
//!
//! Including `W_ii` in the degree keeps every `D_ii >= 1`, so the
//! normalized form is always defined.

use std::fmt::Write as _;

use crate::knn::KdTree;
use crate::parallel::map_range;
use crate::{Error, PointCloud, Result, Vec3};

/// Undirected k-NN graph. `(i, j)` is an edge when either endpoint is among
/// the other's `k` nearest neighbors. Edges are stored once with `i < j`,
/// sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    edges: Vec<(usize, usize)>,
    edge_dists: Vec<f64>,
}

impl KnnGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Euclidean length of each edge, aligned with [`KnnGraph::edges`].
    pub fn edge_dists(&self) -> &[f64] {
        &self.edge_dists
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }
}

/// Build the symmetrized k-NN graph of `cloud`. Requires `1 <= k < n`.
pub fn build_knn_graph(cloud: &PointCloud, k: usize) -> Result<KnnGraph> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "k must satisfy 1 <= k < n (k = {k}, n = {n})"
        )));
    }
    let points = cloud.points();
    let tree = KdTree::new(points);
    let neighbors = map_range(n, |i| tree.knn(&points[i], k, Some(i)));

    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n * k);
    for (i, list) in neighbors.iter().enumerate() {
        for nb in list {
            let j = nb.index;
            edges.push((i.min(j), i.max(j)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let edge_dists = edges
        .iter()
        .map(|&(i, j)| (points[i] - points[j]).norm())
        .collect();
    Ok(KnnGraph {
        n,
        k,
        edges,
        edge_dists,
    })
}

/// Square symmetric sparse matrix in compressed-row layout with sorted
/// column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    /// Assemble from `(row, col, value)` entries. Both triangles must be
    /// supplied; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n || c >= n) {
            return Err(Error::invalid(format!(
                "entry ({r}, {c}) outside {n}x{n} matrix"
            )));
        }
        if let Some(idx) = triplets.iter().position(|t| !t.2.is_finite()) {
            return Err(Error::NonFinite { index: idx });
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry present") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            cols.push(c);
            values.push(v);
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let m = Self {
            n,
            row_ptr,
            cols,
            values,
        };
        if !m.is_symmetric() {
            return Err(Error::invalid("matrix is not symmetric"));
        }
        Ok(m)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_triplets(
            diag.len(),
            diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// All stored `(row, col, value)` entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// `y = A x` for a field of 3-vectors (applied column-wise).
    pub fn mul_vec3(&self, x: &[Vec3]) -> Result<Vec<Vec3>> {
        if x.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        Ok(map_range(self.n, |i| {
            self.row(i).fold(Vec3::zeros(), |acc, (j, v)| acc + x[j] * v)
        }))
    }

    /// Dense copy, row-major. Intended for tests and small debugging dumps.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.triplets() {
            dense[i][j] = v;
        }
        dense
    }

    /// Matrix Market coordinate text, symmetric storage (lower triangle,
    /// 1-based indices).
    pub fn to_matrix_market(&self) -> String {
        let lower: Vec<_> = self.triplets().filter(|&(i, j, _)| j <= i).collect();
        let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(out, "{} {} {}", self.n, self.n, lower.len());
        for (i, j, v) in lower {
            let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, v);
        }
        out
    }
}

/// `W_ij = exp(-r_ij^2)` on edges, ones on the diagonal.
pub fn weight_matrix(graph: &KnnGraph) -> SparseSym {
    let mut triplets = Vec::with_capacity(graph.n + 2 * graph.edges.len());
    triplets.extend((0..graph.n).map(|i| (i, i, 1.0)));
    for (&(i, j), &r) in graph.edges.iter().zip(&graph.edge_dists) {
        let w = (-r * r).exp();
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    SparseSym::from_triplets(graph.n, triplets).expect("edge list is symmetric and in range")
}

/// Diagonal matrix of full row sums of `w`.
pub fn degree_matrix(w: &SparseSym) -> SparseSym {
    SparseSym::from_diagonal(&w.row_sums()).expect("row sums of a finite matrix")
}

/// `D - W`, or `D^-1/2 (D - W) D^-1/2` when `normalized`.
pub fn laplacian(w: &SparseSym, d: &SparseSym, normalized: bool) -> Result<SparseSym> {
    if w.dim() != d.dim() {
        return Err(Error::LengthMismatch {
            expected: w.dim(),
            found: d.dim(),
        });
    }
    let deg = d.diagonal();
    if let Some((index, &value)) = deg.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::SingularDegree { index, value });
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|v| 1.0 / v.sqrt()).collect();
    let triplets = w
        .triplets()
        .map(|(i, j, wij)| {
            let base = if i == j { deg[i] - wij } else { -wij };
            let v = if normalized {
                base * (inv_sqrt[i] * inv_sqrt[j])
            } else {
                base
            };
            (i, j, v)
        })
        .collect();
    SparseSym::from_triplets(w.dim(), triplets)
}

/// Graph, weights and Laplacian for a source cloud in one call.
pub fn cloud_laplacian(cloud: &PointCloud, k: usize, normalized: bool) -> Result<SparseSym> {
    let graph = build_knn_graph(cloud, k)?;
    let w = weight_matrix(&graph);
    let d = degree_matrix(&w);
    laplacian(&w, &d, normalized)
}
