use crate::{Error, Result, Vec3};

/// An ordered, non-empty set of 3D points in meters.
///
/// Index `i` always refers to the same physical point; all coordinates are
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
    }

    /// Widen single-precision rows.
    pub fn from_f32_rows(rows: &[[f32; 3]]) -> Result<Self> {
        Self::new(
            rows.iter()
                .map(|r| Vec3::new(r[0] as f64, r[1] as f64, r[2] as f64))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    /// Reorder points so that output `i` is input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            points: perm.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Concatenate clouds in order.
    pub fn concat<'a>(clouds: impl IntoIterator<Item = &'a PointCloud>) -> Result<Self> {
        Self::new(
            clouds
                .into_iter()
                .flat_map(|c| c.points.iter().copied())
                .collect(),
        )
    }
}

/// One displacement per source point, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    vectors: Vec<Vec3>,
}

impl FlowField {
    pub fn new(vectors: Vec<Vec3>) -> Result<Self> {
        if let Some(index) = vectors
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { vectors })
    }

    pub(crate) fn from_vec_unchecked(vectors: Vec<Vec3>) -> Self {
        Self { vectors }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![Vec3::zeros(); n],
        }
    }

    pub fn constant(n: usize, v: Vec3) -> Self {
        Self {
            vectors: vec![v; n],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<Vec3> {
        self.vectors
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            vectors: self.vectors.iter().map(|v| v * c).collect(),
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            vectors: perm.iter().map(|&i| self.vectors[i]).collect(),
        }
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &FlowField) -> Result<Self> {
        check_len(self.len(), other.len())?;
        Ok(Self {
            vectors: self
                .vectors
                .iter()
                .zip(&other.vectors)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}

/// Move every source point by its flow vector.
pub fn translate(source: &PointCloud, flow: &FlowField) -> Result<PointCloud> {
    check_len(source.len(), flow.len())?;
    let points: Vec<Vec3> = source
        .points
        .iter()
        .zip(&flow.vectors)
        .map(|(p, f)| p + f)
        .collect();
    PointCloud::new(points)
}

/// Arithmetic mean of the points.
pub fn centroid(cloud: &PointCloud) -> Vec3 {
    mean(cloud.points())
}

pub(crate) fn mean(points: &[Vec3]) -> Vec3 {
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}
