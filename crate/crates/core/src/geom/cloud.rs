use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Ordered, non-empty set of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    /// Reads an `N x 3` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 || t.cols() != 3 {
            return Err(Error::shape("point_cloud", t.shape(), &[0, 3]));
        }
        Self::new(t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flatten().copied().collect();
        Tensor::matrix(self.points.len(), 3, data).expect("n x 3")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn into_points(self) -> Vec<[f64; 3]> {
        self.points
    }

    pub fn get(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        }
    }

    /// Point-major replication: each point is repeated `r` times in place.
    pub fn replicate(&self, r: usize) -> Self {
        Self {
            points: self.points.iter().flat_map(|p| std::iter::repeat_n(*p, r)).collect(),
        }
    }

    /// Index of the point nearest the centroid (lowest index on ties).
    pub fn nearest_to_centroid(&self) -> usize {
        let c = self.centroid();
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = euclid(p, &c);
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }
}

pub fn euclid(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn l1(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
}

/// Euclidean distance between two equally long rows.
pub fn euclid_rows(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
