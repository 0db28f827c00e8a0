//! Object surface as an oriented point cloud.
//!
//! Normals are required to point outward (into free space). The cloud owns
//! a lazily built exact kd-tree used for correspondence matching and
//! collision queries.

mod io;
mod kdtree;

use std::sync::OnceLock;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use io::{load_point_cloud, parse_point_cloud, CloudFormat, LoadOptions};
pub use kdtree::KdTree;

const NORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed point cloud file: {0}")]
    MalformedFile(String),
    #[error("input has no normals and normal estimation was not requested")]
    MissingNormals,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("normal {0} has zero or non-finite length")]
    DegenerateNormal(usize),
    #[error("positions ({positions}) and normals ({normals}) differ in length")]
    LengthMismatch { positions: usize, normals: usize },
    #[error("labels ({labels}) do not align with {points} points")]
    LabelMismatch { labels: usize, points: usize },
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
}

/// Oriented point set with optional integer labels.
#[derive(Debug, Default)]
pub struct PointCloud {
    positions: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    labels: Option<Vec<i64>>,
    tree: OnceLock<KdTree>,
}

impl Clone for PointCloud {
    fn clone(&self) -> Self {
        Self {
            positions: self.positions.clone(),
            normals: self.normals.clone(),
            labels: self.labels.clone(),
            tree: OnceLock::new(),
        }
    }
}

impl PartialEq for PointCloud {
    fn eq(&self, other: &Self) -> bool {
        self.positions == other.positions
            && self.normals == other.normals
            && self.labels == other.labels
    }
}

impl PointCloud {
    /// Builds a cloud, renormalizing normals. Empty input is rejected.
    pub fn new(
        positions: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self, PointCloudError> {
        if positions.len() != normals.len() {
            return Err(PointCloudError::LengthMismatch {
                positions: positions.len(),
                normals: normals.len(),
            });
        }
        if positions.is_empty() {
            return Err(PointCloudError::EmptyCloud);
        }
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(PointCloudError::NonFinite(i));
        }
        let normals = normals
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let len = n.norm();
                if len > 0.0 && len.is_finite() {
                    Ok(n / len)
                } else {
                    Err(PointCloudError::DegenerateNormal(i))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            positions,
            normals,
            labels: None,
            tree: OnceLock::new(),
        })
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self, PointCloudError> {
        if labels.len() != self.positions.len() {
            return Err(PointCloudError::LabelMismatch {
                labels: labels.len(),
                points: self.positions.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<i64> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn tree(&self) -> &KdTree {
        self.tree.get_or_init(|| KdTree::new(&self.positions))
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.positions.iter().sum::<Vector3<f64>>() / self.len().max(1) as f64
    }

    /// Checks the unit-normal invariant.
    pub fn normals_are_unit(&self) -> bool {
        self.normals
            .iter()
            .all(|n| (n.norm() - 1.0).abs() <= NORMAL_TOL)
    }
}

/// Indices chosen by farthest point sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub indices: Vec<usize>,
    pub seed: u64,
}

/// Exact nearest cloud point for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub distance_sq: f64,
}

/// Greedy farthest point selection over `points` starting from `first`.
///
/// Returns positions into `points`. Equal min-distances resolve to the lowest
/// position. Asking for more than available returns every position.
pub fn farthest_point_order(points: &[Vector3<f64>], n: usize, first: usize) -> Vec<usize> {
    let total = points.len();
    if total == 0 || n == 0 {
        return Vec::new();
    }
    let n = n.min(total);
    let mut chosen = Vec::with_capacity(n);
    let mut min_d = vec![f64::INFINITY; total];
    let mut taken = vec![false; total];
    let mut current = first;
    loop {
        chosen.push(current);
        taken[current] = true;
        if chosen.len() == n {
            break;
        }
        let anchor = points[current];
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = (p - anchor).norm_squared();
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best.1 {
                best = (i, min_d[i]);
            }
        }
        current = best.0;
    }
    chosen
}

/// Farthest point sampling restricted to `candidates` (cloud indices).
/// The first pick is drawn uniformly among the candidates from `seed`.
pub fn fps_sample_among(cloud: &PointCloud, candidates: &[usize], n: usize, seed: u64) -> SampleSet {
    if candidates.is_empty() || n == 0 {
        return SampleSet {
            indices: Vec::new(),
            seed,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..candidates.len());
    let pts: Vec<_> = candidates.iter().map(|&i| cloud.positions[i]).collect();
    let order = farthest_point_order(&pts, n, first);
    SampleSet {
        indices: order.into_iter().map(|k| candidates[k]).collect(),
        seed,
    }
}

pub fn fps_sample(cloud: &PointCloud, n: usize, seed: u64) -> SampleSet {
    let all: Vec<usize> = (0..cloud.len()).collect();
    fps_sample_among(cloud, &all, n, seed)
}

pub fn nearest_neighbor(cloud: &PointCloud, queries: &[Vector3<f64>]) -> Vec<Neighbor> {
    let tree = cloud.tree();
    queries
        .iter()
        .map(|q| {
            let (index, distance_sq) = tree.nearest(q).expect("point cloud is never empty");
            Neighbor {
                index,
                position: cloud.positions[index],
                normal: cloud.normals[index],
                distance_sq,
            }
        })
        .collect()
}

/// Perturbs every coordinate with i.i.d. N(0, sigma²). Normals are untouched.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> PointCloud {
    assert!(sigma >= 0.0, "noise sigma must be non-negative");
    if sigma == 0.0 {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let positions = cloud
        .positions
        .iter()
        .map(|p| p + Vector3::from_fn(|_, _| normal.sample(&mut rng)))
        .collect();
    PointCloud {
        positions,
        normals: cloud.normals.clone(),
        labels: cloud.labels.clone(),
        tree: OnceLock::new(),
    }
}

/// PCA normals from `k` nearest neighbours (the query point included),
/// oriented away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud, PointCloudError> {
    let normals = estimate_normals_raw(&cloud.positions, k)?;
    let mut out = PointCloud::new(cloud.positions.clone(), normals)?;
    out.labels = cloud.labels.clone();
    Ok(out)
}

pub(crate) fn estimate_normals_raw(
    positions: &[Vector3<f64>],
    k: usize,
) -> Result<Vec<Vector3<f64>>, PointCloudError> {
    let needed = k.max(3);
    if positions.len() < needed {
        return Err(PointCloudError::TooFewPoints {
            needed,
            got: positions.len(),
        });
    }
    let tree = KdTree::new(positions);
    let centroid = positions.iter().sum::<Vector3<f64>>() / positions.len() as f64;
    let scale = positions
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    Ok(positions
        .iter()
        .map(|p| {
            let nbrs = tree.k_nearest(p, needed);
            let mean = nbrs.iter().map(|&(i, _)| positions[i]).sum::<Vector3<f64>>()
                / nbrs.len() as f64;
            let cov = nbrs.iter().fold(Matrix3::zeros(), |acc, &(i, _)| {
                let d = positions[i] - mean;
                acc + d * d.transpose()
            });
            let eig = SymmetricEigen::new(cov);
            let n: Vector3<f64> = eig.eigenvectors.column(eig.eigenvalues.imin()).into();
            orient_outward(n, p - centroid, scale)
        })
        .collect())
}

fn orient_outward(n: Vector3<f64>, offset: Vector3<f64>, scale: f64) -> Vector3<f64> {
    let s = n.dot(&offset);
    if s.abs() > 1e-9 * scale {
        return if s < 0.0 { -n } else { n };
    }
    // tangent to the centroid direction: make the dominant component positive
    if n[n.iamax()] < 0.0 {
        -n
    } else {
        n
    }
}
