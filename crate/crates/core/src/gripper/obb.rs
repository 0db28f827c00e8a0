//! Per-link oriented bounding boxes and the separating-axis overlap test.

use nalgebra::{Isometry3, Matrix3, Rotation3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::surface::LinkSurface;
use crate::mesh::TriMesh;

const MIN_HALF_EXTENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    /// Columns are the box axes.
    pub rotation: Rotation3<f64>,
}

impl Obb {
    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.product()
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Obb {
        Obb {
            center: iso.transform_point(&self.center.into()).coords,
            half_extents: self.half_extents,
            rotation: iso.rotation.to_rotation_matrix() * self.rotation,
        }
    }

    fn local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.center))
    }

    /// Strict interior test.
    pub fn contains_strict(&self, p: &Vector3<f64>) -> bool {
        let l = self.local(p);
        (0..3).all(|i| l[i].abs() < self.half_extents[i])
    }

    /// Closed containment, boundary included.
    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        let l = self.local(p);
        (0..3).all(|i| l[i].abs() <= self.half_extents[i] + tol)
    }

    pub fn bounding_radius(&self) -> f64 {
        self.half_extents.norm()
    }

    /// Separating-axis test over the 15 candidate axes. Touching counts as overlap.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let a = self.rotation.matrix();
        let b = other.rotation.matrix();
        let t = other.center - self.center;
        let mut axes: Vec<Vector3<f64>> = Vec::with_capacity(15);
        for i in 0..3 {
            axes.push(a.column(i).into());
            axes.push(b.column(i).into());
        }
        for i in 0..3 {
            for j in 0..3 {
                let c = a.column(i).cross(&b.column(j));
                // parallel edges: covered by the face axes
                if c.norm_squared() > 1e-18 {
                    axes.push(c.normalize());
                }
            }
        }
        !axes.iter().any(|l| {
            let ra: f64 = (0..3).map(|i| self.half_extents[i] * a.column(i).dot(l).abs()).sum();
            let rb: f64 = (0..3).map(|i| other.half_extents[i] * b.column(i).dot(l).abs()).sum();
            t.dot(l).abs() > ra + rb
        })
    }
}

/// Area-weighted mean and covariance of a triangle surface.
fn surface_moments(mesh: &TriMesh) -> Option<(Vector3<f64>, Matrix3<f64>)> {
    let mut area = 0.0;
    let mut first = Vector3::zeros();
    let mut second = Matrix3::zeros();
    for t in 0..mesh.triangles.len() {
        let a_t = mesh.face_area(t);
        if a_t <= 0.0 {
            continue;
        }
        let [a, b, c] = mesh.corners(t);
        let s = a + b + c;
        area += a_t;
        first += a_t * s / 3.0;
        second += (a_t / 12.0) * (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose());
    }
    (area > 0.0).then(|| {
        let mean = first / area;
        (mean, second / area - mean * mean.transpose())
    })
}

fn point_moments(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
    let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / points.len() as f64;
    (mean, cov)
}

fn fit(points: &[Vector3<f64>], rotation: Rotation3<f64>, padding: f64) -> Obb {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        let l = rotation.inverse_transform_vector(p);
        lo = lo.inf(&l);
        hi = hi.sup(&l);
    }
    let mid = (lo + hi) * 0.5;
    Obb {
        center: rotation * mid,
        half_extents: ((hi - lo) * 0.5).map(|h| (h + padding).max(MIN_HALF_EXTENT)),
        rotation,
    }
}

/// Box around `points`, axes from the principal directions of the surface
/// (or of the points when no mesh is given). The link-frame axes are tried
/// as well and the smaller box wins.
pub fn fit_obb(points: &[Vector3<f64>], mesh: Option<&TriMesh>, padding: f64) -> Option<Obb> {
    if points.is_empty() {
        return None;
    }
    let (_, cov) = mesh
        .and_then(surface_moments)
        .unwrap_or_else(|| point_moments(points));
    let eig = SymmetricEigen::new(cov);
    let mut axes = eig.eigenvectors;
    if axes.determinant() < 0.0 {
        let c = -axes.column(2);
        axes.set_column(2, &c);
    }
    let pca = fit(points, Rotation3::from_matrix_unchecked(axes), padding);
    let aligned = fit(points, Rotation3::identity(), padding);
    Some(if aligned.volume() <= pca.volume() { aligned } else { pca })
}

/// One OBB per link in the link frame, enclosing the link mesh vertices and
/// surface samples. Links without geometry get `None`.
pub fn link_obbs(meshes: &[TriMesh], surfaces: &LinkSurface, padding: f64) -> Vec<Option<Obb>> {
    meshes
        .iter()
        .zip(&surfaces.links)
        .map(|(mesh, samples)| {
            let pts: Vec<Vector3<f64>> = mesh.vertices.iter().chain(&samples.points).copied().collect();
            fit_obb(&pts, (!mesh.triangles.is_empty()).then_some(mesh), padding)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(center: Vector3<f64>, rot: Rotation3<f64>, half: Vector3<f64>) -> Obb {
        Obb {
            center,
            half_extents: half,
            rotation: rot,
        }
    }

    #[test]
    fn box_mesh_recovers_box() {
        let half = Vector3::new(0.05, 0.02, 0.01);
        let mesh = TriMesh::cuboid(half * 2.0);
        let obb = fit_obb(&mesh.vertices, Some(&mesh), 0.003).unwrap();
        let mut got: Vec<f64> = obb.half_extents.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        assert_relative_eq!(got[0], 0.013, epsilon = 1e-12);
        assert_relative_eq!(got[1], 0.023, epsilon = 1e-12);
        assert_relative_eq!(got[2], 0.053, epsilon = 1e-12);
    }

    #[test]
    fn rotated_box_volume() {
        let half = Vector3::new(0.05, 0.02, 0.01);
        let iso = Isometry3::from_parts(
            Vector3::new(0.1, -0.2, 0.3).into(),
            UnitQuaternion::from_euler_angles(0.0, 0.0, 30f64.to_radians()),
        );
        let mesh = TriMesh::cuboid(half * 2.0).transformed(&iso);
        let obb = fit_obb(&mesh.vertices, Some(&mesh), 0.0).unwrap();
        let truth = 8.0 * half.product();
        assert!((obb.volume() - truth).abs() < 0.05 * truth, "{} vs {truth}", obb.volume());
    }

    #[test]
    fn zero_padding_contains_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<_> = (0..300)
            .map(|_| Vector3::new(rng.random::<f64>(), 0.3 * rng.random::<f64>(), 0.1 * rng.random::<f64>()))
            .collect();
        let obb = fit_obb(&pts, None, 0.0).unwrap();
        assert!(pts.iter().all(|p| obb.contains(p, 1e-12)));
        assert!(obb.half_extents.iter().all(|&h| h > 0.0));
    }

    #[test]
    fn sat_separated_and_overlapping_cubes() {
        let half = Vector3::repeat(0.5);
        let a = unit_box(Vector3::zeros(), Rotation3::identity(), half);
        let far = unit_box(Vector3::new(3.0, 0.0, 0.0), Rotation3::identity(), half);
        let near = unit_box(Vector3::new(0.7, 0.2, 0.0), Rotation3::from_euler_angles(0.3, 0.2, 0.1), half);
        assert!(!a.overlaps(&far));
        assert!(a.overlaps(&near));
    }

    fn grid_points(b: &Obb, n: usize) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let f = |t: usize| -1.0 + 2.0 * t as f64 / (n - 1) as f64;
                    let l = Vector3::new(f(i), f(j), f(k)).component_mul(&b.half_extents);
                    out.push(b.center + b.rotation * l);
                }
            }
        }
        out
    }

    #[test]
    fn sat_agrees_with_dense_containment() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut decided = 0;
        for _ in 0..300 {
            let rand_box = |rng: &mut ChaCha8Rng| {
                unit_box(
                    Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                    Rotation3::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0)),
                    Vector3::new(rng.random_range(0.1..0.6), rng.random_range(0.1..0.6), rng.random_range(0.1..0.6)),
                )
            };
            let a = rand_box(&mut rng);
            let b = rand_box(&mut rng);
            let witness = grid_points(&a, 12).iter().any(|p| b.contains(p, 0.0))
                || grid_points(&b, 12).iter().any(|p| a.contains(p, 0.0));
            if witness {
                assert!(a.overlaps(&b));
                decided += 1;
            }
            if !a.overlaps(&b) {
                assert!(!witness);
            }
        }
        assert!(decided > 30);
    }
}
