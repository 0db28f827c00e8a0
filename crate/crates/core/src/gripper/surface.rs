//! Finite surface samples per link, palmar flags and contact weights.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::urdf::{KinematicModel, Shape};
use super::GripperError;
use crate::mesh::{load_mesh, TriMesh};

const CYLINDER_SEGMENTS: usize = 32;
const SPHERE_STACKS: usize = 16;
const SPHERE_SLICES: usize = 32;

/// Samples of one link, in the link frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkSamples {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    pub palmar: Vec<bool>,
}

impl LinkSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sampled gripper surface, indexed like `KinematicModel::links`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkSurface {
    pub links: Vec<LinkSamples>,
}

/// One weighted palmar sample, the unit the objective works on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub link: usize,
    pub sample: usize,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub weight: f64,
}

impl LinkSurface {
    pub fn total_samples(&self) -> usize {
        self.links.iter().map(LinkSamples::len).sum()
    }

    /// Palmar samples with strictly positive weight, link-major order.
    pub fn weighted_points(&self) -> Vec<SurfacePoint> {
        let mut out = Vec::new();
        for (link, s) in self.links.iter().enumerate() {
            for i in 0..s.len() {
                if s.palmar[i] && s.weights[i] > 0.0 {
                    out.push(SurfacePoint {
                        link,
                        sample: i,
                        point: s.points[i],
                        normal: s.normals[i],
                        weight: s.weights[i],
                    });
                }
            }
        }
        out
    }

    /// Every non-palmar sample carries weight exactly zero.
    pub fn masking_holds(&self) -> bool {
        self.links.iter().all(|s| {
            s.weights
                .iter()
                .zip(&s.palmar)
                .all(|(&w, &p)| w >= 0.0 && (p || w == 0.0))
        })
    }
}

/// Link-frame triangle mesh of every link; links without geometry are empty.
pub fn build_link_meshes(model: &KinematicModel) -> Result<Vec<TriMesh>, GripperError> {
    model
        .links
        .iter()
        .map(|link| {
            let mut mesh = TriMesh::default();
            for v in &link.visuals {
                let part = match &v.shape {
                    Shape::Box { size } => TriMesh::cuboid(*size),
                    Shape::Cylinder { radius, length } => {
                        TriMesh::cylinder(*radius, *length, CYLINDER_SEGMENTS)
                    }
                    Shape::Sphere { radius } => TriMesh::uv_sphere(*radius, SPHERE_STACKS, SPHERE_SLICES),
                    Shape::Mesh { path, scale } => load_mesh(path)
                        .map_err(|e| GripperError::MeshLoadError(e.to_string()))?
                        .scaled(scale),
                };
                mesh.append(&part.transformed(&v.origin));
            }
            Ok(mesh)
        })
        .collect()
}

/// Area-weighted uniform samples on each link mesh, face normals attached.
/// Stratified: face counts follow area exactly up to rounding, points within
/// a face follow a randomly shifted low-discrepancy sequence.
/// Per-link count is `max(1, round(area * density))`.
pub fn sample_link_surfaces(
    model: &KinematicModel,
    meshes: &[TriMesh],
    density: f64,
    seed: u64,
) -> Result<LinkSurface, GripperError> {
    assert!(density > 0.0, "sample density must be positive");
    let mut links = Vec::with_capacity(meshes.len());
    for (li, mesh) in meshes.iter().enumerate() {
        if mesh.triangles.is_empty() {
            links.push(LinkSamples::default());
            continue;
        }
        let areas: Vec<f64> = (0..mesh.triangles.len()).map(|t| mesh.face_area(t)).collect();
        let total: f64 = areas.iter().sum();
        if !(total > 0.0) {
            return Err(GripperError::DegenerateMesh(model.links[li].name.clone()));
        }
        let count = ((total * density).round() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (li as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let per_face = allocate(&areas, total, count, &mut rng);
        let mut s = LinkSamples::default();
        for (t, &k) in per_face.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let [a, b, c] = mesh.corners(t);
            let n = mesh.face_normal(t).expect("sampled triangle has positive area");
            let (u0, v0): (f64, f64) = (rng.random(), rng.random());
            for j in 0..k {
                let (mut u, mut v) = ((u0 + R2.0 * j as f64).fract(), (v0 + R2.1 * j as f64).fract());
                if u + v > 1.0 {
                    (u, v) = (1.0 - u, 1.0 - v);
                }
                s.points.push(a + (b - a) * u + (c - a) * v);
                s.normals.push(n);
            }
        }
        s.weights = vec![0.0; count];
        s.palmar = vec![false; count];
        links.push(s);
    }
    Ok(LinkSurface { links })
}

// Plastic-number lattice steps; a shifted R2 sequence folded into the
// triangle covers it evenly.
const R2: (f64, f64) = (0.754_877_666_246_692_7, 0.569_840_290_998_053_3);

/// Splits `count` samples over faces in proportion to area: floors first,
/// the remainder by weighted draw without replacement on the fractions.
fn allocate(areas: &[f64], total: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let quota: Vec<f64> = areas.iter().map(|a| a / total * count as f64).collect();
    let mut out: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let mut left = count.saturating_sub(out.iter().sum::<usize>());
    let mut frac: Vec<f64> = quota.iter().map(|q| q - q.floor()).collect();
    while left > 0 {
        let sum: f64 = frac.iter().sum();
        let mut u = rng.random::<f64>() * sum;
        let mut pick = frac.iter().rposition(|&f| f > 0.0).unwrap_or(0);
        for (i, &f) in frac.iter().enumerate() {
            if f > 0.0 && u < f {
                pick = i;
                break;
            }
            u -= f;
        }
        out[pick] += 1;
        frac[pick] = 0.0;
        left -= 1;
    }
    out
}

/// Palmar samples on `fingertip_links` get `boost`, other palmar samples 1,
/// non-palmar samples 0.
pub fn assign_weights(
    model: &KinematicModel,
    surfaces: &LinkSurface,
    fingertip_links: &[String],
    boost: f64,
) -> Result<LinkSurface, GripperError> {
    assert!(boost >= 1.0, "fingertip boost must be >= 1");
    let tips = fingertip_links
        .iter()
        .map(|n| model.link_index(n).ok_or_else(|| GripperError::UnknownLink(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = surfaces.clone();
    for (li, s) in out.links.iter_mut().enumerate() {
        let w = if tips.contains(&li) { boost } else { 1.0 };
        for (weight, &palmar) in s.weights.iter_mut().zip(&s.palmar) {
            *weight = if palmar { w } else { 0.0 };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gripper::urdf::{parse_urdf, MeshResolver};
    use approx::assert_relative_eq;

    fn model_with(boxes: &[&str]) -> KinematicModel {
        let mut text = String::from(r#"<robot name="r"><link name="base"/>"#);
        for (i, b) in boxes.iter().enumerate() {
            text += &format!(
                r#"<link name="l{i}"><visual><geometry>{b}</geometry></visual></link>
                <joint name="j{i}" type="fixed"><parent link="base"/><child link="l{i}"/></joint>"#
            );
        }
        text += "</robot>";
        parse_urdf(&text, &MeshResolver::default()).unwrap()
    }

    #[test]
    fn flat_square_sampling() {
        let model = model_with(&[]);
        let square = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let s = sample_link_surfaces(&model, &[square], 100.0, 1).unwrap();
        assert_eq!(s.links[0].len(), 100);
        for (p, n) in s.links[0].points.iter().zip(&s.links[0].normals) {
            assert_eq!(*n, Vector3::z());
            assert!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0 && p.z == 0.0);
        }
    }

    #[test]
    fn counts_follow_area() {
        // 0.1 x 0.1 square faces on thin boxes: total area ~0.02 and ~0.01
        let model = model_with(&[]);
        let plate = |side: f64| {
            TriMesh::new(
                vec![
                    Vector3::zeros(),
                    Vector3::new(side, 0.0, 0.0),
                    Vector3::new(side, side, 0.0),
                    Vector3::new(0.0, side, 0.0),
                ],
                vec![[0, 1, 2], [0, 2, 3]],
            )
        };
        let meshes = [plate(0.02f64.sqrt()), plate(0.01f64.sqrt())];
        let s = sample_link_surfaces(&model, &meshes, 1000.0, 3).unwrap();
        assert_eq!(s.links[0].len(), 20);
        assert_eq!(s.links[1].len(), 10);
    }

    #[test]
    fn face_counts_within_one_of_quota() {
        let model = model_with(&[r#"<box size="0.1 0.2 0.05"/>"#]);
        let meshes = build_link_meshes(&model).unwrap();
        let mesh = &meshes[1];
        let s = sample_link_surfaces(&model, &meshes, 3.3e4, 2).unwrap();
        let count = s.links[1].len();
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.corners(t);
            let n = mesh.face_normal(t).unwrap();
            let inside = s.links[1]
                .points
                .iter()
                .zip(&s.links[1].normals)
                .filter(|(p, m)| {
                    // barycentric containment
                    let (v0, v1, v2) = (b - a, c - a, *p - a);
                    let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
                    let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
                    let den = d00 * d11 - d01 * d01;
                    let v = (d11 * d20 - d01 * d21) / den;
                    let w = (d00 * d21 - d01 * d20) / den;
                    **m == n && v2.dot(&n).abs() < 1e-12 && v >= -1e-9 && w >= -1e-9 && v + w <= 1.0 + 1e-9
                })
                .count();
            let quota = mesh.face_area(t) / mesh.area() * count as f64;
            assert!((inside as f64 - quota).abs() < 1.0 + 1e-9, "face {t}: {inside} vs {quota}");
        }
    }

    #[test]
    fn square_cover_is_even() {
        let model = model_with(&[]);
        let square = TriMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let s = sample_link_surfaces(&model, &[square], 1600.0, 4).unwrap();
        let mut cells = [0usize; 16];
        for p in &s.links[0].points {
            let (i, j) = (((p.x * 4.0) as usize).min(3), ((p.y * 4.0) as usize).min(3));
            cells[i * 4 + j] += 1;
        }
        // i.i.d. draws put some cell outside [80, 120] about half the time
        assert!(cells.iter().all(|&c| (80..=120).contains(&c)), "{cells:?}");
    }

    #[test]
    fn sphere_sample_normals_track_analytic_normals() {
        let model = model_with(&[r#"<sphere radius="0.05"/>"#]);
        let meshes = build_link_meshes(&model).unwrap();
        let s = sample_link_surfaces(&model, &meshes, 2e5, 9).unwrap();
        let link = &s.links[1];
        assert!(link.len() > 100);
        for (p, n) in link.points.iter().zip(&link.normals) {
            let angle = n.dot(&p.normalize()).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle < 15.0, "angle {angle}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let model = model_with(&[r#"<box size="0.1 0.1 0.1"/>"#]);
        let meshes = build_link_meshes(&model).unwrap();
        let a = sample_link_surfaces(&model, &meshes, 1e4, 5).unwrap();
        let b = sample_link_surfaces(&model, &meshes, 1e4, 5).unwrap();
        let c = sample_link_surfaces(&model, &meshes, 1e4, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.links[0].is_empty());
        assert_relative_eq!(meshes[1].area(), 0.06, epsilon = 1e-12);
        assert_eq!(a.links[1].len(), 600);
    }

    #[test]
    fn weights_follow_palmar_flags_and_boost() {
        let model = model_with(&[r#"<box size="0.1 0.1 0.1"/>"#, r#"<box size="0.1 0.1 0.1"/>"#]);
        let meshes = build_link_meshes(&model).unwrap();
        let mut s = sample_link_surfaces(&model, &meshes, 1e3, 5).unwrap();
        for l in &mut s.links {
            for (i, p) in l.palmar.iter_mut().enumerate() {
                *p = i % 2 == 0;
            }
        }
        let neutral = assign_weights(&model, &s, &["l1".into()], 1.0).unwrap();
        assert!(neutral.masking_holds());
        assert!(neutral.weighted_points().iter().all(|p| p.weight == 1.0));
        let boosted = assign_weights(&model, &s, &["l1".into()], 3.0).unwrap();
        for p in boosted.weighted_points() {
            assert_eq!(p.weight, if p.link == 2 { 3.0 } else { 1.0 });
        }
        assert!(matches!(
            assign_weights(&model, &s, &["nope".into()], 2.0),
            Err(GripperError::UnknownLink(_))
        ));
    }
}
