//! Palmar-side detection by casting rays from a light source inside the hand.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::surface::LinkSurface;
use super::urdf::KinematicModel;
use super::GripperError;
use crate::mesh::TriMesh;
use crate::pointcloud::KdTree;
use crate::pose::PoseState;
use crate::raycast::{sphere_directions, Bvh, Ray};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PalmarOptions {
    pub rays: usize,
    /// Light source in the gripper base frame; default is the mean fingertip origin.
    pub light: Option<Vector3<f64>>,
    /// Hit radius as a multiple of the mean nearest-sample spacing.
    pub hit_radius_factor: f64,
    /// Minimum cosine between a sample normal and the normal of the hit
    /// triangle that marks it; -1 disables the check.
    pub normal_gate: f64,
}

impl Default for PalmarOptions {
    fn default() -> Self {
        Self {
            rays: 10_000,
            light: None,
            hit_radius_factor: 1.5,
            normal_gate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PalmarReport {
    pub light: Vector3<f64>,
    pub hit_radius: f64,
    pub hits: usize,
    pub palmar_samples: usize,
}

/// Mean of the fingertip (leaf) link frame origins at `q`, base frame.
pub fn default_light_source(model: &KinematicModel, q: &[f64]) -> Result<Vector3<f64>, GripperError> {
    let tips = model.leaf_links();
    if tips.is_empty() {
        return Err(GripperError::NoFingertips);
    }
    let mut pose = PoseState::identity(model.dof());
    pose.joints = q.to_vec();
    let fk = model.forward_kinematics(&pose)?;
    Ok(tips.iter().map(|&l| fk[l].translation.vector).sum::<Vector3<f64>>() / tips.len() as f64)
}

/// Flags each sample palmar iff it lies within the hit radius of some ray's
/// first intersection with the hand at configuration `q_open`. Palmar samples
/// get weight 1, the rest 0.
pub fn compute_palmar_mask(
    model: &KinematicModel,
    meshes: &[TriMesh],
    surfaces: &LinkSurface,
    q_open: &[f64],
    opts: &PalmarOptions,
) -> Result<(LinkSurface, PalmarReport), GripperError> {
    let light = match opts.light {
        Some(l) => l,
        None => default_light_source(model, q_open)?,
    };
    let mut pose = PoseState::identity(model.dof());
    pose.joints = q_open.to_vec();
    let fk = model.forward_kinematics(&pose)?;

    let mut scene = TriMesh::default();
    for (li, mesh) in meshes.iter().enumerate() {
        scene.append(&mesh.transformed(&fk[li]));
    }
    let bvh = Bvh::new(scene);
    let (hits, hit_normals): (Vec<Vector3<f64>>, Vec<Vector3<f64>>) = sphere_directions(opts.rays)
        .into_iter()
        .filter_map(|direction| {
            let h = bvh.first_hit(&Ray {
                origin: light,
                direction,
            })?;
            Some((h.point, bvh.mesh().face_normal(h.triangle)?))
        })
        .unzip();

    let samples: Vec<Vector3<f64>> = surfaces
        .links
        .iter()
        .enumerate()
        .flat_map(|(li, s)| {
            let frame = fk[li];
            s.points.iter().map(move |p| frame.transform_point(&(*p).into()).coords)
        })
        .collect();
    let sample_normals: Vec<Vector3<f64>> = surfaces
        .links
        .iter()
        .enumerate()
        .flat_map(|(li, s)| {
            let rot = fk[li].rotation;
            s.normals.iter().map(move |n| rot * n)
        })
        .collect();
    let hit_radius = opts.hit_radius_factor * mean_spacing(&samples, bvh.mesh().area());

    let hit_tree = KdTree::new(&hits);
    let mut out = surfaces.clone();
    let mut k = 0;
    let mut palmar_samples = 0;
    for s in &mut out.links {
        for i in 0..s.len() {
            let near = hit_tree
                .within_radius(&samples[k], hit_radius * hit_radius)
                .into_iter()
                .any(|h| hit_normals[h].dot(&sample_normals[k]) >= opts.normal_gate);
            s.palmar[i] = near;
            s.weights[i] = if near { 1.0 } else { 0.0 };
            palmar_samples += near as usize;
            k += 1;
        }
    }
    Ok((
        out,
        PalmarReport {
            light,
            hit_radius,
            hits: hits.len(),
            palmar_samples,
        },
    ))
}

/// Mean distance from each sample to its nearest other sample.
fn mean_spacing(samples: &[Vector3<f64>], area: f64) -> f64 {
    if samples.len() < 2 {
        return area.sqrt();
    }
    let tree = KdTree::new(samples);
    let total: f64 = samples
        .iter()
        .map(|p| tree.k_nearest(p, 2).get(1).map_or(0.0, |&(_, d2)| d2.sqrt()))
        .sum();
    total / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::gripper::surface::{build_link_meshes, sample_link_surfaces};
    use crate::gripper::urdf::{parse_urdf, MeshResolver};

    #[test]
    fn closed_box_with_interior_light_is_all_palmar() {
        let text = r#"<robot name="r"><link name="shell"><visual><geometry><box size="0.08 0.08 0.08"/></geometry></visual></link></robot>"#;
        let model = parse_urdf(text, &MeshResolver::default()).unwrap();
        let meshes = build_link_meshes(&model).unwrap();
        let s = sample_link_surfaces(&model, &meshes, 2e4, 1).unwrap();
        let opts = PalmarOptions {
            light: Some(Vector3::zeros()),
            ..Default::default()
        };
        let (masked, report) = compute_palmar_mask(&model, &meshes, &s, &[], &opts).unwrap();
        assert_eq!(report.hits, opts.rays);
        assert!(masked.links[0].palmar.iter().all(|&p| p));
        assert!(masked.masking_holds());
    }

    #[test]
    fn no_leaf_links_without_override_fails() {
        let text = r#"<robot name="r"><link name="shell"><visual><geometry><box size="0.08 0.08 0.08"/></geometry></visual></link></robot>"#;
        let model = parse_urdf(text, &MeshResolver::default()).unwrap();
        let meshes = build_link_meshes(&model).unwrap();
        let s = sample_link_surfaces(&model, &meshes, 2e3, 1).unwrap();
        assert!(matches!(
            compute_palmar_mask(&model, &meshes, &s, &[], &PalmarOptions::default()),
            Err(GripperError::NoFingertips)
        ));
    }

    #[test]
    fn plate_pair_inner_faces_are_palmar() {
        let model = parse_urdf(fixtures::PLATE_PAIR_URDF, &MeshResolver::default()).unwrap();
        let meshes = build_link_meshes(&model).unwrap();
        let s = sample_link_surfaces(&model, &meshes, fixtures::PLATE_PAIR_DENSITY, 2).unwrap();
        let (masked, _) =
            compute_palmar_mask(&model, &meshes, &s, &[], &PalmarOptions::default()).unwrap();
        let (inner, outer) = fixtures::plate_pair_face_split(&model, &masked);
        let frac = |v: &[bool]| v.iter().filter(|&&p| p).count() as f64 / v.len() as f64;
        assert!(frac(&inner) >= 0.98, "inner palmar fraction {}", frac(&inner));
        assert!(frac(&outer) <= 0.02, "outer palmar fraction {}", frac(&outer));
    }
}
