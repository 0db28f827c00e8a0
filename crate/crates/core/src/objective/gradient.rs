use nalgebra::Vector3;

use super::{
    barrier_kernel_derivative, breakdown_of, frozen_energy, grasp_wrench, joint_barrier_gradient, restate, BarrierParams,
    Correspondence, Frozen, ObjectiveBreakdown, ObjectiveError, DEFAULT_CONTACTS,
};
use crate::gripper::{FkFrames, JointType, KinematicModel, SurfacePoint};
use crate::pointcloud::PointCloud;
use crate::pose::PoseState;

/// Gradient in the pose's minimal coordinates: rotation as a right-applied
/// tangent vector, translation, independent joints.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGradient {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
    pub joints: Vec<f64>,
}

impl PoseGradient {
    pub fn zeros(dof: usize) -> Self {
        Self {
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
            joints: vec![0.0; dof],
        }
    }

    /// Flattened as rotation, translation, joints.
    pub fn to_vec(&self) -> Vec<f64> {
        self.rotation
            .iter()
            .chain(self.translation.iter())
            .chain(&self.joints)
            .copied()
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.to_vec().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Energy and analytic gradient at `pose` with matches and contacts frozen.
pub fn frozen_gradient(
    model: &KinematicModel,
    frozen: &Frozen,
    pose: &PoseState,
    params: &BarrierParams,
) -> Result<(ObjectiveBreakdown, PoseGradient), ObjectiveError> {
    let fk = model.forward_frames(pose)?;
    let state = restate(model, frozen, pose)?;
    let breakdown = breakdown_of(model, &state, &pose.joints, params);
    let pairs = &state.corr.pairs;
    let m = pairs.len() as f64;

    // world-space dE/dx and dE/dn per pair
    let mut gx = vec![Vector3::zeros(); pairs.len()];
    let mut gn = vec![Vector3::zeros(); pairs.len()];
    for (i, c) in pairs.iter().enumerate() {
        let diff = c.x - c.y;
        gx[i] += 2.0 * c.weight * diff.dot(&c.ny) * c.ny;
        gn[i] += 2.0 * c.weight * (c.nx.dot(&c.ny) + 1.0) * c.ny;
        let (d, dd_dx) = if params.squared_distance {
            (c.distance_sq, 2.0 * diff)
        } else {
            let r = c.distance_sq.sqrt();
            (r, if r > 0.0 { diff / r } else { Vector3::zeros() })
        };
        gx[i] += barrier_kernel_derivative(d, params.d_hat, params.floor) / m * dd_dx;
    }

    let v = grasp_wrench(&state.contacts.positions, &state.contacts.normals);
    let vn = v.norm();
    if vn > 0.0 {
        let u = v / vn;
        let uf = Vector3::new(u[0], u[1], u[2]);
        let ut = Vector3::new(u[3], u[4], u[5]);
        for (k, &i) in state.contacts.pairs.iter().enumerate() {
            let x = state.contacts.positions[k];
            let c = state.contacts.normals[k];
            gn[i] += uf + ut.cross(&x);
            gx[i] += c.cross(&ut);
        }
    }

    let mut grad = pull_back(model, &fk, pose, pairs, &gx, &gn);
    let jb = joint_barrier_gradient(&pose.joints, &model.lower_limits(), &model.upper_limits(), params);
    for (g, b) in grad.joints.iter_mut().zip(jb) {
        *g += b;
    }
    if !grad.is_finite() {
        return Err(ObjectiveError::NonFiniteGradient);
    }
    Ok((breakdown, grad))
}

/// Chain rule from per-pair world-space dE/dx, dE/dn to pose coordinates.
fn pull_back(
    model: &KinematicModel,
    fk: &FkFrames,
    pose: &PoseState,
    pairs: &[Correspondence],
    gx: &[Vector3<f64>],
    gn: &[Vector3<f64>],
) -> PoseGradient {
    let mut grad = PoseGradient::zeros(model.dof());
    let rot = pose.rotation;
    for (i, c) in pairs.iter().enumerate() {
        let (gxi, gni) = (gx[i], gn[i]);
        grad.translation += gxi;
        let a = rot.inverse_transform_vector(&(c.x - pose.translation));
        let b = rot.inverse_transform_vector(&c.nx);
        grad.rotation += a.cross(&rot.inverse_transform_vector(&gxi)) + b.cross(&rot.inverse_transform_vector(&gni));
        for &ji in &model.link_chains[c.link] {
            let Some((s, mult)) = model.drives[ji].sensitivity() else {
                continue;
            };
            let axis = fk.joint_axes[ji];
            let partial = match model.joints[ji].joint_type {
                JointType::Revolute => gxi.dot(&axis.cross(&(c.x - fk.joint_pivots[ji]))) + gni.dot(&axis.cross(&c.nx)),
                JointType::Prismatic => gxi.dot(&axis),
                JointType::Fixed => 0.0,
            };
            grad.joints[s] += mult * partial;
        }
    }
    grad
}

/// Derivative of one pair's signed offset from its matched tangent plane.
pub fn gap_jacobian(model: &KinematicModel, frozen: &Frozen, pose: &PoseState, pair: usize) -> Result<PoseGradient, ObjectiveError> {
    let fk = model.forward_frames(pose)?;
    let state = restate(model, frozen, pose)?;
    let pairs = &state.corr.pairs[pair..=pair];
    Ok(pull_back(model, &fk, pose, pairs, &[pairs[0].ny], &[Vector3::zeros()]))
}

/// Fresh matching and contact selection, then the frozen gradient there.
pub fn gradient(
    model: &KinematicModel,
    points: &[SurfacePoint],
    pose: &PoseState,
    cloud: &PointCloud,
    params: &BarrierParams,
) -> Result<(ObjectiveBreakdown, PoseGradient), ObjectiveError> {
    let frozen = Frozen::new(model, points, pose, cloud, DEFAULT_CONTACTS)?;
    frozen_gradient(model, &frozen, pose, params)
}

/// Central differences over the same coordinates as [`frozen_gradient`].
pub fn finite_difference_gradient(
    model: &KinematicModel,
    frozen: &Frozen,
    pose: &PoseState,
    params: &BarrierParams,
    step: f64,
) -> Result<PoseGradient, ObjectiveError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let e = |p: &PoseState| frozen_energy(model, frozen, p, params).map(|b| b.total);
    let mut g = PoseGradient::zeros(model.dof());
    for k in 0..3 {
        let mut delta = Vector3::zeros();
        delta[k] = step;
        let (mut plus, mut minus) = (pose.clone(), pose.clone());
        plus.rotation *= nalgebra::UnitQuaternion::from_scaled_axis(delta);
        minus.rotation *= nalgebra::UnitQuaternion::from_scaled_axis(-delta);
        g.rotation[k] = (e(&plus)? - e(&minus)?) / (2.0 * step);

        let (mut plus, mut minus) = (pose.clone(), pose.clone());
        plus.translation[k] += step;
        minus.translation[k] -= step;
        g.translation[k] = (e(&plus)? - e(&minus)?) / (2.0 * step);
    }
    for j in 0..model.dof() {
        let (mut plus, mut minus) = (pose.clone(), pose.clone());
        plus.joints[j] += step;
        minus.joints[j] -= step;
        g.joints[j] = (e(&plus)? - e(&minus)?) / (2.0 * step);
    }
    Ok(g)
}
