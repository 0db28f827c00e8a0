use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};

use super::urdf::{JointType, KinematicModel};
use super::GripperError;
use crate::pose::PoseState;

/// World-frame placement of every link plus each joint's world axis and
/// pivot, which the gradient needs for the joint Jacobian columns.
#[derive(Debug, Clone)]
pub struct FkFrames {
    pub links: Vec<Isometry3<f64>>,
    pub joint_axes: Vec<Vector3<f64>>,
    pub joint_pivots: Vec<Vector3<f64>>,
}

fn joint_motion(kind: JointType, axis: &Vector3<f64>, value: f64) -> Isometry3<f64> {
    match kind {
        JointType::Fixed => Isometry3::identity(),
        JointType::Revolute => Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_scaled_axis(axis * value),
        ),
        JointType::Prismatic => Isometry3::from_parts(Translation3::from(axis * value), UnitQuaternion::identity()),
    }
}

impl KinematicModel {
    fn check_dof(&self, q: &[f64]) -> Result<(), GripperError> {
        if q.len() != self.dof() {
            return Err(GripperError::DofMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Link transforms in the world frame: root at the pose's (R, t), each
    /// child composed as parent * joint origin * joint motion.
    pub fn forward_kinematics(&self, pose: &PoseState) -> Result<Vec<Isometry3<f64>>, GripperError> {
        Ok(self.forward_frames(pose)?.links)
    }

    pub fn forward_frames(&self, pose: &PoseState) -> Result<FkFrames, GripperError> {
        self.check_dof(&pose.joints)?;
        let mut links = vec![Isometry3::identity(); self.links.len()];
        let mut joint_axes = vec![Vector3::zeros(); self.joints.len()];
        let mut joint_pivots = vec![Vector3::zeros(); self.joints.len()];
        links[self.root] = pose.base();
        for &ji in &self.joint_order {
            let j = &self.joints[ji];
            let frame = links[j.parent] * j.origin;
            joint_axes[ji] = frame.rotation * j.axis.into_inner();
            joint_pivots[ji] = frame.translation.vector;
            let value = self.drives[ji].value(&pose.joints);
            links[j.child] = frame * joint_motion(j.joint_type, &j.axis, value);
        }
        Ok(FkFrames {
            links,
            joint_axes,
            joint_pivots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gripper::urdf::{parse_urdf, MeshResolver};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    const ONE_JOINT: &str = r#"<robot name="r"><link name="a"/><link name="b"/>
      <joint name="j" type="revolute"><parent link="a"/><child link="b"/>
        <origin xyz="0.1 0 0" rpy="0 0 0"/><axis xyz="0 0 1"/><limit lower="-3" upper="3"/></joint></robot>"#;

    #[test]
    fn quarter_turn_maps_x_to_y() {
        let m = parse_urdf(ONE_JOINT, &MeshResolver::default()).unwrap();
        let mut pose = PoseState::identity(1);
        pose.joints[0] = FRAC_PI_2;
        let fk = m.forward_kinematics(&pose).unwrap();
        let x_world = fk[1].rotation * Vector3::x();
        assert_relative_eq!(x_world, Vector3::y(), epsilon = 1e-15);
        assert_relative_eq!(fk[1].translation.vector, Vector3::new(0.1, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn zero_configuration_is_static_origins() {
        let m = parse_urdf(ONE_JOINT, &MeshResolver::default()).unwrap();
        let fk = m.forward_kinematics(&PoseState::identity(1)).unwrap();
        assert_eq!(fk[1], m.joints[0].origin);
    }

    #[test]
    fn wrong_dof_is_rejected() {
        let m = parse_urdf(ONE_JOINT, &MeshResolver::default()).unwrap();
        assert!(matches!(
            m.forward_kinematics(&PoseState::identity(2)),
            Err(GripperError::DofMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn full_turn_is_periodic() {
        let m = parse_urdf(&ONE_JOINT.replace("-3\" upper=\"3", "-7\" upper=\"7"), &MeshResolver::default()).unwrap();
        let mut a = PoseState::identity(1);
        a.joints[0] = 0.3;
        let mut b = a.clone();
        b.joints[0] += std::f64::consts::TAU;
        let (fa, fb) = (m.forward_kinematics(&a).unwrap(), m.forward_kinematics(&b).unwrap());
        assert_relative_eq!(fa[1].to_homogeneous(), fb[1].to_homogeneous(), epsilon = 1e-12);
    }
}
