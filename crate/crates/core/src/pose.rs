use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Optimization variables: wrist rotation, wrist translation, joint vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseState {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub joints: Vec<f64>,
}

impl PoseState {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, joints: Vec<f64>) -> Self {
        Self {
            rotation,
            translation,
            joints,
        }
    }

    pub fn identity(dof: usize) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros(), vec![0.0; dof])
    }

    pub fn base(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    /// Applies a tangent-space rotation update on the right, `R <- R exp(delta)`,
    /// and renormalizes the quaternion.
    pub fn rotate_local(&mut self, delta: &Vector3<f64>) {
        let q = self.rotation * UnitQuaternion::from_scaled_axis(*delta);
        self.rotation = UnitQuaternion::new_normalize(q.into_inner());
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.coords.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.joints.iter().all(|v| v.is_finite())
    }
}
