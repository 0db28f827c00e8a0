//! Object collision (cloud points inside link boxes) and self-collision
//! (overlap of non-adjacent link boxes).

use crate::gripper::{Drive, GripperAssets, KinematicModel, Obb};
use crate::pointcloud::PointCloud;
use crate::pose::PoseState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollisionFlags {
    pub collision_free: bool,
    pub self_collision_free: bool,
}

/// Link pairs joined directly, or only through links without a box.
pub fn effective_adjacency(model: &KinematicModel, obbs: &[Option<Obb>]) -> Vec<Vec<bool>> {
    let n = model.links.len();
    let mut neighbors = vec![Vec::new(); n];
    for j in &model.joints {
        neighbors[j.parent].push(j.child);
        neighbors[j.child].push(j.parent);
    }
    let mut adj = vec![vec![false; n]; n];
    for a in 0..n {
        let mut seen = vec![false; n];
        seen[a] = true;
        let mut stack = neighbors[a].clone();
        while let Some(l) = stack.pop() {
            if std::mem::replace(&mut seen[l], true) {
                continue;
            }
            adj[a][l] = true;
            if obbs[l].is_none() {
                stack.extend(neighbors[l].iter().copied());
            }
        }
    }
    adj
}

/// Every non-fixed joint's displacement, coupled ones included, inside its limits.
pub fn joint_values_within_limits(model: &KinematicModel, q: &[f64]) -> bool {
    q.len() == model.dof()
        && model.joints.iter().zip(&model.drives).all(|(j, d)| match (d, j.limits) {
            (Drive::Fixed, _) | (_, None) => true,
            (d, Some((lo, hi))) => {
                let v = d.value(q);
                v >= lo && v <= hi
            }
        })
}

pub fn pose_collision_check(assets: &GripperAssets, pose: &PoseState, cloud: &PointCloud) -> CollisionFlags {
    let Ok(fk) = assets.model.forward_kinematics(pose) else {
        return CollisionFlags {
            collision_free: false,
            self_collision_free: false,
        };
    };
    let world: Vec<Option<Obb>> = assets
        .obbs
        .iter()
        .zip(&fk)
        .map(|(b, frame)| b.map(|b| b.transformed(frame)))
        .collect();
    let tree = cloud.tree();
    let collision_free = !world.iter().flatten().any(|b| {
        let r = b.bounding_radius();
        tree.within_radius(&b.center, r * r)
            .into_iter()
            .any(|i| b.contains_strict(&cloud.positions()[i]))
    });
    let adj = effective_adjacency(&assets.model, &assets.obbs);
    let mut self_collision_free = true;
    'pairs: for a in 0..world.len() {
        for b in a + 1..world.len() {
            if let (Some(ba), Some(bb)) = (&world[a], &world[b]) {
                if !adj[a][b] && ba.overlaps(bb) {
                    self_collision_free = false;
                    break 'pairs;
                }
            }
        }
    }
    CollisionFlags {
        collision_free,
        self_collision_free,
    }
}
