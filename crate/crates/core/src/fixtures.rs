//! Synthetic grippers and objects used by tests, benches and examples.

use nalgebra::Vector3;

use crate::gripper::{AssetOptions, GripperAssets, KinematicModel, LinkSurface, MeshResolver, PalmarOptions};
use crate::pointcloud::PointCloud;
use crate::raycast::sphere_directions;

/// Parallel-jaw gripper: a palm plate below z = 0 and two finger plates
/// standing on it along +z. The left finger slides along +y with its inner
/// face at y = q; the right one mirrors it. Approach axis is +z.
pub const PLATE_GRIPPER_URDF: &str = r#"<robot name="plate_gripper">
  <link name="palm">
    <visual><origin xyz="0 0 -0.005"/><geometry><box size="0.04 0.16 0.01"/></geometry></visual>
  </link>
  <link name="finger_left">
    <visual><origin xyz="0 0.0025 0"/><geometry><box size="0.04 0.005 0.09"/></geometry></visual>
  </link>
  <link name="finger_right">
    <visual><origin xyz="0 -0.0025 0"/><geometry><box size="0.04 0.005 0.09"/></geometry></visual>
  </link>
  <joint name="slide_left" type="prismatic">
    <parent link="palm"/><child link="finger_left"/>
    <origin xyz="0 0 0.045"/><axis xyz="0 1 0"/>
    <limit lower="0.005" upper="0.12" effort="10" velocity="1"/>
  </joint>
  <joint name="slide_right" type="prismatic">
    <parent link="palm"/><child link="finger_right"/>
    <origin xyz="0 0 0.045"/><axis xyz="0 -1 0"/>
    <limit lower="0.005" upper="0.12" effort="10" velocity="1"/>
    <mimic joint="slide_left" multiplier="1" offset="0"/>
  </joint>
</robot>
"#;

pub const PLATE_GRIPPER_DENSITY: f64 = 2e4;
pub const PLATE_GRIPPER_STANDOFF: f64 = 0.10;
/// Spread pose: finger faces 11 cm apart from the centre line.
pub const PLATE_GRIPPER_SPREAD: f64 = 0.11;

/// Three-finger hand in the Barrett layout: one spread joint on finger 1
/// (through a geometry-less link) and two flexion joints per finger.
pub const BARRETT_URDF: &str = r#"<robot name="three_finger">
  <link name="palm">
    <visual><origin xyz="0 0 -0.015"/><geometry><box size="0.09 0.09 0.03"/></geometry></visual>
  </link>
  <link name="f1_spread"/>
  <link name="f1_l1"><visual><origin xyz="0 0 0.025"/><geometry><box size="0.02 0.02 0.05"/></geometry></visual></link>
  <link name="f1_l2"><visual><origin xyz="0 0 0.02"/><geometry><box size="0.018 0.018 0.04"/></geometry></visual></link>
  <link name="f2_l1"><visual><origin xyz="0 0 0.025"/><geometry><box size="0.02 0.02 0.05"/></geometry></visual></link>
  <link name="f2_l2"><visual><origin xyz="0 0 0.02"/><geometry><box size="0.018 0.018 0.04"/></geometry></visual></link>
  <link name="f3_l1"><visual><origin xyz="0 0 0.025"/><geometry><box size="0.02 0.02 0.05"/></geometry></visual></link>
  <link name="f3_l2"><visual><origin xyz="0 0 0.02"/><geometry><box size="0.018 0.018 0.04"/></geometry></visual></link>
  <joint name="f1_spread" type="revolute">
    <parent link="palm"/><child link="f1_spread"/>
    <origin xyz="0.03 0.03 0"/><axis xyz="0 0 1"/><limit lower="-0.6" upper="0.6"/>
  </joint>
  <joint name="f1_prox" type="revolute">
    <parent link="f1_spread"/><child link="f1_l1"/>
    <origin xyz="0 0 0.005"/><axis xyz="1 0 0"/><limit lower="-0.2" upper="1.8"/>
  </joint>
  <joint name="f1_dist" type="revolute">
    <parent link="f1_l1"/><child link="f1_l2"/>
    <origin xyz="0 0 0.05"/><axis xyz="1 0 0"/><limit lower="0" upper="1.4"/>
  </joint>
  <joint name="f2_prox" type="revolute">
    <parent link="palm"/><child link="f2_l1"/>
    <origin xyz="-0.03 0.03 0.005"/><axis xyz="1 0 0"/><limit lower="-0.2" upper="1.8"/>
  </joint>
  <joint name="f2_dist" type="revolute">
    <parent link="f2_l1"/><child link="f2_l2"/>
    <origin xyz="0 0 0.05"/><axis xyz="1 0 0"/><limit lower="0" upper="1.4"/>
  </joint>
  <joint name="f3_prox" type="revolute">
    <parent link="palm"/><child link="f3_l1"/>
    <origin xyz="0 -0.03 0.005"/><axis xyz="-1 0 0"/><limit lower="-0.2" upper="1.8"/>
  </joint>
  <joint name="f3_dist" type="revolute">
    <parent link="f3_l1"/><child link="f3_l2"/>
    <origin xyz="0 0 0.05"/><axis xyz="-1 0 0"/><limit lower="0" upper="1.4"/>
  </joint>
</robot>
"#;

pub const BARRETT_DENSITY: f64 = 2e4;

/// Two 4 x 4 cm plates facing each other across y = 0, inner faces at
/// y = +-0.02. Their link frames sit at the plate centres so the default
/// light source lands at the origin, between them.
pub const PLATE_PAIR_URDF: &str = r#"<robot name="plate_pair">
  <link name="base"/>
  <link name="plate_left"><visual><geometry><box size="0.04 0.005 0.04"/></geometry></visual></link>
  <link name="plate_right"><visual><geometry><box size="0.04 0.005 0.04"/></geometry></visual></link>
  <joint name="mount_left" type="fixed">
    <parent link="base"/><child link="plate_left"/><origin xyz="0 0.0225 0"/>
  </joint>
  <joint name="mount_right" type="fixed">
    <parent link="base"/><child link="plate_right"/><origin xyz="0 -0.0225 0"/>
  </joint>
</robot>
"#;

pub const PLATE_PAIR_DENSITY: f64 = 1e5;

pub fn parse_fixture(text: &str) -> KinematicModel {
    crate::gripper::parse_urdf(text, &MeshResolver::default()).expect("fixture URDF parses")
}

pub fn plate_gripper_options(seed: u64) -> AssetOptions {
    AssetOptions {
        density: PLATE_GRIPPER_DENSITY,
        seed,
        fingertip_links: Vec::new(),
        fingertip_boost: 1.0,
        q_open: Some(vec![PLATE_GRIPPER_SPREAD]),
        palmar: PalmarOptions::default(),
        obb_padding: 0.0,
    }
}

pub fn plate_gripper_assets() -> GripperAssets {
    GripperAssets::build(parse_fixture(PLATE_GRIPPER_URDF), &plate_gripper_options(0)).expect("plate gripper builds")
}

pub fn barrett_assets() -> GripperAssets {
    let opts = AssetOptions {
        density: BARRETT_DENSITY,
        fingertip_links: vec!["f1_l2".into(), "f2_l2".into(), "f3_l2".into()],
        fingertip_boost: 2.0,
        ..Default::default()
    };
    GripperAssets::build(parse_fixture(BARRETT_URDF), &opts).expect("three-finger hand builds")
}

/// Samples of each plate split into inner faces (facing the other plate)
/// and outer faces, in `weighted`/`palmar` iteration order over both plates.
pub fn plate_pair_face_split(model: &KinematicModel, surface: &LinkSurface) -> (Vec<bool>, Vec<bool>) {
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    for name in ["plate_left", "plate_right"] {
        let li = model.link_index(name).expect("plate link");
        let side = model.joints[model.links[li].parent_joint.expect("mounted")]
            .origin
            .translation
            .vector
            .normalize();
        let s = &surface.links[li];
        for (n, &p) in s.normals.iter().zip(&s.palmar) {
            let facing = n.dot(&side);
            if facing < -0.9 {
                inner.push(p);
            } else if facing > 0.9 {
                outer.push(p);
            }
        }
    }
    (inner, outer)
}

/// Evenly spread points on a sphere with outward normals.
pub fn sphere_cloud(center: Vector3<f64>, radius: f64, n: usize) -> PointCloud {
    let dirs = sphere_directions(n);
    let positions = dirs.iter().map(|d| center + d * radius).collect();
    PointCloud::new(positions, dirs).expect("non-empty sphere")
}

/// The desk-scale planning object: 5 cm radius, 4000 points, at the origin.
pub fn sphere_fixture() -> PointCloud {
    sphere_cloud(Vector3::zeros(), 0.05, 4000)
}

/// Two spheres 30 cm apart labelled 1 and 2.
pub fn two_sphere_cloud(n_each: usize) -> PointCloud {
    let a = sphere_cloud(Vector3::new(-0.15, 0.0, 0.0), 0.05, n_each);
    let b = sphere_cloud(Vector3::new(0.15, 0.0, 0.0), 0.04, n_each);
    let positions = a.positions().iter().chain(b.positions()).copied().collect();
    let normals = a.normals().iter().chain(b.normals()).copied().collect();
    let labels = std::iter::repeat_n(1, n_each).chain(std::iter::repeat_n(2, n_each)).collect();
    PointCloud::new(positions, normals)
        .and_then(|c| c.with_labels(labels))
        .expect("two spheres")
}
