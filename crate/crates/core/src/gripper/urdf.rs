//! URDF subset: revolute, prismatic and fixed joints, optional `mimic`
//! coupling, mesh/box/cylinder/sphere visuals.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};

use super::GripperError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointType {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Mesh { path: PathBuf, scale: Vector3<f64> },
    Box { size: Vector3<f64> },
    Cylinder { radius: f64, length: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Visual {
    pub origin: Isometry3<f64>,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub visuals: Vec<Visual>,
    /// Index of the joint whose child this link is; `None` for the root.
    pub parent_joint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mimic {
    pub joint: String,
    pub multiplier: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub joint_type: JointType,
    pub axis: Unit<Vector3<f64>>,
    pub origin: Isometry3<f64>,
    pub parent: usize,
    pub child: usize,
    pub limits: Option<(f64, f64)>,
    pub mimic: Option<Mimic>,
}

/// How a joint's displacement is obtained from the independent joint vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    Fixed,
    Actuated(usize),
    Coupled {
        source: usize,
        multiplier: f64,
        offset: f64,
    },
}

impl Drive {
    pub fn value(&self, q: &[f64]) -> f64 {
        match *self {
            Drive::Fixed => 0.0,
            Drive::Actuated(i) => q[i],
            Drive::Coupled {
                source,
                multiplier,
                offset,
            } => multiplier * q[source] + offset,
        }
    }

    /// `(independent index, d displacement / d q_index)`
    pub fn sensitivity(&self) -> Option<(usize, f64)> {
        match *self {
            Drive::Fixed => None,
            Drive::Actuated(i) => Some((i, 1.0)),
            Drive::Coupled {
                source, multiplier, ..
            } => Some((source, multiplier)),
        }
    }
}

/// Resolves `<mesh filename>` references.
#[derive(Debug, Clone, Default)]
pub struct MeshResolver {
    pub urdf_dir: PathBuf,
    pub mesh_root: Option<PathBuf>,
}

impl MeshResolver {
    pub fn resolve(&self, filename: &str) -> PathBuf {
        let root = self.mesh_root.as_deref().unwrap_or(&self.urdf_dir);
        if let Some(rest) = filename.strip_prefix("package://") {
            let direct = root.join(rest);
            if direct.exists() {
                return direct;
            }
            // drop the package name: package://pkg/meshes/a.stl -> root/meshes/a.stl
            let stripped: PathBuf = Path::new(rest).components().skip(1).collect();
            let candidate = root.join(&stripped);
            if candidate.exists() {
                return candidate;
            }
            return direct;
        }
        let rel = filename.strip_prefix("file://").unwrap_or(filename);
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.urdf_dir.join(p)
        }
    }
}

/// Parsed kinematic tree.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub root: usize,
    /// Joints ordered so every parent link is placed before its children.
    pub joint_order: Vec<usize>,
    pub drives: Vec<Drive>,
    /// Joint index of each independent DOF.
    pub actuated: Vec<usize>,
    /// Non-fixed joints between the root and each link, root first.
    pub link_chains: Vec<Vec<usize>>,
}

impl KinematicModel {
    pub fn dof(&self) -> usize {
        self.actuated.len()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.actuated
            .iter()
            .map(|&j| self.joints[j].limits.map_or(0.0, |l| l.0))
            .collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.actuated
            .iter()
            .map(|&j| self.joints[j].limits.map_or(0.0, |l| l.1))
            .collect()
    }

    /// Limit midpoints, the default spread configuration.
    pub fn mid_range(&self) -> Vec<f64> {
        self.lower_limits()
            .iter()
            .zip(self.upper_limits())
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn child_links(&self, link: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .filter(move |j| j.parent == link)
            .map(|j| j.child)
    }

    /// Links without children, excluding the root.
    pub fn leaf_links(&self) -> Vec<usize> {
        (0..self.links.len())
            .filter(|&l| l != self.root && self.child_links(l).next().is_none())
            .collect()
    }

    /// Whether two links are directly connected by a joint.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.joints
            .iter()
            .any(|j| (j.parent == a && j.child == b) || (j.parent == b && j.child == a))
    }
}

fn attr_err(elem: &str, msg: impl Into<String>) -> GripperError {
    GripperError::BadAttribute {
        element: elem.to_string(),
        msg: msg.into(),
    }
}

fn parse_vec3(s: &str, elem: &str) -> Result<Vector3<f64>, GripperError> {
    let vals: Vec<f64> = s
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| attr_err(elem, format!("{s:?}: {e}")))?;
    if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
        return Err(attr_err(elem, format!("expected 3 finite numbers, got {s:?}")));
    }
    Ok(Vector3::new(vals[0], vals[1], vals[2]))
}

fn parse_f64(s: &str, elem: &str) -> Result<f64, GripperError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|e| attr_err(elem, format!("{s:?}: {e}")))?;
    if !v.is_finite() {
        return Err(attr_err(elem, format!("non-finite value {s:?}")));
    }
    Ok(v)
}

fn parse_origin(node: Option<roxmltree::Node>, elem: &str) -> Result<Isometry3<f64>, GripperError> {
    let Some(node) = node else {
        return Ok(Isometry3::identity());
    };
    let xyz = node
        .attribute("xyz")
        .map(|s| parse_vec3(s, elem))
        .transpose()?
        .unwrap_or_else(Vector3::zeros);
    let rpy = node
        .attribute("rpy")
        .map(|s| parse_vec3(s, elem))
        .transpose()?
        .unwrap_or_else(Vector3::zeros);
    Ok(Isometry3::from_parts(
        Translation3::from(xyz),
        UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z),
    ))
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(tag))
}

fn parse_visuals(
    link: roxmltree::Node,
    resolver: &MeshResolver,
) -> Result<Vec<Visual>, GripperError> {
    let name = link.attribute("name").unwrap_or("?");
    // visual geometry doubles as collision geometry; fall back to <collision>
    let mut nodes: Vec<_> = link.children().filter(|n| n.has_tag_name("visual")).collect();
    if nodes.is_empty() {
        nodes = link.children().filter(|n| n.has_tag_name("collision")).collect();
    }
    let mut out = Vec::new();
    for v in nodes {
        let origin = parse_origin(child(v, "origin"), name)?;
        let Some(geom) = child(v, "geometry") else {
            continue;
        };
        let Some(shape) = geom.children().find(|n| n.is_element()) else {
            continue;
        };
        let req = |attr: &str| {
            shape
                .attribute(attr)
                .ok_or_else(|| attr_err(name, format!("<{}> missing {attr}", shape.tag_name().name())))
        };
        let shape = match shape.tag_name().name() {
            "mesh" => Shape::Mesh {
                path: resolver.resolve(req("filename")?),
                scale: shape
                    .attribute("scale")
                    .map(|s| parse_vec3(s, name))
                    .transpose()?
                    .unwrap_or_else(|| Vector3::repeat(1.0)),
            },
            "box" => Shape::Box {
                size: parse_vec3(req("size")?, name)?,
            },
            "cylinder" => Shape::Cylinder {
                radius: parse_f64(req("radius")?, name)?,
                length: parse_f64(req("length")?, name)?,
            },
            "sphere" => Shape::Sphere {
                radius: parse_f64(req("radius")?, name)?,
            },
            other => return Err(attr_err(name, format!("unsupported geometry <{other}>"))),
        };
        out.push(Visual { origin, shape });
    }
    Ok(out)
}

/// Parses URDF XML. Mesh paths are resolved through `resolver`.
pub fn parse_urdf(text: &str, resolver: &MeshResolver) -> Result<KinematicModel, GripperError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| GripperError::XmlError(e.to_string()))?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(GripperError::XmlError(format!(
            "root element is <{}>, expected <robot>",
            robot.tag_name().name()
        )));
    }
    let mut links = Vec::new();
    let mut by_name = HashMap::new();
    for node in robot.children().filter(|n| n.has_tag_name("link")) {
        let name = node
            .attribute("name")
            .ok_or_else(|| attr_err("link", "missing name"))?
            .to_string();
        if by_name.insert(name.clone(), links.len()).is_some() {
            return Err(attr_err("link", format!("duplicate link {name}")));
        }
        links.push(Link {
            visuals: parse_visuals(node, resolver)?,
            name,
            parent_joint: None,
        });
    }
    if links.is_empty() {
        return Err(GripperError::XmlError("robot has no links".into()));
    }

    let mut joints = Vec::new();
    for node in robot.children().filter(|n| n.has_tag_name("joint")) {
        let name = node
            .attribute("name")
            .ok_or_else(|| attr_err("joint", "missing name"))?
            .to_string();
        let joint_type = match node.attribute("type").unwrap_or("") {
            "revolute" => JointType::Revolute,
            "prismatic" => JointType::Prismatic,
            "fixed" => JointType::Fixed,
            other => {
                return Err(GripperError::UnsupportedJointType {
                    joint: name,
                    kind: other.to_string(),
                })
            }
        };
        let link_ref = |tag: &str| -> Result<usize, GripperError> {
            let l = child(node, tag)
                .and_then(|n| n.attribute("link"))
                .ok_or_else(|| attr_err(&name, format!("missing <{tag} link=...>")))?;
            by_name
                .get(l)
                .copied()
                .ok_or_else(|| GripperError::UnknownLink(l.to_string()))
        };
        let parent = link_ref("parent")?;
        let child_link = link_ref("child")?;
        let axis_raw = child(node, "axis")
            .and_then(|n| n.attribute("xyz"))
            .map(|s| parse_vec3(s, &name))
            .transpose()?
            .unwrap_or_else(Vector3::x);
        let axis = Unit::try_new(axis_raw, 1e-12)
            .ok_or_else(|| attr_err(&name, "zero-length axis"))?;
        let limits = match joint_type {
            JointType::Fixed => None,
            _ => {
                let lim = child(node, "limit").ok_or_else(|| GripperError::MissingLimit(name.clone()))?;
                let lo = lim.attribute("lower").ok_or_else(|| GripperError::MissingLimit(name.clone()))?;
                let hi = lim.attribute("upper").ok_or_else(|| GripperError::MissingLimit(name.clone()))?;
                let (lo, hi) = (parse_f64(lo, &name)?, parse_f64(hi, &name)?);
                if lo >= hi {
                    return Err(attr_err(&name, format!("lower limit {lo} >= upper {hi}")));
                }
                Some((lo, hi))
            }
        };
        let mimic = child(node, "mimic")
            .map(|m| -> Result<Mimic, GripperError> {
                Ok(Mimic {
                    joint: m
                        .attribute("joint")
                        .ok_or_else(|| attr_err(&name, "mimic without joint"))?
                        .to_string(),
                    multiplier: m.attribute("multiplier").map(|s| parse_f64(s, &name)).transpose()?.unwrap_or(1.0),
                    offset: m.attribute("offset").map(|s| parse_f64(s, &name)).transpose()?.unwrap_or(0.0),
                })
            })
            .transpose()?;
        joints.push(Joint {
            origin: parse_origin(child(node, "origin"), &name)?,
            name,
            joint_type,
            axis,
            parent,
            child: child_link,
            limits,
            mimic: if joint_type == JointType::Fixed { None } else { mimic },
        });
    }

    // tree structure: single parent per link, exactly one root, all reachable
    for (ji, j) in joints.iter().enumerate() {
        if links[j.child].parent_joint.is_some() {
            return Err(GripperError::CycleDetected(format!(
                "link {} has more than one parent joint",
                links[j.child].name
            )));
        }
        links[j.child].parent_joint = Some(ji);
    }
    let roots: Vec<usize> = (0..links.len()).filter(|&l| links[l].parent_joint.is_none()).collect();
    let root = match roots.as_slice() {
        [r] => *r,
        [] => return Err(GripperError::CycleDetected("no root link".into())),
        many => {
            return Err(GripperError::MultipleRoots(
                many.iter().map(|&l| links[l].name.clone()).collect(),
            ))
        }
    };
    let mut joint_order = Vec::with_capacity(joints.len());
    let mut link_chains = vec![Vec::new(); links.len()];
    let mut stack = vec![root];
    let mut visited = vec![false; links.len()];
    visited[root] = true;
    while let Some(l) = stack.pop() {
        for (ji, j) in joints.iter().enumerate().filter(|(_, j)| j.parent == l) {
            if visited[j.child] {
                return Err(GripperError::CycleDetected(format!("at joint {}", j.name)));
            }
            visited[j.child] = true;
            joint_order.push(ji);
            let mut chain = link_chains[l].clone();
            if j.joint_type != JointType::Fixed {
                chain.push(ji);
            }
            link_chains[j.child] = chain;
            stack.push(j.child);
        }
    }
    if joint_order.len() != joints.len() {
        return Err(GripperError::CycleDetected(
            "joint graph contains a loop detached from the root".into(),
        ));
    }

    // independent DOFs in document order, mimics resolved transitively
    let mut drives = vec![Drive::Fixed; joints.len()];
    let mut actuated = Vec::new();
    for (ji, j) in joints.iter().enumerate() {
        if j.joint_type != JointType::Fixed && j.mimic.is_none() {
            drives[ji] = Drive::Actuated(actuated.len());
            actuated.push(ji);
        }
    }
    let joint_by_name: HashMap<&str, usize> =
        joints.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
    for ji in 0..joints.len() {
        if joints[ji].mimic.is_none() {
            continue;
        }
        let (mut mult, mut off) = (1.0, 0.0);
        let mut cur = ji;
        let mut hops = 0;
        while let Some(m) = &joints[cur].mimic {
            let src = *joint_by_name
                .get(m.joint.as_str())
                .ok_or_else(|| GripperError::UnknownMimicJoint(m.joint.clone()))?;
            // q_cur = m.mult * q_src + m.off, compose with what we have so far
            off += mult * m.offset;
            mult *= m.multiplier;
            cur = src;
            hops += 1;
            if hops > joints.len() {
                return Err(GripperError::CycleDetected(format!("mimic loop at {}", joints[ji].name)));
            }
        }
        match drives[cur] {
            Drive::Actuated(source) => {
                drives[ji] = Drive::Coupled {
                    source,
                    multiplier: mult,
                    offset: off,
                }
            }
            _ => return Err(GripperError::UnknownMimicJoint(joints[cur].name.clone())),
        }
    }

    Ok(KinematicModel {
        name: robot.attribute("name").unwrap_or("robot").to_string(),
        links,
        joints,
        root,
        joint_order,
        drives,
        actuated,
        link_chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolver() -> MeshResolver {
        MeshResolver {
            urdf_dir: PathBuf::from("/models/hand"),
            mesh_root: None,
        }
    }

    const TWO_LINK: &str = r#"<robot name="r">
      <link name="base"/>
      <link name="arm"><visual><geometry><box size="0.1 0.02 0.02"/></geometry></visual></link>
      <joint name="j" type="revolute"><parent link="base"/><child link="arm"/>
        <axis xyz="0 0 1"/><limit lower="0" upper="1.57"/></joint>
    </robot>"#;

    #[test]
    fn minimal_chain() {
        let m = parse_urdf(TWO_LINK, &resolver()).unwrap();
        assert_eq!(m.dof(), 1);
        assert_eq!(m.links[m.root].name, "base");
        assert_eq!(m.lower_limits(), vec![0.0]);
        assert_eq!(m.upper_limits(), vec![1.57]);
        assert_eq!(m.leaf_links(), vec![1]);
        assert!(matches!(m.links[1].visuals[0].shape, Shape::Box { .. }));
    }

    #[test]
    fn loop_is_rejected() {
        let text = r#"<robot name="r"><link name="a"/><link name="b"/><link name="c"/>
          <joint name="j1" type="fixed"><parent link="a"/><child link="b"/></joint>
          <joint name="j2" type="fixed"><parent link="b"/><child link="c"/></joint>
          <joint name="j3" type="fixed"><parent link="c"/><child link="b"/></joint></robot>"#;
        assert!(matches!(parse_urdf(text, &resolver()), Err(GripperError::CycleDetected(_))));
        let detached = r#"<robot name="r"><link name="root"/><link name="b"/><link name="c"/>
          <joint name="j2" type="fixed"><parent link="b"/><child link="c"/></joint>
          <joint name="j3" type="fixed"><parent link="c"/><child link="b"/></joint></robot>"#;
        assert!(matches!(parse_urdf(detached, &resolver()), Err(GripperError::CycleDetected(_))));
    }

    #[test]
    fn contract_errors() {
        let no_limit = TWO_LINK.replace(r#"<limit lower="0" upper="1.57"/>"#, "");
        assert!(matches!(parse_urdf(&no_limit, &resolver()), Err(GripperError::MissingLimit(_))));
        let cont = TWO_LINK.replace("revolute", "continuous");
        assert!(matches!(
            parse_urdf(&cont, &resolver()),
            Err(GripperError::UnsupportedJointType { .. })
        ));
        assert!(matches!(parse_urdf("<robot", &resolver()), Err(GripperError::XmlError(_))));
    }

    #[test]
    fn mimic_coupling_resolves_transitively() {
        let text = r#"<robot name="r"><link name="a"/><link name="b"/><link name="c"/><link name="d"/>
          <joint name="j1" type="revolute"><parent link="a"/><child link="b"/><limit lower="0" upper="1"/></joint>
          <joint name="j2" type="revolute"><parent link="b"/><child link="c"/><limit lower="0" upper="1"/>
            <mimic joint="j1" multiplier="2" offset="0.1"/></joint>
          <joint name="j3" type="prismatic"><parent link="c"/><child link="d"/><limit lower="0" upper="1"/>
            <mimic joint="j2" multiplier="3"/></joint></robot>"#;
        let m = parse_urdf(text, &resolver()).unwrap();
        assert_eq!(m.dof(), 1);
        let q = [0.5];
        assert!((m.drives[1].value(&q) - 1.1).abs() < 1e-15);
        assert!((m.drives[2].value(&q) - 3.3).abs() < 1e-12);
    }

    #[test]
    fn mesh_paths_resolve_against_urdf_dir() {
        let r = resolver();
        assert_eq!(r.resolve("meshes/a.stl"), PathBuf::from("/models/hand/meshes/a.stl"));
        assert_eq!(r.resolve("/abs/a.stl"), PathBuf::from("/abs/a.stl"));
        let rooted = MeshResolver {
            urdf_dir: PathBuf::from("/x"),
            mesh_root: Some(PathBuf::from("/pkgs")),
        };
        assert_eq!(rooted.resolve("package://hand/a.stl"), PathBuf::from("/pkgs/hand/a.stl"));
    }
}
