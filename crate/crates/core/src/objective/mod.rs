//! Surface-matching energy: point-to-plane, normal alignment, contact
//! wrench balance, distance barrier and joint-limit barrier.

mod gradient;

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradient::{finite_difference_gradient, frozen_gradient, gap_jacobian, gradient, PoseGradient};

use crate::gripper::{GripperError, KinematicModel, SurfacePoint};
use crate::pointcloud::{farthest_point_order, PointCloud};
use crate::pose::PoseState;

pub const DEFAULT_CONTACTS: usize = 4;
pub const CANDIDATE_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("no palmar samples with positive weight")]
    EmptyPalmarSet,
    #[error("need {needed} contact candidates, have {got}")]
    TooFewCandidates { needed: usize, got: usize },
    #[error("gradient has non-finite components")]
    NonFiniteGradient,
    #[error(transparent)]
    Gripper(#[from] GripperError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierParams {
    /// Threshold on d_i; squared metres unless `squared_distance` is off.
    pub d_hat: f64,
    /// Joint-limit margin as a fraction of each joint's range.
    pub joint_margin: f64,
    /// Floor on d_i inside the logarithm.
    pub floor: f64,
    pub squared_distance: bool,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self {
            d_hat: 0.05,
            joint_margin: 0.15,
            floor: 1e-12,
            squared_distance: true,
        }
    }
}

/// `-(d - d_hat)^2 ln(d / d_hat)` on `(0, d_hat)`, zero beyond.
pub fn barrier_kernel(d: f64, d_hat: f64, floor: f64) -> f64 {
    if d >= d_hat {
        return 0.0;
    }
    let d = d.max(floor);
    -(d - d_hat).powi(2) * (d / d_hat).ln()
}

pub fn barrier_kernel_derivative(d: f64, d_hat: f64, floor: f64) -> f64 {
    if d >= d_hat {
        return 0.0;
    }
    let d = d.max(floor);
    -2.0 * (d - d_hat) * (d / d_hat).ln() - (d - d_hat).powi(2) / d
}

/// One finger sample and its nearest object point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub link: usize,
    pub sample: usize,
    pub local_point: Vector3<f64>,
    pub local_normal: Vector3<f64>,
    pub weight: f64,
    pub x: Vector3<f64>,
    pub nx: Vector3<f64>,
    pub object_index: usize,
    pub y: Vector3<f64>,
    pub ny: Vector3<f64>,
    /// Squared distance |x - y|^2 at match time.
    pub distance_sq: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactSet {
    /// Indices into the correspondence set.
    pub pairs: Vec<usize>,
    pub positions: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub e_p: f64,
    pub e_n: f64,
    pub e_fc: f64,
    pub e_b: f64,
    pub e_bq: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    fn from_terms(e_p: f64, e_n: f64, e_fc: f64, e_b: f64, e_bq: f64) -> Self {
        Self {
            e_p,
            e_n,
            e_fc,
            e_b,
            e_bq,
            total: e_p + e_fc + e_n + e_b + e_bq,
        }
    }
}

/// Correspondences and contacts held fixed while the pose moves.
#[derive(Debug, Clone, PartialEq)]
pub struct Frozen {
    pub corr: CorrespondenceSet,
    pub contacts: ContactSet,
}

impl Frozen {
    pub fn new(
        model: &KinematicModel,
        points: &[SurfacePoint],
        pose: &PoseState,
        cloud: &PointCloud,
        n_contacts: usize,
    ) -> Result<Self, ObjectiveError> {
        let corr = match_correspondences(model, points, pose, cloud)?;
        let contacts = select_contacts(&corr, n_contacts)?;
        Ok(Self { corr, contacts })
    }
}

/// Places every weighted palmar sample with FK and pairs it with its exact
/// nearest cloud point.
pub fn match_correspondences(
    model: &KinematicModel,
    points: &[SurfacePoint],
    pose: &PoseState,
    cloud: &PointCloud,
) -> Result<CorrespondenceSet, ObjectiveError> {
    let fk = model.forward_kinematics(pose)?;
    let tree = cloud.tree();
    let pairs: Vec<Correspondence> = points
        .iter()
        .filter(|s| s.weight > 0.0)
        .map(|s| {
            let frame = &fk[s.link];
            let x = frame.transform_point(&s.point.into()).coords;
            let (j, distance_sq) = tree.nearest(&x).expect("point cloud is never empty");
            Correspondence {
                link: s.link,
                sample: s.sample,
                local_point: s.point,
                local_normal: s.normal,
                weight: s.weight,
                x,
                nx: frame.rotation * s.normal,
                object_index: j,
                y: cloud.positions()[j],
                ny: cloud.normals()[j],
                distance_sq,
            }
        })
        .collect();
    if pairs.is_empty() {
        return Err(ObjectiveError::EmptyPalmarSet);
    }
    Ok(CorrespondenceSet { pairs })
}

/// Restricts to the nearest 20% of pairs (at least `n`), then spreads `n`
/// contacts over them by farthest-point order starting at the nearest pair.
pub fn select_contacts(corr: &CorrespondenceSet, n: usize) -> Result<ContactSet, ObjectiveError> {
    let m = corr.len();
    if m < n {
        return Err(ObjectiveError::TooFewCandidates { needed: n, got: m });
    }
    let pool_size = ((CANDIDATE_FRACTION * m as f64).ceil() as usize).clamp(n, m);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        corr.pairs[a]
            .distance_sq
            .total_cmp(&corr.pairs[b].distance_sq)
            .then(a.cmp(&b))
    });
    order.truncate(pool_size);
    let pos: Vec<Vector3<f64>> = order.iter().map(|&i| corr.pairs[i].x).collect();
    let pairs: Vec<usize> = farthest_point_order(&pos, n, 0).into_iter().map(|k| order[k]).collect();
    Ok(ContactSet {
        positions: pairs.iter().map(|&i| corr.pairs[i].x).collect(),
        normals: pairs.iter().map(|&i| corr.pairs[i].nx).collect(),
        pairs,
    })
}

pub fn energy_point_match(corr: &CorrespondenceSet) -> f64 {
    corr.pairs
        .iter()
        .map(|c| c.weight * (c.x - c.y).dot(&c.ny).powi(2))
        .sum()
}

pub fn energy_normal_align(corr: &CorrespondenceSet) -> f64 {
    corr.pairs
        .iter()
        .map(|c| c.weight * (c.nx.dot(&c.ny) + 1.0).powi(2))
        .sum()
}

/// Net wrench `Gc` of unit forces along the contact normals, torques about
/// the world origin.
pub fn grasp_wrench(positions: &[Vector3<f64>], normals: &[Vector3<f64>]) -> Vector6<f64> {
    let mut f = Vector3::zeros();
    let mut tau = Vector3::zeros();
    for (x, c) in positions.iter().zip(normals) {
        f += c;
        tau += x.cross(c);
    }
    Vector6::new(f.x, f.y, f.z, tau.x, tau.y, tau.z)
}

pub fn energy_force_closure(contacts: &ContactSet) -> f64 {
    grasp_wrench(&contacts.positions, &contacts.normals).norm()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn distance_measure(distance_sq: f64, params: &BarrierParams) -> f64 {
    if params.squared_distance {
        distance_sq
    } else {
        distance_sq.sqrt()
    }
}

/// Mean barrier over all pairs.
pub fn energy_barrier(corr: &CorrespondenceSet, params: &BarrierParams) -> f64 {
    if corr.is_empty() {
        return 0.0;
    }
    let sum: f64 = corr
        .pairs
        .iter()
        .map(|c| barrier_kernel(distance_measure(c.distance_sq, params), params.d_hat, params.floor))
        .sum();
    sum / corr.len() as f64
}

/// Barrier on the distance to each joint limit, margin a fraction of the range.
pub fn energy_joint_barrier(q: &[f64], lower: &[f64], upper: &[f64], params: &BarrierParams) -> f64 {
    q.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&qi, (&lo, &hi))| {
            let margin = params.joint_margin * (hi - lo);
            barrier_kernel((qi - lo).abs(), margin, params.floor) + barrier_kernel((hi - qi).abs(), margin, params.floor)
        })
        .sum()
}

pub(crate) fn joint_barrier_gradient(q: &[f64], lower: &[f64], upper: &[f64], params: &BarrierParams) -> Vec<f64> {
    q.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&qi, (&lo, &hi))| {
            let margin = params.joint_margin * (hi - lo);
            let dlo = barrier_kernel_derivative((qi - lo).abs(), margin, params.floor) * (qi - lo).signum();
            let dhi = barrier_kernel_derivative((hi - qi).abs(), margin, params.floor) * -(hi - qi).signum();
            dlo + dhi
        })
        .collect()
}

/// Moves the frozen pairs and contacts to `pose`; object side untouched.
pub fn restate(model: &KinematicModel, frozen: &Frozen, pose: &PoseState) -> Result<Frozen, ObjectiveError> {
    let fk = model.forward_kinematics(pose)?;
    let mut out = frozen.clone();
    for c in &mut out.corr.pairs {
        let frame = &fk[c.link];
        c.x = frame.transform_point(&c.local_point.into()).coords;
        c.nx = frame.rotation * c.local_normal;
        c.distance_sq = (c.x - c.y).norm_squared();
    }
    for (k, &i) in out.contacts.pairs.iter().enumerate() {
        out.contacts.positions[k] = out.corr.pairs[i].x;
        out.contacts.normals[k] = out.corr.pairs[i].nx;
    }
    Ok(out)
}

/// Signed offset of each finger sample from its matched tangent plane,
/// positive on the outward side.
pub fn signed_gaps(state: &Frozen) -> Vec<f64> {
    state.corr.pairs.iter().map(|c| (c.x - c.y).dot(&c.ny)).collect()
}

pub fn breakdown_of(model: &KinematicModel, state: &Frozen, q: &[f64], params: &BarrierParams) -> ObjectiveBreakdown {
    ObjectiveBreakdown::from_terms(
        energy_point_match(&state.corr),
        energy_normal_align(&state.corr),
        energy_force_closure(&state.contacts),
        energy_barrier(&state.corr, params),
        energy_joint_barrier(q, &model.lower_limits(), &model.upper_limits(), params),
    )
}

/// Energy at `pose` with matches and contacts frozen.
pub fn frozen_energy(
    model: &KinematicModel,
    frozen: &Frozen,
    pose: &PoseState,
    params: &BarrierParams,
) -> Result<ObjectiveBreakdown, ObjectiveError> {
    let state = restate(model, frozen, pose)?;
    Ok(breakdown_of(model, &state, &pose.joints, params))
}

/// Fresh matching and contact selection, then all terms.
pub fn total_energy(
    model: &KinematicModel,
    points: &[SurfacePoint],
    pose: &PoseState,
    cloud: &PointCloud,
    params: &BarrierParams,
) -> Result<ObjectiveBreakdown, ObjectiveError> {
    let frozen = Frozen::new(model, points, pose, cloud, DEFAULT_CONTACTS)?;
    Ok(breakdown_of(model, &frozen, &pose.joints, params))
}
