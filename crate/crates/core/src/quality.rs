//! Grasp quality: direction-sampled epsilon metric, surface-matching energy
//! as a metric, and valid proportion.

use nalgebra::{Matrix3, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::gripper::{KinematicModel, SurfacePoint};
use crate::objective::{total_energy, BarrierParams, ContactSet, Frozen, ObjectiveError};
use crate::planner::GraspResult;
use crate::pointcloud::PointCloud;
use crate::pose::PoseState;

pub const DEFAULT_DIRECTIONS: usize = 10_000;
const DIRECTION_SEED: u64 = 0x5eed_0001;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("contacts are degenerate: need at least one contact, and not all collinear with identical normals")]
    DegenerateContacts,
    #[error("invalid friction model: {0}")]
    BadFriction(String),
    #[error("no results")]
    EmptyResults,
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrictionModel {
    pub mu: f64,
    /// Edges of the discretized friction cone.
    pub cone_edges: usize,
}

impl Default for FrictionModel {
    fn default() -> Self {
        Self { mu: 0.5, cone_edges: 8 }
    }
}

impl FrictionModel {
    pub fn validate(&self) -> Result<(), QualityError> {
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(QualityError::BadFriction(format!("mu must be >= 0, got {}", self.mu)));
        }
        if self.cone_edges < 3 {
            return Err(QualityError::BadFriction(format!("cone_edges must be >= 3, got {}", self.cone_edges)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub epsilon: f64,
    pub bsm: f64,
    pub contacts: Vec<[f64; 6]>,
    pub method: String,
}

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// First `count` unit directions of a shifted 6-D Halton sequence mapped
/// through the normal quantile. Prefixes are nested, so more directions only
/// add to the set.
pub fn wrench_directions(count: usize, seed: u64) -> Vec<Vector6<f64>> {
    const BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];
    let normal = Normal::standard();
    let shift: Vec<f64> = BASES.iter().enumerate().map(|(k, &b)| halton(seed.wrapping_add(k as u64 * 7919) % 1_000_003 + 1, b)).collect();
    let mut out = Vec::with_capacity(count);
    let mut i = 1u64;
    while out.len() < count {
        let g = Vector6::from_fn(|k, _| {
            let u = (halton(i, BASES[k]) + shift[k]).fract().clamp(1e-12, 1.0 - 1e-12);
            normal.inverse_cdf(u)
        });
        i += 1;
        let n = g.norm();
        if n > 1e-12 {
            out.push(g / n);
        }
    }
    out
}

fn orthonormal_pair(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&helper).normalize();
    (t1, n.cross(&t1))
}

/// Frame built from the contacts alone: eigenvectors of the position and
/// normal scatter, signs fixed by third moments.
fn canonical_frame(p: &[Vector3<f64>], n: &[Vector3<f64>]) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for (a, b) in p.iter().zip(n) {
        m += a * a.transpose() + b * b.transpose();
    }
    let eig = SymmetricEigen::new(m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes: Vec<Vector3<f64>> = order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
    for axis in axes.iter_mut().take(2) {
        let skew: f64 = p.iter().chain(n).map(|v| axis.dot(v).powi(3)).sum();
        let first: f64 = p.iter().chain(n).map(|v| axis.dot(v)).find(|v| v.abs() > 1e-9).unwrap_or(1.0);
        let sign = if skew.abs() > 1e-12 { skew.signum() } else { first.signum() };
        *axis *= sign;
    }
    axes[2] = axes[0].cross(&axes[1]);
    Matrix3::from_columns(&axes).transpose()
}

fn contact_wrenches(positions: &[Vector3<f64>], normals: &[Vector3<f64>], friction: &FrictionModel) -> Vec<Vector6<f64>> {
    let centroid = positions.iter().sum::<Vector3<f64>>() / positions.len() as f64;
    let radius = positions.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    let torque_scale = if radius > 1e-12 { 1.0 / radius } else { 1.0 };
    let rel: Vec<Vector3<f64>> = positions.iter().map(|p| (p - centroid) * torque_scale).collect();
    let normals: Vec<Vector3<f64>> = normals.iter().map(|n| n.normalize()).collect();
    let frame = canonical_frame(&rel, &normals);

    let mut out = Vec::with_capacity(positions.len() * friction.cone_edges);
    for (r, n) in rel.iter().zip(&normals) {
        let (r, n) = (frame * r, frame * n);
        let (t1, t2) = orthonormal_pair(&n);
        for k in 0..friction.cone_edges {
            let th = std::f64::consts::TAU * k as f64 / friction.cone_edges as f64;
            let f = (n + friction.mu * (th.cos() * t1 + th.sin() * t2)).normalize();
            let tau = r.cross(&f);
            out.push(Vector6::new(f.x, f.y, f.z, tau.x, tau.y, tau.z));
        }
    }
    out
}

fn support(wrenches: &[Vector6<f64>], u: &Vector6<f64>) -> f64 {
    wrenches.iter().map(|w| w.dot(u)).fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest support of the contact wrench hull over sampled unit directions,
/// clamped at zero. Normals point the way each contact pushes.
///
/// Besides the sampled set, the pure-force directions opposite each contact
/// normal are always tested so one-sided grasps come out exactly zero.
pub fn epsilon_metric(
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    friction: &FrictionModel,
    directions: usize,
) -> Result<f64, QualityError> {
    friction.validate()?;
    if positions.is_empty() || positions.len() != normals.len() {
        return Err(QualityError::DegenerateContacts);
    }
    if normals.iter().any(|n| !(n.norm() > 1e-12) || !n.iter().all(|v| v.is_finite())) {
        return Err(QualityError::DegenerateContacts);
    }
    if positions.len() == 1 {
        return Ok(0.0);
    }
    let n0 = normals[0].normalize();
    let same_normals = normals.iter().all(|n| (n.normalize() - n0).norm() < 1e-12);
    let d = positions[1..].iter().map(|p| p - positions[0]).find(|v| v.norm() > 1e-12);
    let collinear = match d {
        None => true,
        Some(d) => positions.iter().all(|p| (p - positions[0]).cross(&d).norm() < 1e-12 * d.norm().max(1.0)),
    };
    if same_normals && collinear {
        return Err(QualityError::DegenerateContacts);
    }

    let wrenches = contact_wrenches(positions, normals, friction);
    let mut eps = f64::INFINITY;
    for u in wrench_directions(directions, DIRECTION_SEED) {
        eps = eps.min(support(&wrenches, &u));
    }
    let stride = friction.cone_edges;
    for chunk in wrenches.chunks(stride) {
        // mean of the cone edges points along the contact normal
        let axis: Vector3<f64> = chunk.iter().map(|w| Vector3::new(w[0], w[1], w[2])).sum::<Vector3<f64>>().normalize();
        eps = eps.min(support(&wrenches, &Vector6::new(-axis.x, -axis.y, -axis.z, 0.0, 0.0, 0.0)));
    }
    Ok(eps.max(0.0))
}

pub fn contact_epsilon(contacts: &ContactSet, friction: &FrictionModel, directions: usize) -> Result<f64, QualityError> {
    epsilon_metric(&contacts.positions, &contacts.normals, friction, directions)
}

/// Total surface-matching energy at `pose` with fresh matches.
pub fn bsm_metric(
    model: &KinematicModel,
    points: &[SurfacePoint],
    pose: &PoseState,
    cloud: &PointCloud,
    params: &BarrierParams,
) -> Result<f64, QualityError> {
    Ok(total_energy(model, points, pose, cloud, params)?.total)
}

pub fn quality_report(
    model: &KinematicModel,
    points: &[SurfacePoint],
    pose: &PoseState,
    cloud: &PointCloud,
    params: &BarrierParams,
    friction: &FrictionModel,
    contacts: usize,
) -> Result<QualityReport, QualityError> {
    let frozen = Frozen::new(model, points, pose, cloud, contacts)?;
    let set = &frozen.contacts;
    let epsilon = contact_epsilon(set, friction, DEFAULT_DIRECTIONS)?;
    Ok(QualityReport {
        epsilon,
        bsm: bsm_metric(model, points, pose, cloud, params)?,
        contacts: set
            .positions
            .iter()
            .zip(&set.normals)
            .map(|(p, n)| [p.x, p.y, p.z, n.x, n.y, n.z])
            .collect(),
        method: format!(
            "sampled support, {} directions, mu {}, {} cone edges, torque about contact centroid / max radius",
            DEFAULT_DIRECTIONS, friction.mu, friction.cone_edges
        ),
    })
}

pub fn valid_proportion(results: &[GraspResult]) -> Result<f64, QualityError> {
    if results.is_empty() {
        return Err(QualityError::EmptyResults);
    }
    Ok(results.iter().filter(|r| r.valid).count() as f64 / results.len() as f64)
}
