//! Gripper description: URDF kinematics, sampled link surfaces, palmar
//! weighting and per-link bounding boxes.

pub mod cache;
pub mod kinematics;
pub mod obb;
pub mod palmar;
pub mod surface;
pub mod urdf;

use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

pub use kinematics::FkFrames;
pub use obb::{fit_obb, link_obbs, Obb};
pub use palmar::{compute_palmar_mask, default_light_source, PalmarOptions, PalmarReport};
pub use surface::{assign_weights, build_link_meshes, sample_link_surfaces, LinkSamples, LinkSurface, SurfacePoint};
pub use urdf::{parse_urdf, Drive, Joint, JointType, KinematicModel, Link, MeshResolver, Shape};

use crate::mesh::TriMesh;

#[derive(Debug, Error)]
pub enum GripperError {
    #[error("xml error: {0}")]
    XmlError(String),
    #[error("bad attribute on <{element}>: {msg}")]
    BadAttribute { element: String, msg: String },
    #[error("joint {joint}: unsupported joint type {kind}")]
    UnsupportedJointType { joint: String, kind: String },
    #[error("unknown link {0}")]
    UnknownLink(String),
    #[error("joint {0} has no lower/upper limit")]
    MissingLimit(String),
    #[error("joint graph is not a tree: {0}")]
    CycleDetected(String),
    #[error("multiple root links: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("mimic refers to unknown or fixed joint {0}")]
    UnknownMimicJoint(String),
    #[error("expected {expected} joint values, got {got}")]
    DofMismatch { expected: usize, got: usize },
    #[error("mesh load failed: {0}")]
    MeshLoadError(String),
    #[error("link {0} has zero surface area")]
    DegenerateMesh(String),
    #[error("model has no fingertip (leaf) links")]
    NoFingertips,
    #[error("no palmar samples with positive weight")]
    EmptyPalmarSet,
    #[error("cache io: {0}")]
    Cache(String),
}

/// Knobs for turning a URDF into planner-ready assets.
#[derive(Debug, Clone)]
pub struct AssetOptions {
    pub density: f64,
    pub seed: u64,
    pub fingertip_links: Vec<String>,
    pub fingertip_boost: f64,
    /// Spread configuration; mid-range of the limits when `None`.
    pub q_open: Option<Vec<f64>>,
    pub palmar: PalmarOptions,
    pub obb_padding: f64,
}

impl Default for AssetOptions {
    fn default() -> Self {
        Self {
            density: 1e5,
            seed: 0,
            fingertip_links: Vec::new(),
            fingertip_boost: 1.0,
            q_open: None,
            palmar: PalmarOptions::default(),
            obb_padding: 0.0,
        }
    }
}

/// Everything the objective and planner read about the gripper.
#[derive(Debug, Clone)]
pub struct GripperAssets {
    pub model: KinematicModel,
    pub meshes: Vec<TriMesh>,
    pub surfaces: LinkSurface,
    pub obbs: Vec<Option<Obb>>,
    pub q_open: Vec<f64>,
    pub light: Vector3<f64>,
    pub cache_hit: bool,
}

impl GripperAssets {
    pub fn build(model: KinematicModel, opts: &AssetOptions) -> Result<Self, GripperError> {
        Self::build_with(model, opts, |m, meshes, q| weighted_surface(m, meshes, q, opts))
    }

    /// Like [`GripperAssets::build`] but reads/writes the weighted surface
    /// through a JSON cache at `cache_path`, keyed by `urdf_text` and options.
    pub fn build_cached(
        model: KinematicModel,
        urdf_text: &str,
        opts: &AssetOptions,
        cache_path: &Path,
    ) -> Result<Self, GripperError> {
        let q_open = resolve_q_open(&model, opts)?;
        let key = cache::cache_key(urdf_text, opts, &q_open);
        let mut hit = false;
        let mut assets = Self::build_with(model, opts, |m, meshes, q| {
            if let Some(entry) = cache::load(cache_path, &key) {
                if entry.surfaces.links.len() == m.links.len() {
                    hit = true;
                    return Ok((entry.surfaces, entry.light));
                }
            }
            let (s, light) = weighted_surface(m, meshes, q, opts)?;
            cache::store(cache_path, &key, &s, &light)?;
            Ok((s, light))
        })?;
        assets.cache_hit = hit;
        Ok(assets)
    }

    fn build_with(
        model: KinematicModel,
        opts: &AssetOptions,
        surface: impl FnOnce(&KinematicModel, &[TriMesh], &[f64]) -> Result<(LinkSurface, Vector3<f64>), GripperError>,
    ) -> Result<Self, GripperError> {
        let q_open = resolve_q_open(&model, opts)?;
        let meshes = build_link_meshes(&model)?;
        let (surfaces, light) = surface(&model, &meshes, &q_open)?;
        if surfaces.weighted_points().is_empty() {
            return Err(GripperError::EmptyPalmarSet);
        }
        let obbs = link_obbs(&meshes, &surfaces, opts.obb_padding);
        Ok(Self {
            model,
            meshes,
            surfaces,
            obbs,
            q_open,
            light,
            cache_hit: false,
        })
    }
}

fn resolve_q_open(model: &KinematicModel, opts: &AssetOptions) -> Result<Vec<f64>, GripperError> {
    match &opts.q_open {
        Some(q) if q.len() != model.dof() => Err(GripperError::DofMismatch {
            expected: model.dof(),
            got: q.len(),
        }),
        Some(q) => Ok(q.clone()),
        None => Ok(model.mid_range()),
    }
}

fn weighted_surface(
    model: &KinematicModel,
    meshes: &[TriMesh],
    q_open: &[f64],
    opts: &AssetOptions,
) -> Result<(LinkSurface, Vector3<f64>), GripperError> {
    let raw = sample_link_surfaces(model, meshes, opts.density, opts.seed)?;
    let (masked, report) = compute_palmar_mask(model, meshes, &raw, q_open, &opts.palmar)?;
    let weighted = assign_weights(model, &masked, &opts.fingertip_links, opts.fingertip_boost)?;
    log::info!(
        "palmar mask: {} of {} samples, {} ray hits, r_hit {:.4}",
        report.palmar_samples,
        weighted.total_samples(),
        report.hits,
        report.hit_radius
    );
    Ok((weighted, report.light))
}
