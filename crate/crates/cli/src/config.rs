//! Strict TOML run configuration.

use std::path::{Path, PathBuf};

use gradgrasp::gripper::{parse_urdf, AssetOptions, GripperAssets, MeshResolver, PalmarOptions};
use gradgrasp::objective::BarrierParams;
use gradgrasp::planner::PlannerConfig;
use gradgrasp::pointcloud::{load_point_cloud, CloudFormat, LoadOptions, PointCloud};
use gradgrasp::quality::FrictionModel;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const MESH_ROOT_ENV: &str = "GRADGRASP_MESH_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `planner.seed` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    pub gripper: GripperSection,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub barrier: BarrierParams,
    #[serde(default)]
    pub quality: FrictionModel,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperSection {
    pub urdf: PathBuf,
    #[serde(default)]
    pub mesh_root: Option<PathBuf>,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub sample_seed: u64,
    #[serde(default)]
    pub fingertip_links: Vec<String>,
    #[serde(default = "one")]
    pub fingertip_boost: f64,
    /// Overrides `planner.d_gripper` when set.
    #[serde(default)]
    pub d_gripper: Option<f64>,
    #[serde(default)]
    pub q_open: Option<Vec<f64>>,
    #[serde(default)]
    pub palmar: PalmarOptions,
    #[serde(default)]
    pub obb_padding: f64,
}

fn default_density() -> f64 {
    AssetOptions::default().density
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// "ply", "obj" or "xyzn"; inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<String>,
    /// Neighbour count for normal estimation when the input has none.
    #[serde(default)]
    pub estimate_normals: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates; relative paths are taken against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.gripper.urdf);
        if let Some(p) = cfg.gripper.mesh_root.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.io.input.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.io.output.as_mut() {
            rebase(p);
        }
        if let Some(seed) = cfg.seed {
            cfg.planner.seed = seed;
        }
        if let Some(d) = cfg.gripper.d_gripper {
            cfg.planner.d_gripper = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.planner.validate().map_err(CliError::Config)?;
        self.quality.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.barrier.d_hat > 0.0) || !(self.barrier.floor > 0.0) || !(0.0..0.5).contains(&self.barrier.joint_margin) {
            return Err(CliError::Config("barrier needs d_hat > 0, floor > 0, joint_margin in [0, 0.5)".into()));
        }
        if !(self.gripper.density > 0.0) || !(self.gripper.fingertip_boost > 0.0) || self.gripper.obb_padding < 0.0 {
            return Err(CliError::Config("gripper density and fingertip_boost must be positive, obb_padding >= 0".into()));
        }
        if self.gripper.palmar.rays == 0 {
            return Err(CliError::Config("gripper.palmar.rays must be at least 1".into()));
        }
        if let Some(f) = &self.io.format {
            parse_format(f)?;
        }
        let must_exist = [Some(&self.gripper.urdf), self.io.input.as_ref()];
        for p in must_exist.into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn asset_options(&self) -> AssetOptions {
        AssetOptions {
            density: self.gripper.density,
            seed: self.gripper.sample_seed,
            fingertip_links: self.gripper.fingertip_links.clone(),
            fingertip_boost: self.gripper.fingertip_boost,
            q_open: self.gripper.q_open.clone(),
            palmar: self.gripper.palmar.clone(),
            obb_padding: self.gripper.obb_padding,
        }
    }

    pub fn mesh_root(&self) -> Option<PathBuf> {
        std::env::var_os(MESH_ROOT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.gripper.mesh_root.clone())
    }

    /// Weight-map cache file next to the URDF.
    pub fn cache_path(&self) -> PathBuf {
        let mut name = self.gripper.urdf.file_name().unwrap_or_default().to_os_string();
        name.push(".weights.json");
        self.gripper.urdf.with_file_name(name)
    }

    pub fn load_assets(&self, use_cache: bool) -> CliResult<GripperAssets> {
        let text = std::fs::read_to_string(&self.gripper.urdf)
            .map_err(|e| CliError::Input(format!("{}: {e}", self.gripper.urdf.display())))?;
        let resolver = MeshResolver {
            urdf_dir: self.gripper.urdf.parent().map(Path::to_path_buf).unwrap_or_default(),
            mesh_root: self.mesh_root(),
        };
        let model = parse_urdf(&text, &resolver).map_err(|e| CliError::Input(e.to_string()))?;
        let opts = self.asset_options();
        let assets = if use_cache {
            GripperAssets::build_cached(model, &text, &opts, &self.cache_path())
        } else {
            GripperAssets::build(model, &opts)
        };
        assets.map_err(|e| CliError::Input(e.to_string()))
    }

    /// Object path from the command line, else `io.input`.
    pub fn object_path(&self, arg: Option<&Path>) -> CliResult<PathBuf> {
        arg.map(Path::to_path_buf)
            .or_else(|| self.io.input.clone())
            .ok_or_else(|| CliError::Config("no object given and io.input is unset".into()))
    }

    pub fn load_cloud(&self, path: &Path) -> CliResult<PointCloud> {
        let format = self.io.format.as_deref().map(parse_format).transpose()?;
        load_point_cloud(path, format, LoadOptions {
            estimate_normals: self.io.estimate_normals,
        })
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

fn parse_format(s: &str) -> CliResult<CloudFormat> {
    match s.to_ascii_lowercase().as_str() {
        "ply" => Ok(CloudFormat::Ply),
        "obj" => Ok(CloudFormat::Obj),
        "xyzn" => Ok(CloudFormat::Xyzn),
        other => Err(CliError::Config(format!("unknown io.format {other:?}"))),
    }
}
