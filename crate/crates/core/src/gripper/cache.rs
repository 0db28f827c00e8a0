//! JSON cache of the weighted link surface, keyed by a content hash.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::surface::LinkSurface;
use super::{AssetOptions, GripperError};

const CACHE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct CacheEntry {
    pub version: u32,
    pub key: String,
    pub light: Vector3<f64>,
    pub surfaces: LinkSurface,
}

/// Hash of everything the weighted surface depends on.
pub fn cache_key(urdf_text: &str, opts: &AssetOptions, q_open: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.to_le_bytes());
    h.update((urdf_text.len() as u64).to_le_bytes());
    h.update(urdf_text.as_bytes());
    h.update(opts.density.to_le_bytes());
    h.update(opts.seed.to_le_bytes());
    h.update((opts.palmar.rays as u64).to_le_bytes());
    h.update(opts.palmar.hit_radius_factor.to_le_bytes());
    h.update(opts.palmar.normal_gate.to_le_bytes());
    match opts.palmar.light {
        Some(l) => {
            h.update([1u8]);
            for v in l.iter() {
                h.update(v.to_le_bytes());
            }
        }
        None => h.update([0u8]),
    }
    for q in q_open {
        h.update(q.to_le_bytes());
    }
    h.update(opts.fingertip_boost.to_le_bytes());
    for name in &opts.fingertip_links {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Entry at `path` if it exists, parses and carries `key`.
pub fn load(path: &Path, key: &str) -> Option<CacheEntry> {
    let text = fs::read_to_string(path).ok()?;
    let entry: CacheEntry = serde_json::from_str(&text).ok()?;
    if entry.version == CACHE_VERSION && entry.key == key {
        log::info!("weight map cache hit: {}", path.display());
        Some(entry)
    } else {
        log::info!("weight map cache stale: {}", path.display());
        None
    }
}

pub fn store(path: &Path, key: &str, surfaces: &LinkSurface, light: &Vector3<f64>) -> Result<(), GripperError> {
    let entry = CacheEntry {
        version: CACHE_VERSION,
        key: key.to_string(),
        light: *light,
        surfaces: surfaces.clone(),
    };
    let text = serde_json::to_string(&entry).map_err(|e| GripperError::Cache(e.to_string()))?;
    fs::write(path, text).map_err(|e| GripperError::Cache(format!("{}: {e}", path.display())))?;
    log::info!("weight map cache written: {}", path.display());
    Ok(())
}
