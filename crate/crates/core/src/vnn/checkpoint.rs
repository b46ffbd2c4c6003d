//! Model checkpoints: `model.toml` (variant, sizes, architecture, tensor
//! shapes, seed state) and `model.bin`, every parameter as little-endian
//! f32 in declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, Variant, VnnModel};
use crate::datapool::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST: &str = "model.toml";
pub const PARAMS: &str = "model.bin";
const FORMAT_TAG: &str = "osal-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub variant: Variant,
    pub input_dim: usize,
    pub z_dim: usize,
    pub num_classes: usize,
    pub architecture: Architecture,
    pub layer_shapes: Vec<[usize; 2]>,
    /// Generators are derived from (seed, purpose, stage), so this pair is
    /// the complete random state.
    pub rng_seed: u64,
    pub rng_stage: u64,
}

pub fn save_model(model: &VnnModel, dir: &Path, rng_seed: u64, rng_stage: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = ModelManifest {
        format: FORMAT_TAG.into(),
        variant: model.variant,
        input_dim: model.input_dim,
        z_dim: model.z_dim,
        num_classes: model.num_classes,
        architecture: model.arch.clone(),
        layer_shapes: model.param_shapes(),
        rng_seed,
        rng_stage,
    };
    let mut blob = Vec::with_capacity(model.num_params() * 4);
    model.visit_params(&mut |p| {
        for v in p.iter() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    });
    let text = toml::to_string(&manifest).map_err(|e| Error::Contract(e.to_string()))?;
    write_atomic(&dir.join(PARAMS), &blob)?;
    write_atomic(&dir.join(MANIFEST), text.as_bytes())
}

pub fn load_model(dir: &Path) -> Result<(VnnModel, ModelManifest)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest = toml::from_str(&text).map_err(|e| Error::format("model checkpoint", e.to_string()))?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::format("model checkpoint", format!("unknown format tag {}", manifest.format)));
    }
    let mut model = VnnModel::new(
        manifest.variant,
        manifest.architecture.clone(),
        manifest.input_dim,
        manifest.z_dim,
        manifest.num_classes,
        &mut seed::stream(0, "checkpoint-skeleton", 0),
    )?;
    if model.param_shapes() != manifest.layer_shapes {
        return Err(Error::format("model checkpoint", "tensor shapes disagree with the architecture"));
    }
    let blob_path = dir.join(PARAMS);
    let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() != model.num_params() * 4 {
        return Err(Error::format("model checkpoint", format!("{} bytes for {} parameters", blob.len(), model.num_params())));
    }
    let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    model.visit_params_mut(&mut |p| {
        for v in p.iter_mut() {
            *v = values.next().expect("length checked");
        }
    });
    Ok((model, manifest))
}
