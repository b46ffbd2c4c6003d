//! Pool checkpoints: a TOML manifest (stage, seed, id lists, discarded
//! count) plus `pool.bin`, little-endian f32 features of any foreign
//! records mixed into the pool.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pool::PoolState;
use super::record::{Origin, SampleId, SampleRecord};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "pool.toml";
pub const FEATURES: &str = "pool.bin";
const FORMAT_TAG: &str = "osal-pool/1";

#[derive(Debug, Clone, PartialEq)]
pub struct PoolCheckpoint {
    pub pool: PoolState,
    pub seed: u64,
    pub foreign: Vec<SampleRecord>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    stage: usize,
    seed: u64,
    initial_labeled: usize,
    discarded_ood_count: usize,
    labeled: Vec<u64>,
    unlabeled: Vec<u64>,
    /// `[id, label]` pairs in labeled-pool order.
    oracle_labels: Vec<[u64; 2]>,
    features: FeatureIndex,
}

#[derive(Serialize, Deserialize)]
struct FeatureIndex {
    file: String,
    dim: usize,
    groups: Vec<ForeignGroup>,
}

#[derive(Serialize, Deserialize)]
struct ForeignGroup {
    origin: String,
    ids: Vec<u64>,
}

impl PoolCheckpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let dim = self.foreign.first().map_or(0, |r| r.features.len());
        let mut groups: Vec<ForeignGroup> = Vec::new();
        let mut blob = Vec::with_capacity(self.foreign.len() * dim * 4);
        for r in &self.foreign {
            let Origin::Foreign(name) = &r.origin else {
                return Err(Error::Contract(format!("record {} is not foreign", r.id)));
            };
            if r.features.len() != dim {
                return Err(Error::shape(format!("[{dim}]"), format!("[{}]", r.features.len())));
            }
            match groups.last_mut() {
                Some(g) if &g.origin == name => g.ids.push(r.id.0),
                _ => groups.push(ForeignGroup { origin: name.clone(), ids: vec![r.id.0] }),
            }
            for v in &r.features {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT_TAG.into(),
            stage: self.pool.stage,
            seed: self.seed,
            initial_labeled: self.pool.initial_labeled,
            discarded_ood_count: self.pool.discarded_ood_count,
            labeled: self.pool.labeled.iter().map(|id| id.0).collect(),
            unlabeled: self.pool.unlabeled.iter().map(|id| id.0).collect(),
            oracle_labels: self.pool.labeled.iter().map(|id| [id.0, self.pool.oracle_labels[id] as u64]).collect(),
            features: FeatureIndex { file: FEATURES.into(), dim, groups },
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Contract(e.to_string()))?;
        write_atomic(&dir.join(FEATURES), &blob)?;
        write_atomic(&dir.join(MANIFEST), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::format("pool checkpoint", e.to_string()))?;
        if m.format != FORMAT_TAG {
            return Err(Error::format("pool checkpoint", format!("unknown format tag {}", m.format)));
        }
        let blob_path = dir.join(&m.features.file);
        let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let n_foreign: usize = m.features.groups.iter().map(|g| g.ids.len()).sum();
        if blob.len() != n_foreign * m.features.dim * 4 {
            return Err(Error::format("pool checkpoint", "feature file size disagrees with manifest"));
        }
        let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut foreign = Vec::with_capacity(n_foreign);
        for g in &m.features.groups {
            for &id in &g.ids {
                foreign.push(SampleRecord {
                    id: SampleId(id),
                    features: values.by_ref().take(m.features.dim).collect(),
                    true_label: None,
                    origin: Origin::Foreign(g.origin.clone()),
                });
            }
        }
        let oracle_labels: BTreeMap<SampleId, usize> =
            m.oracle_labels.iter().map(|&[id, y]| (SampleId(id), y as usize)).collect();
        let mut pool = PoolState::from_parts(
            m.labeled.into_iter().map(SampleId),
            m.unlabeled.into_iter().map(SampleId),
            oracle_labels,
        )?;
        pool.stage = m.stage;
        pool.initial_labeled = m.initial_labeled;
        pool.discarded_ood_count = m.discarded_ood_count;
        Ok(PoolCheckpoint { pool, seed: m.seed, foreign })
    }
}

/// Writes through a temporary sibling so readers never see a torn file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapool::{mix_ood, split_initial, SyntheticConfig};

    #[test]
    fn round_trip_is_byte_identical() {
        let d = SyntheticConfig::new(3, 20, 2, 1.0, 4).generate().unwrap();
        let mut fcfg = SyntheticConfig::new(3, 20, 2, 1.0, 5);
        fcfg.name = Some("far".into());
        let foreign = fcfg.generate().unwrap();
        let p = split_initial(&d, 6, 2).unwrap();
        let (mut p, recs) = mix_ood(&p, &d, &foreign, 0.25, 3).unwrap();
        let pick: Vec<_> = p.unlabeled_ids().iter().take(4).map(|&id| (id, 2)).collect();
        p.promote(&pick).unwrap();
        p.record_rejections(3);

        let ckpt = PoolCheckpoint { pool: p, seed: 42, foreign: recs };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        ckpt.save(a.path()).unwrap();
        let loaded = PoolCheckpoint::load(a.path()).unwrap();
        assert_eq!(loaded, ckpt);
        loaded.save(b.path()).unwrap();
        for f in [MANIFEST, FEATURES] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }
}
