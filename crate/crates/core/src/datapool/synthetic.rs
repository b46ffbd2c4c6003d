//! Gaussian blob generator for desk-scale experiments.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::{Dataset, FeatureShape, SampleRecord};
use crate::error::{Error, Result};

fn default_radius() -> f64 {
    10.0
}

/// Generator parameters, read from a TOML file with keys
/// `classes, n_per_class, dim, centers?, stddev, seed` (plus the optional
/// `radius`, `eval_per_class` and `name`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    pub stddev: f64,
    pub seed: u64,
    /// Radius of the circle the default centers sit on.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Evaluation samples per class; defaults to half of `n_per_class`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl SyntheticConfig {
    pub fn new(classes: usize, n_per_class: usize, dim: usize, stddev: f64, seed: u64) -> Self {
        SyntheticConfig {
            classes,
            n_per_class,
            dim,
            centers: None,
            stddev,
            seed,
            radius: default_radius(),
            eval_per_class: None,
            name: None,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format("synthetic_blobs", e.to_string()))
    }

    /// Class centers: explicit ones when given, otherwise evenly spaced on
    /// a circle of `radius` in the first two coordinates.
    pub fn resolved_centers(&self) -> Result<Vec<Vec<f64>>> {
        if let Some(centers) = &self.centers {
            if centers.len() != self.classes {
                return Err(Error::format("synthetic_blobs", format!("{} centers for {} classes", centers.len(), self.classes)));
            }
            if let Some(c) = centers.iter().find(|c| c.len() != self.dim) {
                return Err(Error::shape(format!("[{}]", self.dim), format!("[{}]", c.len())));
            }
            return Ok(centers.clone());
        }
        Ok((0..self.classes)
            .map(|c| {
                let mut v = vec![0.0; self.dim];
                if self.dim == 1 {
                    v[0] = self.radius * c as f64;
                } else {
                    let angle = std::f64::consts::TAU * c as f64 / self.classes as f64;
                    v[0] = self.radius * angle.cos();
                    v[1] = self.radius * angle.sin();
                }
                v
            })
            .collect())
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.classes == 0 || self.n_per_class == 0 || self.dim == 0 {
            return Err(Error::format("synthetic_blobs", "classes, n_per_class and dim must be positive"));
        }
        if !(self.stddev >= 0.0 && self.stddev.is_finite()) {
            return Err(Error::format("synthetic_blobs", "stddev must be finite and non-negative"));
        }
        let centers = self.resolved_centers()?;
        let eval_per_class = self.eval_per_class.unwrap_or(self.n_per_class.div_ceil(2));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut next_id = 0u64;
        let mut draw = |count: usize, rng: &mut ChaCha8Rng| {
            let mut out = Vec::with_capacity(count * self.classes);
            // sample-major order so pool order does not cluster by class
            for _ in 0..count {
                for (label, center) in centers.iter().enumerate() {
                    let features = center
                        .iter()
                        .map(|&m| {
                            let eps: f64 = StandardNormal.sample(rng);
                            (m + self.stddev * eps) as f32
                        })
                        .collect();
                    out.push(SampleRecord::labeled(next_id, features, label));
                    next_id += 1;
                }
            }
            out
        };
        let train_records = draw(self.n_per_class, &mut rng);
        let eval_records = draw(eval_per_class, &mut rng);
        Ok(Dataset {
            name: self.name.clone().unwrap_or_else(|| "synthetic_blobs".into()),
            num_classes: self.classes,
            shape: FeatureShape::Flat { dim: self.dim },
            superclass_map: None,
            train_records,
            eval_records,
        })
    }
}

/// Writes `train.csv` and `eval.csv` (`id,label,x0..x{d-1}`) plus the
/// generator config `blobs.toml`, which `load_dataset` reads back.
pub fn write_blobs(config: &SyntheticConfig, dir: &Path) -> Result<Dataset> {
    let dataset = config.generate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (file, records) in [("train.csv", &dataset.train_records), ("eval.csv", &dataset.eval_records)] {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..config.dim).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for r in records.iter() {
            let mut row = vec![r.id.0.to_string(), r.true_label.map_or(String::new(), |l| l.to_string())];
            row.extend(r.features.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        super::checkpoint::write_atomic(&dir.join(file), &bytes)?;
    }
    let text = toml::to_string(config).map_err(|e| Error::Contract(e.to_string()))?;
    super::checkpoint::write_atomic(&dir.join("blobs.toml"), text.as_bytes())?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn written_config_regenerates_the_csv_data() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig::new(3, 4, 2, 1.0, 5);
        let d = write_blobs(&cfg, dir.path()).unwrap();
        let again = SyntheticConfig::from_path(&dir.path().join("blobs.toml")).unwrap().generate().unwrap();
        assert_eq!(d.train_records, again.train_records);
        let train = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
        assert_eq!(train.lines().count(), 13);
        assert!(train.starts_with("id,label,x0,x1\n0,0,"));
    }

    #[test]
    fn generator_counts() {
        let d = SyntheticConfig::new(4, 50, 2, 1.0, 1).generate().unwrap();
        assert_eq!(d.len(), 200);
        assert_eq!(d.num_classes, 4);
        assert_eq!(d.eval_records.len(), 100);
        d.validate().unwrap();
    }

    #[test]
    fn deterministic_per_seed() {
        let a = SyntheticConfig::new(3, 10, 2, 1.0, 5).generate().unwrap();
        let b = SyntheticConfig::new(3, 10, 2, 1.0, 5).generate().unwrap();
        assert_eq!(a.train_records, b.train_records);
    }

    #[test]
    fn toml_round_trip() {
        let text = "classes = 4\nn_per_class = 50\ndim = 2\nstddev = 0.5\nseed = 3\ncenters = [[0,0],[1,1],[2,2],[3,3]]\n";
        let cfg: SyntheticConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.resolved_centers().unwrap()[3], vec![3.0, 3.0]);
        let back: SyntheticConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(toml::from_str::<SyntheticConfig>("classes=1\nn_per_class=1\ndim=1\nstddev=1\nseed=1\nbogus=2").is_err());
    }
}
