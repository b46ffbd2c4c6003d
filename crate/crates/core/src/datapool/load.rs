use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use super::cifar::{self, CifarVariant};
use super::idx;
use super::record::{Dataset, FeatureShape, SampleRecord};
use super::synthetic::SyntheticConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataFormat {
    /// Directory holding `train-*` and `t10k-*` IDX files, optionally gzipped.
    Idx,
    /// A directory of CIFAR batches or a single batch file.
    CifarBinary { variant: CifarVariant },
    /// A TOML generator config.
    SyntheticBlobs,
}

/// Loads a dataset and checks its invariants.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let dataset = match format {
        DataFormat::Idx => load_idx_dir(path)?,
        DataFormat::CifarBinary { variant } => load_cifar(path, variant)?,
        DataFormat::SyntheticBlobs => SyntheticConfig::from_path(path)?.generate()?,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    if path.exists() {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        return Ok(if path.extension().is_some_and(|e| e == "gz") {
            Box::new(GzDecoder::new(BufReader::new(file)))
        } else {
            Box::new(BufReader::new(file))
        });
    }
    let mut gz = path.as_os_str().to_owned();
    gz.push(".gz");
    let gz = PathBuf::from(gz);
    let file = File::open(&gz).map_err(|e| Error::io(path, e))?;
    Ok(Box::new(GzDecoder::new(BufReader::new(file))))
}

/// Reads one IDX image/label pair into records with ids starting at `first_id`.
pub fn read_idx_pair(images: &Path, labels: &Path, num_classes: usize, first_id: u64) -> Result<(FeatureShape, Vec<SampleRecord>)> {
    let imgs = idx::read_images(open_maybe_gz(images)?)?;
    let labels = idx::read_labels(open_maybe_gz(labels)?)?;
    if labels.len() != imgs.count {
        return Err(Error::format("idx", format!("{} images but {} labels", imgs.count, labels.len())));
    }
    let dim = imgs.rows * imgs.cols;
    let records = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let label = label as usize;
            if label >= num_classes {
                return Err(Error::LabelRange { label, num_classes });
            }
            Ok(SampleRecord::labeled(first_id + i as u64, imgs.pixels[i * dim..(i + 1) * dim].to_vec(), label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((FeatureShape::Image { channels: 1, height: imgs.rows, width: imgs.cols }, records))
}

fn load_idx_dir(dir: &Path) -> Result<Dataset> {
    const NUM_CLASSES: usize = 10;
    let (shape, train) = read_idx_pair(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        NUM_CLASSES,
        0,
    )?;
    let eval_images = dir.join("t10k-images-idx3-ubyte");
    let eval = if eval_images.exists() || dir.join("t10k-images-idx3-ubyte.gz").exists() {
        let (eval_shape, eval) = read_idx_pair(&eval_images, &dir.join("t10k-labels-idx1-ubyte"), NUM_CLASSES, train.len() as u64)?;
        if eval_shape != shape {
            return Err(Error::shape(shape, eval_shape));
        }
        eval
    } else {
        Vec::new()
    };
    Ok(Dataset {
        name: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "idx".into()),
        num_classes: NUM_CLASSES,
        shape,
        superclass_map: None,
        train_records: train,
        eval_records: eval,
    })
}

fn cifar_records(path: &Path, variant: CifarVariant, first_id: u64, superclasses: &mut std::collections::BTreeMap<usize, usize>) -> Result<Vec<SampleRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let batch = cifar::parse_batch(&bytes, variant)?;
    superclasses.extend(batch.superclasses);
    Ok(batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            SampleRecord::labeled(first_id + i as u64, batch.pixels[i * cifar::PIXELS..(i + 1) * cifar::PIXELS].to_vec(), label)
        })
        .collect())
}

fn load_cifar(path: &Path, variant: CifarVariant) -> Result<Dataset> {
    let mut superclasses = Default::default();
    let (train, eval) = if path.is_dir() {
        let (train_files, test_file): (Vec<PathBuf>, PathBuf) = match variant {
            CifarVariant::Cifar10 => ((1..=5).map(|i| path.join(format!("data_batch_{i}.bin"))).collect(), path.join("test_batch.bin")),
            CifarVariant::Cifar100 => (vec![path.join("train.bin")], path.join("test.bin")),
        };
        let mut train = Vec::new();
        for f in &train_files {
            let recs = cifar_records(f, variant, train.len() as u64, &mut superclasses)?;
            train.extend(recs);
        }
        let eval = if test_file.exists() { cifar_records(&test_file, variant, train.len() as u64, &mut superclasses)? } else { Vec::new() };
        (train, eval)
    } else {
        (cifar_records(path, variant, 0, &mut superclasses)?, Vec::new())
    };
    Ok(Dataset {
        name: format!("{variant:?}").to_lowercase(),
        num_classes: variant.num_classes(),
        shape: FeatureShape::Image { channels: 3, height: 32, width: 32 },
        superclass_map: (variant == CifarVariant::Cifar100 && superclasses.len() == variant.num_classes()).then_some(superclasses),
        train_records: train,
        eval_records: eval,
    })
}
