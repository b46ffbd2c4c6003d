use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque sample identifier, unique across train, eval and mixed-in
/// foreign records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// First id handed to records imported from a foreign dataset.
pub const FOREIGN_ID_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    InDistribution,
    Foreign(String),
}

impl Origin {
    pub fn is_foreign(&self) -> bool {
        matches!(self, Origin::Foreign(_))
    }
}

/// Layout of a feature vector. Images are stored channel-major (C, H, W).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureShape {
    Flat { dim: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl FeatureShape {
    pub fn dim(&self) -> usize {
        match *self {
            FeatureShape::Flat { dim } => dim,
            FeatureShape::Image { channels, height, width } => channels * height * width,
        }
    }
}

impl fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FeatureShape::Flat { dim } => write!(f, "[{dim}]"),
            FeatureShape::Image { channels, height, width } => write!(f, "[{channels}x{height}x{width}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: SampleId,
    pub features: Vec<f32>,
    pub true_label: Option<usize>,
    pub origin: Origin,
}

impl SampleRecord {
    pub fn labeled(id: u64, features: Vec<f32>, label: usize) -> Self {
        SampleRecord { id: SampleId(id), features, true_label: Some(label), origin: Origin::InDistribution }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub shape: FeatureShape,
    /// Coarse grouping of classes, e.g. the CIFAR-100 super-classes.
    pub superclass_map: Option<BTreeMap<usize, usize>>,
    pub train_records: Vec<SampleRecord>,
    pub eval_records: Vec<SampleRecord>,
}

impl Dataset {
    /// N, the size of the training split.
    pub fn len(&self) -> usize {
        self.train_records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_records.is_empty()
    }

    /// Checks the record-level invariants: consistent dimension, labels in
    /// range, foreign records unlabeled, disjoint splits, full superclass
    /// coverage.
    pub fn validate(&self) -> Result<()> {
        let dim = self.shape.dim();
        let mut seen = HashSet::with_capacity(self.train_records.len());
        for r in &self.train_records {
            seen.insert(r.id);
        }
        if seen.len() != self.train_records.len() {
            return Err(Error::format("dataset", "duplicate ids in training split"));
        }
        for r in self.train_records.iter().chain(&self.eval_records) {
            if r.features.len() != dim {
                return Err(Error::shape(self.shape, format!("[{}]", r.features.len())));
            }
            match (&r.origin, r.true_label) {
                (Origin::Foreign(_), Some(_)) => {
                    return Err(Error::Contract(format!("foreign record {} carries a label", r.id)))
                }
                (_, Some(label)) if label >= self.num_classes => {
                    return Err(Error::LabelRange { label, num_classes: self.num_classes })
                }
                _ => {}
            }
        }
        if let Some(r) = self.eval_records.iter().find(|r| seen.contains(&r.id)) {
            return Err(Error::format("dataset", format!("id {} appears in both splits", r.id)));
        }
        if let Some(map) = &self.superclass_map {
            if let Some(c) = (0..self.num_classes).find(|c| !map.contains_key(c)) {
                return Err(Error::format("dataset", format!("superclass map misses class {c}")));
            }
        }
        Ok(())
    }

    pub fn superclass_groups(&self) -> Option<BTreeMap<usize, Vec<usize>>> {
        self.superclass_map.as_ref().map(|m| groups_from_map(m))
    }
}

/// Inverts a class→superclass map into superclass→classes.
pub fn groups_from_map(map: &BTreeMap<usize, usize>) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&class, &sup) in map {
        groups.entry(sup).or_default().push(class);
    }
    groups
}

/// Builds a class→superclass map from explicit class groups.
pub fn map_from_groups(groups: &[Vec<usize>]) -> BTreeMap<usize, usize> {
    groups
        .iter()
        .enumerate()
        .flat_map(|(sup, classes)| classes.iter().map(move |&c| (c, sup)))
        .collect()
}
