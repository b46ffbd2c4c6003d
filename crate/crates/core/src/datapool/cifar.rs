//! CIFAR binary batches: each record is the label byte(s) followed by
//! 3072 channel-major pixel bytes (32x32x3).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarVariant {
    /// One label byte per record.
    Cifar10,
    /// Coarse (super-class) byte then fine label byte.
    Cifar100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CifarBatch {
    pub labels: Vec<usize>,
    pub pixels: Vec<f32>,
    /// fine→coarse pairs observed in the batch (CIFAR-100 only).
    pub superclasses: BTreeMap<usize, usize>,
}

pub fn parse_batch(bytes: &[u8], variant: CifarVariant) -> Result<CifarBatch> {
    let record = variant.label_bytes() + PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::format(
            "cifar_binary",
            format!("{} bytes is not a whole number of {record}-byte records", bytes.len()),
        ));
    }
    let num_classes = variant.num_classes();
    let mut batch = CifarBatch {
        labels: Vec::with_capacity(bytes.len() / record),
        pixels: Vec::with_capacity(bytes.len() / record * PIXELS),
        superclasses: BTreeMap::new(),
    };
    for chunk in bytes.chunks_exact(record) {
        let (head, px) = chunk.split_at(variant.label_bytes());
        let label = *head.last().expect("label byte") as usize;
        if label >= num_classes {
            return Err(Error::LabelRange { label, num_classes });
        }
        if variant == CifarVariant::Cifar100 {
            batch.superclasses.insert(label, head[0] as usize);
        }
        batch.labels.push(label);
        batch.pixels.extend(px.iter().map(|&b| b as f32 / 255.0));
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(128u8, PIXELS));
        r
    }

    #[test]
    fn parses_records() {
        let mut bytes = record(3);
        bytes.extend(record(9));
        let b = parse_batch(&bytes, CifarVariant::Cifar10).unwrap();
        assert_eq!(b.labels, vec![3, 9]);
        assert_eq!(b.pixels.len(), 2 * PIXELS);
    }

    #[test]
    fn corrupted_label_byte_is_range_error() {
        let mut bytes = record(3);
        bytes.extend(record(10));
        assert!(matches!(
            parse_batch(&bytes, CifarVariant::Cifar10),
            Err(Error::LabelRange { label: 10, num_classes: 10 })
        ));
    }

    #[test]
    fn partial_record_is_format_error() {
        let bytes = record(1);
        assert!(matches!(parse_batch(&bytes[..100], CifarVariant::Cifar10), Err(Error::Format { .. })));
    }

    #[test]
    fn cifar100_records_superclasses() {
        let mut bytes = vec![4u8, 72];
        bytes.extend(std::iter::repeat_n(0u8, PIXELS));
        let b = parse_batch(&bytes, CifarVariant::Cifar100).unwrap();
        assert_eq!(b.labels, vec![72]);
        assert_eq!(b.superclasses[&72], 4);
    }
}
