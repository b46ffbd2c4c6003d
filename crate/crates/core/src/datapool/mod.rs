//! Datasets, the labeled/unlabeled pool partition and its persistence.

pub mod adapt;
pub mod checkpoint;
pub mod cifar;
pub mod idx;
mod load;
mod pool;
mod record;
pub mod synthetic;

pub use checkpoint::PoolCheckpoint;
pub use cifar::CifarVariant;
pub use load::{load_dataset, read_idx_pair, DataFormat};
pub use pool::{make_biased_pool, mix_ood, split_initial, Corpus, PoolState};
pub use record::{groups_from_map, map_from_groups, Dataset, FeatureShape, Origin, SampleId, SampleRecord, FOREIGN_ID_BASE};
pub use synthetic::{write_blobs, SyntheticConfig};
