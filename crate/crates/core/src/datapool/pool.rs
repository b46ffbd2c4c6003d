use std::collections::{BTreeMap, BTreeSet, HashMap};

use indexmap::IndexSet;
use rand::seq::index;

use super::adapt::adapt_features;
use super::record::{Dataset, Origin, SampleId, SampleRecord, FOREIGN_ID_BASE};
use crate::error::{Error, Result};
use crate::seed;

/// Partition of the training records into the labeled pool L^t and the
/// unlabeled pool U^t.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolState {
    pub(crate) labeled: IndexSet<SampleId>,
    pub(crate) unlabeled: IndexSet<SampleId>,
    pub(crate) oracle_labels: BTreeMap<SampleId, usize>,
    pub(crate) stage: usize,
    pub(crate) discarded_ood_count: usize,
    pub(crate) initial_labeled: usize,
}

impl PoolState {
    /// Builds a pool from explicit id lists. Labels must cover every
    /// labeled id.
    pub fn from_parts(
        labeled: impl IntoIterator<Item = SampleId>,
        unlabeled: impl IntoIterator<Item = SampleId>,
        oracle_labels: BTreeMap<SampleId, usize>,
    ) -> Result<Self> {
        let labeled: IndexSet<SampleId> = labeled.into_iter().collect();
        let unlabeled: IndexSet<SampleId> = unlabeled.into_iter().collect();
        let pool = PoolState {
            initial_labeled: labeled.len(),
            labeled,
            unlabeled,
            oracle_labels,
            stage: 0,
            discarded_ood_count: 0,
        };
        pool.check_invariants()?;
        Ok(pool)
    }

    pub fn labeled_ids(&self) -> &IndexSet<SampleId> {
        &self.labeled
    }

    pub fn unlabeled_ids(&self) -> &IndexSet<SampleId> {
        &self.unlabeled
    }

    pub fn oracle_labels(&self) -> &BTreeMap<SampleId, usize> {
        &self.oracle_labels
    }

    pub fn label_of(&self, id: SampleId) -> Option<usize> {
        self.oracle_labels.get(&id).copied()
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn discarded_ood_count(&self) -> usize {
        self.discarded_ood_count
    }

    /// |L^0|, kept so promotions can be audited against the current size.
    pub fn initial_labeled(&self) -> usize {
        self.initial_labeled
    }

    pub fn total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn check_invariants(&self) -> Result<()> {
        if let Some(&id) = self.labeled.iter().find(|id| self.unlabeled.contains(*id)) {
            return Err(Error::PoolMembership { id, reason: "is in both pools" });
        }
        if let Some(&id) = self.labeled.iter().find(|id| !self.oracle_labels.contains_key(*id)) {
            return Err(Error::PoolMembership { id, reason: "is labeled without an oracle label" });
        }
        if self.oracle_labels.len() != self.labeled.len() {
            return Err(Error::Contract("oracle labels exist for ids outside the labeled pool".into()));
        }
        Ok(())
    }

    /// Moves annotated ids from U to L and advances the stage counter.
    /// The whole batch is validated before anything moves.
    pub fn promote(&mut self, annotated: &[(SampleId, usize)]) -> Result<()> {
        let mut batch = BTreeSet::new();
        for &(id, _) in annotated {
            if self.labeled.contains(&id) {
                return Err(Error::PoolMembership { id, reason: "is already labeled" });
            }
            if !self.unlabeled.contains(&id) {
                return Err(Error::PoolMembership { id, reason: "is not in the unlabeled pool" });
            }
            if !batch.insert(id) {
                return Err(Error::PoolMembership { id, reason: "appears twice in one promotion" });
            }
        }
        for &(id, label) in annotated {
            self.unlabeled.shift_remove(&id);
            self.labeled.insert(id);
            self.oracle_labels.insert(id, label);
        }
        self.stage += 1;
        Ok(())
    }

    /// Counts oracle rejections of foreign samples. The samples themselves
    /// never leave U.
    pub fn record_rejections(&mut self, count: usize) {
        self.discarded_ood_count += count;
    }
}

/// Draws L^0 uniformly at random from the training split.
pub fn split_initial(dataset: &Dataset, m: usize, seed: u64) -> Result<PoolState> {
    make_biased_pool(dataset, &BTreeSet::new(), m, seed)
}

/// Draws L^0 only from classes outside `excluded`; U^0 keeps everything
/// else, including every excluded-class record.
pub fn make_biased_pool(dataset: &Dataset, excluded: &BTreeSet<usize>, m: usize, seed: u64) -> Result<PoolState> {
    let n = dataset.len();
    if m == 0 || m >= n {
        return Err(Error::Budget(format!("initial pool size {m} must be in 1..{n}")));
    }
    if excluded.len() >= dataset.num_classes {
        return Err(Error::Budget(format!("cannot exclude {} of {} classes", excluded.len(), dataset.num_classes)));
    }
    let eligible: Vec<usize> = dataset
        .train_records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.true_label.is_some_and(|y| !excluded.contains(&y)))
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < m {
        return Err(Error::Budget(format!("only {} eligible records for an initial pool of {m}", eligible.len())));
    }
    let mut rng = seed::stream(seed, "split", 0);
    let mut chosen: Vec<usize> = index::sample(&mut rng, eligible.len(), m).into_iter().map(|i| eligible[i]).collect();
    chosen.sort_unstable();
    let chosen_set: BTreeSet<usize> = chosen.iter().copied().collect();

    let mut labeled = IndexSet::with_capacity(m);
    let mut oracle_labels = BTreeMap::new();
    for &i in &chosen {
        let r = &dataset.train_records[i];
        labeled.insert(r.id);
        oracle_labels.insert(r.id, r.true_label.expect("eligible records are labeled"));
    }
    let unlabeled = dataset
        .train_records
        .iter()
        .enumerate()
        .filter(|(i, _)| !chosen_set.contains(i))
        .map(|(_, r)| r.id)
        .collect();
    Ok(PoolState { labeled, unlabeled, oracle_labels, stage: 0, discarded_ood_count: 0, initial_labeled: m })
}

/// Adds ⌊fraction·N⌋ shape-adapted foreign records to U. Returns the new
/// pool and the adapted records (tagged `Origin::Foreign`, unlabeled).
pub fn mix_ood(
    pool: &PoolState,
    in_dataset: &Dataset,
    foreign: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(PoolState, Vec<SampleRecord>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("OOD fraction {fraction} must lie in (0, 1)")));
    }
    let count = (fraction * in_dataset.len() as f64).floor() as usize;
    let mut next = pool.clone();
    if count == 0 {
        return Ok((next, Vec::new()));
    }
    if foreign.train_records.len() < count {
        return Err(Error::Budget(format!(
            "foreign dataset {} has {} records, {count} requested",
            foreign.name,
            foreign.train_records.len()
        )));
    }
    let base = pool
        .labeled
        .iter()
        .chain(&pool.unlabeled)
        .filter(|id| id.0 >= FOREIGN_ID_BASE)
        .map(|id| id.0 + 1)
        .max()
        .unwrap_or(FOREIGN_ID_BASE);
    let mut rng = seed::stream(seed, "mix_ood", 0);
    let mut picks: Vec<usize> = index::sample(&mut rng, foreign.train_records.len(), count).into_vec();
    picks.sort_unstable();
    let mut records = Vec::with_capacity(count);
    for (k, i) in picks.into_iter().enumerate() {
        let features = adapt_features(&foreign.train_records[i].features, foreign.shape, in_dataset.shape)?;
        if features.len() != in_dataset.shape.dim() {
            return Err(Error::shape(in_dataset.shape, format!("[{}]", features.len())));
        }
        let id = SampleId(base + k as u64);
        next.unlabeled.insert(id);
        records.push(SampleRecord { id, features, true_label: None, origin: Origin::Foreign(foreign.name.clone()) });
    }
    Ok((next, records))
}

/// Id-addressable view over every record a pool can reference.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<SampleRecord>,
    index: HashMap<SampleId, usize>,
    dim: usize,
}

impl Corpus {
    pub fn new(records: impl IntoIterator<Item = SampleRecord>) -> Result<Self> {
        let mut corpus = Corpus::default();
        corpus.extend(records)?;
        Ok(corpus)
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = SampleRecord>) -> Result<()> {
        for r in records {
            if self.records.is_empty() {
                self.dim = r.features.len();
            } else if r.features.len() != self.dim {
                return Err(Error::shape(format!("[{}]", self.dim), format!("[{}]", r.features.len())));
            }
            if self.index.insert(r.id, self.records.len()).is_some() {
                return Err(Error::PoolMembership { id: r.id, reason: "is already in the corpus" });
            }
            self.records.push(r);
        }
        Ok(())
    }

    pub fn get(&self, id: SampleId) -> Result<&SampleRecord> {
        self.index
            .get(&id)
            .map(|&i| &self.records[i])
            .ok_or(Error::PoolMembership { id, reason: "is unknown" })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn foreign_records(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.origin.is_foreign())
    }
}
