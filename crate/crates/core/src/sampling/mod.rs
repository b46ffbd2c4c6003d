//! Acquisition functions: least-confidence uncertainty, Weibull open-set
//! sampling and a uniform random baseline.

mod export;
mod random;
mod uncertainty;
pub mod weibull;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datapool::{Corpus, PoolState, SampleId};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::vnn::{to_matrix, VnnModel};

pub use export::{selection_rows, write_selection_csv, SelectionRow};
pub use random::random_select;
pub use uncertainty::{select_uncertain, uncertainty_scores, UncertaintyScore};
pub use weibull::{
    class_latent_means, fit_class_models, fit_weibull, outlier_probability, select_weibull, weibull_cdf, ClassMean, WeibullClassModel,
    WeibullFit,
};

pub const DEFAULT_TAIL_FRACTION: f64 = 0.25;
pub const DEFAULT_OOD_THRESHOLD: f64 = 0.95;

/// Feature rows gathered from a corpus, with oracle labels when the rows
/// come from the labeled side of the pool.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<SampleId>,
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn unlabeled(corpus: &Corpus, ids: &[SampleId]) -> Result<Self> {
        let rows = ids.iter().map(|&id| corpus.get(id).map(|r| r.features.as_slice())).collect::<Result<Vec<_>>>()?;
        Ok(Batch { ids: ids.to_vec(), x: to_matrix(rows.into_iter(), corpus.dim()), labels: Vec::new() })
    }

    /// The labeled side of `pool`, labels as the oracle gave them.
    pub fn labeled(corpus: &Corpus, pool: &PoolState) -> Result<Self> {
        let ids: Vec<SampleId> = pool.labeled_ids().iter().copied().collect();
        let mut batch = Self::unlabeled(corpus, &ids)?;
        batch.labels = ids
            .iter()
            .map(|&id| pool.label_of(id).ok_or(Error::PoolMembership { id, reason: "labeled sample has no oracle label" }))
            .collect::<Result<_>>()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionResult {
    pub selected_ids: Vec<SampleId>,
    pub scores: BTreeMap<SampleId, f64>,
    pub rejected_ood_ids: Vec<SampleId>,
    /// How many of the requested budget could not be filled.
    pub shortfall: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uncertainty,
    Weibull,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Uncertainty, Strategy::Weibull, Strategy::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Uncertainty => "uncertainty",
            Strategy::Weibull => "weibull",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}; expected uncertainty, weibull or random")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingParams {
    pub tail_fraction: f64,
    pub reject_threshold: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { tail_fraction: DEFAULT_TAIL_FRACTION, reject_threshold: 1.0 }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::Config(format!("tail_fraction {} must lie in (0, 1]", self.tail_fraction)));
        }
        if !(self.reject_threshold > 0.0 && self.reject_threshold <= 1.0) {
            return Err(Error::Config(format!("reject_threshold {} must lie in (0, 1]", self.reject_threshold)));
        }
        Ok(())
    }
}

/// One selection pass of `strategy` over `unlabeled`.
pub fn select(
    strategy: Strategy,
    model: &VnnModel,
    unlabeled: &Batch,
    labeled: &Batch,
    budget: usize,
    params: &SamplingParams,
    seed: u64,
) -> Result<SelectionResult> {
    match strategy {
        Strategy::Uncertainty => select_uncertain(&uncertainty_scores(model, unlabeled)?, budget),
        Strategy::Weibull => select_weibull(model, unlabeled, labeled, budget, params.tail_fraction, params.reject_threshold),
        Strategy::Random => random_select(&unlabeled.ids, budget, seed),
    }
}
