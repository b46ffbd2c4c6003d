use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datapool::{Corpus, Origin, SampleId};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleOutcome {
    Label(usize),
    RejectOod,
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub sample_id: SampleId,
    pub outcome: OracleOutcome,
}

impl OracleResponse {
    pub fn label(&self) -> Option<usize> {
        match self.outcome {
            OracleOutcome::Label(l) => Some(l),
            _ => None,
        }
    }
}

/// Label corruption confined to superclasses.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub noise_rate: f64,
    pub superclass_map: BTreeMap<usize, usize>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!("noise_rate {} must lie in [0, 1]", self.noise_rate)));
        }
        Ok(())
    }
}

fn in_distribution_label(corpus: &Corpus, id: SampleId) -> Result<usize> {
    let record = corpus.get(id)?;
    match (&record.origin, record.true_label) {
        (Origin::InDistribution, Some(label)) => Ok(label),
        (Origin::Foreign(_), _) => Err(Error::Contract(format!("sample {id} is foreign; route it through ood_response"))),
        (Origin::InDistribution, None) => Err(Error::PoolMembership { id, reason: "has no ground-truth label" }),
    }
}

pub fn clean_label(corpus: &Corpus, id: SampleId) -> Result<OracleResponse> {
    Ok(OracleResponse { sample_id: id, outcome: OracleOutcome::Label(in_distribution_label(corpus, id)?) })
}

/// With probability `noise_rate` a different class from the same
/// superclass, drawn uniformly. The draw depends only on (seed, id), so a
/// sample answers the same way in every stage.
pub fn noisy_label(corpus: &Corpus, id: SampleId, spec: &NoiseSpec) -> Result<OracleResponse> {
    let truth = in_distribution_label(corpus, id)?;
    let respond = |label| Ok(OracleResponse { sample_id: id, outcome: OracleOutcome::Label(label) });
    if seed::unit_hash(spec.seed, &[0x6e6f_6973_65, id.0]) >= spec.noise_rate {
        return respond(truth);
    }
    let group = spec
        .superclass_map
        .get(&truth)
        .ok_or_else(|| Error::Config(format!("class {truth} has no superclass in the noise map")))?;
    let siblings: Vec<usize> = spec.superclass_map.iter().filter(|&(&c, g)| g == group && c != truth).map(|(&c, _)| c).collect();
    if siblings.is_empty() {
        tracing::debug!(%id, class = truth, "corruption drawn for a singleton superclass; keeping the true label");
        return respond(truth);
    }
    let pick = (seed::unit_hash(spec.seed, &[0x7069_636b, id.0]) * siblings.len() as f64) as usize;
    respond(siblings[pick.min(siblings.len() - 1)])
}

pub fn ood_response(corpus: &Corpus, id: SampleId) -> Result<OracleResponse> {
    match corpus.get(id)?.origin {
        Origin::Foreign(_) => Ok(OracleResponse { sample_id: id, outcome: OracleOutcome::RejectOod }),
        Origin::InDistribution => Err(Error::Contract(format!("sample {id} is in-distribution and cannot be rejected as OOD"))),
    }
}

/// A reproducible oracle. Foreign samples are always rejected; in-distribution
/// samples get their true label, or a superclass-corrupted one under noise.
#[derive(Debug, Clone, PartialEq)]
pub enum SimulatedOracle {
    Clean,
    Noisy(NoiseSpec),
}

impl SimulatedOracle {
    pub fn answer_one(&self, corpus: &Corpus, id: SampleId) -> Result<OracleResponse> {
        if matches!(corpus.get(id)?.origin, Origin::Foreign(_)) {
            return ood_response(corpus, id);
        }
        match self {
            SimulatedOracle::Clean => clean_label(corpus, id),
            SimulatedOracle::Noisy(spec) => noisy_label(corpus, id, spec),
        }
    }

    /// Responses in query order.
    pub fn answer(&self, corpus: &Corpus, ids: &[SampleId]) -> Result<Vec<OracleResponse>> {
        ids.iter().map(|&id| self.answer_one(corpus, id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapool::{SampleRecord, FOREIGN_ID_BASE};

    fn corpus(n: u64, classes: usize) -> Corpus {
        let mut records: Vec<SampleRecord> = (0..n).map(|i| SampleRecord::labeled(i, vec![0.0], i as usize % classes)).collect();
        records.push(SampleRecord { id: SampleId(FOREIGN_ID_BASE), features: vec![1.0], true_label: None, origin: Origin::Foreign("blob".into()) });
        Corpus::new(records).unwrap()
    }

    fn pairs() -> BTreeMap<usize, usize> {
        [(0, 0), (6, 0), (1, 1), (7, 1), (4, 2), (9, 2), (2, 3), (3, 3), (5, 3), (8, 3)].into()
    }

    #[test]
    fn clean_answers_truth_in_order() {
        let c = corpus(100, 10);
        assert_eq!(clean_label(&c, SampleId(3)).unwrap().outcome, OracleOutcome::Label(3));
        assert!(matches!(clean_label(&c, SampleId(500)), Err(Error::PoolMembership { .. })));
        let ids: Vec<SampleId> = (0..100).rev().map(SampleId).collect();
        let out = SimulatedOracle::Clean.answer(&c, &ids).unwrap();
        assert_eq!(out.iter().map(|r| r.sample_id).collect::<Vec<_>>(), ids);
    }

    #[test]
    fn zero_noise_is_clean() {
        let c = corpus(200, 10);
        let spec = NoiseSpec { noise_rate: 0.0, superclass_map: pairs(), seed: 1 };
        for i in 0..200 {
            assert_eq!(noisy_label(&c, SampleId(i), &spec).unwrap(), clean_label(&c, SampleId(i)).unwrap());
        }
    }

    #[test]
    fn noise_rate_and_superclass_confinement() {
        let c = corpus(10_000, 10);
        let spec = NoiseSpec { noise_rate: 0.3, superclass_map: pairs(), seed: 42 };
        let mut corrupted = 0;
        for i in 0..10_000 {
            let truth = i as usize % 10;
            let got = noisy_label(&c, SampleId(i), &spec).unwrap().label().unwrap();
            if got != truth {
                corrupted += 1;
                assert_eq!(spec.superclass_map[&got], spec.superclass_map[&truth]);
            }
            assert_eq!(noisy_label(&c, SampleId(i), &spec).unwrap().label().unwrap(), got);
        }
        assert!((2850..=3150).contains(&corrupted), "{corrupted}");
    }

    #[test]
    fn singleton_superclass_keeps_truth() {
        let c = corpus(50, 2);
        let spec = NoiseSpec { noise_rate: 1.0, superclass_map: [(0, 0), (1, 1)].into(), seed: 0 };
        for i in 0..50 {
            assert_eq!(noisy_label(&c, SampleId(i), &spec).unwrap().label(), Some(i as usize % 2));
        }
    }

    #[test]
    fn foreign_samples_are_rejected() {
        let c = corpus(10, 10);
        let foreign = SampleId(FOREIGN_ID_BASE);
        assert_eq!(ood_response(&c, foreign).unwrap().outcome, OracleOutcome::RejectOod);
        assert!(matches!(ood_response(&c, SampleId(1)), Err(Error::Contract(_))));
        assert!(matches!(clean_label(&c, foreign), Err(Error::Contract(_))));
        let out = SimulatedOracle::Clean.answer(&c, &[SampleId(1), foreign]).unwrap();
        assert_eq!(out[1].outcome, OracleOutcome::RejectOod);
    }
}
