use ndarray::Axis;

use super::{Batch, SelectionResult};
use crate::datapool::SampleId;
use crate::error::{Error, Result};
use crate::vnn::VnnModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyScore {
    pub sample_id: SampleId,
    pub max_class_probability: f64,
}

/// Largest class probability at the posterior mean, per record.
pub fn uncertainty_scores(model: &VnnModel, unlabeled: &Batch) -> Result<Vec<UncertaintyScore>> {
    if unlabeled.is_empty() {
        return Err(Error::EmptyPool);
    }
    let (_, probs) = model.score(&unlabeled.x)?;
    Ok(unlabeled
        .ids
        .iter()
        .zip(probs.axis_iter(Axis(0)))
        .map(|(&sample_id, p)| UncertaintyScore { sample_id, max_class_probability: p.iter().copied().fold(f64::MIN, f64::max) })
        .collect())
}

/// The `budget` least confident samples, ties broken by ascending id.
pub fn select_uncertain(scores: &[UncertaintyScore], budget: usize) -> Result<SelectionResult> {
    if budget > scores.len() {
        return Err(Error::Budget(format!("budget {budget} exceeds the {} scored samples", scores.len())));
    }
    let mut order: Vec<&UncertaintyScore> = scores.iter().collect();
    order.sort_by(|a, b| a.max_class_probability.total_cmp(&b.max_class_probability).then(a.sample_id.cmp(&b.sample_id)));
    Ok(SelectionResult {
        selected_ids: order[..budget].iter().map(|s| s.sample_id).collect(),
        scores: scores.iter().map(|s| (s.sample_id, s.max_class_probability)).collect(),
        rejected_ood_ids: Vec::new(),
        shortfall: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> Vec<UncertaintyScore> {
        v.iter().enumerate().map(|(i, &p)| UncertaintyScore { sample_id: SampleId(i as u64), max_class_probability: p }).collect()
    }

    #[test]
    fn picks_lowest_scores() {
        let r = select_uncertain(&scores(&[0.3, 0.9, 0.5]), 2).unwrap();
        assert_eq!(r.selected_ids, vec![SampleId(0), SampleId(2)]);
        assert_eq!(r.scores.len(), 3);
    }

    #[test]
    fn ties_follow_id_order() {
        let mut s = scores(&[0.5; 4]);
        s.reverse();
        let r = select_uncertain(&s, 2).unwrap();
        assert_eq!(r.selected_ids, vec![SampleId(0), SampleId(1)]);
    }

    #[test]
    fn whole_pool_and_over_budget() {
        assert_eq!(select_uncertain(&scores(&[0.2, 0.1]), 2).unwrap().selected_ids.len(), 2);
        assert!(matches!(select_uncertain(&scores(&[0.2]), 2), Err(Error::Budget(_))));
    }
}
