use std::collections::HashSet;
use std::io::Write;

use serde::Serialize;

use super::{SelectionResult, Strategy};
use crate::datapool::SampleId;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub stage: usize,
    pub sample_id: u64,
    pub strategy: Strategy,
    pub score: Option<f64>,
    pub selected: bool,
    pub rejected_ood: bool,
}

/// One row per scored id (or per selected id when the strategy has no
/// scores), ascending by id.
pub fn selection_rows(stage: usize, strategy: Strategy, result: &SelectionResult) -> Vec<SelectionRow> {
    let selected: HashSet<SampleId> = result.selected_ids.iter().copied().collect();
    let rejected: HashSet<SampleId> = result.rejected_ood_ids.iter().copied().collect();
    let mut ids: Vec<SampleId> = result.scores.keys().copied().chain(selected.iter().copied()).collect();
    ids.sort();
    ids.dedup();
    ids.into_iter()
        .map(|id| SelectionRow {
            stage,
            sample_id: id.0,
            strategy,
            score: result.scores.get(&id).copied(),
            selected: selected.contains(&id),
            rejected_ood: rejected.contains(&id),
        })
        .collect()
}

pub fn write_selection_csv<W: Write>(out: W, rows: &[SelectionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let result = SelectionResult {
            selected_ids: vec![SampleId(2)],
            scores: [(SampleId(2), 0.5), (SampleId(1), 0.99)].into(),
            rejected_ood_ids: vec![SampleId(1)],
            shortfall: 0,
        };
        let mut buf = Vec::new();
        write_selection_csv(&mut buf, &selection_rows(3, Strategy::Weibull, &result)).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "stage,sample_id,strategy,score,selected,rejected_ood\n3,1,weibull,0.99,false,true\n3,2,weibull,0.5,true,false\n"
        );
    }
}
