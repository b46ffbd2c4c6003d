use rand::seq::index;

use super::SelectionResult;
use crate::datapool::SampleId;
use crate::error::{Error, Result};
use crate::seed;

/// Uniform draw of `budget` ids without replacement, in draw order.
pub fn random_select(ids: &[SampleId], budget: usize, seed: u64) -> Result<SelectionResult> {
    if budget > ids.len() {
        return Err(Error::Budget(format!("budget {budget} exceeds the pool of {}", ids.len())));
    }
    let mut rng = seed::stream(seed, "random-select", 0);
    let selected_ids = index::sample(&mut rng, ids.len(), budget).into_iter().map(|i| ids[i]).collect();
    Ok(SelectionResult { selected_ids, ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: u64) -> Vec<SampleId> {
        (0..n).map(SampleId).collect()
    }

    #[test]
    fn exhaustive_and_reproducible() {
        let mut all = random_select(&pool(7), 7, 3).unwrap().selected_ids;
        all.sort();
        assert_eq!(all, pool(7));
        assert_eq!(random_select(&pool(50), 5, 9).unwrap(), random_select(&pool(50), 5, 9).unwrap());
        assert!(matches!(random_select(&pool(3), 4, 0), Err(Error::Budget(_))));
    }

    #[test]
    fn single_draws_are_uniform() {
        let ids = pool(10);
        let mut counts = [0usize; 10];
        for trial in 0..10_000u64 {
            counts[random_select(&ids, 1, trial).unwrap().selected_ids[0].0 as usize] += 1;
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
        // 9 degrees of freedom, 0.999 quantile
        assert!(chi2 < 27.88, "chi2 {chi2}, counts {counts:?}");
        assert!(counts.iter().all(|&c| (850..=1150).contains(&c)), "{counts:?}");
    }
}
