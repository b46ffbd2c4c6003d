use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::RunResult;
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::sampling::Strategy;
use crate::vnn::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStage {
    pub stage: usize,
    /// Mean labeled count over seeds, rounded.
    pub labeled_count: usize,
    pub labeled_fraction: f64,
    pub acc_mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub acc_std: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub name: String,
    pub strategy: Strategy,
    pub variant: Variant,
    pub optimizer: OptimizerKind,
    pub stages: Vec<AggregateStage>,
    /// Only one run contributed, so `acc_std` carries no information.
    pub single_run: bool,
}

impl Aggregate {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.stages.last().map(|s| s.acc_mean)
    }
}

fn without_seeds(c: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig { seeds: Vec::new(), ..c.clone() }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-stage mean and sample standard deviation of accuracy across runs
/// of one experiment.
pub fn aggregate_runs(results: &[RunResult]) -> Result<Aggregate> {
    let first = results.first().ok_or_else(|| Error::Aggregation("no runs".into()))?;
    let reference = without_seeds(&first.config);
    for r in &results[1..] {
        if without_seeds(&r.config) != reference {
            return Err(Error::Aggregation(format!("seed {} ran a different config than seed {}", r.seed, first.seed)));
        }
        if r.stages.len() != first.stages.len() {
            return Err(Error::Aggregation(format!(
                "seed {} has {} stages, seed {} has {}",
                r.seed,
                r.stages.len(),
                first.seed,
                first.stages.len()
            )));
        }
    }
    if first.pool_size == 0 {
        return Err(Error::Aggregation("empty pool".into()));
    }
    let stages = (0..first.stages.len())
        .map(|t| {
            let acc: Vec<f64> = results.iter().map(|r| r.stages[t].accuracy).collect();
            let labeled = results.iter().map(|r| r.stages[t].labeled as f64).sum::<f64>() / results.len() as f64;
            let (acc_mean, acc_std) = mean_std(&acc);
            let labeled_count = labeled.round() as usize;
            AggregateStage {
                stage: t,
                labeled_count,
                labeled_fraction: labeled_count as f64 / first.pool_size as f64,
                acc_mean,
                acc_std,
                n_seeds: results.len(),
            }
        })
        .collect();
    Ok(Aggregate {
        name: first.config.name.clone(),
        strategy: first.config.strategy,
        variant: first.config.variant,
        optimizer: first.config.train.optimizer,
        stages,
        single_run: results.len() == 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloop::run::StageRecord;
    use crate::alloop::{DataSource, DatasetSpec};
    use crate::datapool::SyntheticConfig;

    fn run(seed: u64, acc: &[f64]) -> RunResult {
        let config = ExperimentConfig::new(DatasetSpec {
            source: DataSource::synthetic(SyntheticConfig::new(2, 10, 2, 1.0, 0)),
            ..Default::default()
        })
        .for_seed(seed);
        RunResult {
            seed,
            config,
            pool_size: 1000,
            stages: acc
                .iter()
                .enumerate()
                .map(|(t, &a)| StageRecord { stage: t, labeled: 100 * (t + 1), accuracy: a, sampling_seconds: 0.0, rejected_ood: 0 })
                .collect(),
            complete: true,
        }
    }

    #[test]
    fn mean_over_five_seeds() {
        let runs: Vec<RunResult> = [0.6, 0.62, 0.58, 0.61, 0.59].iter().enumerate().map(|(s, &a)| run(s as u64, &[a])).collect();
        let agg = aggregate_runs(&runs).unwrap();
        assert!((agg.stages[0].acc_mean - 0.60).abs() < 1e-12);
        let expected_std = (0.001f64 / 4.0).sqrt();
        assert!((agg.stages[0].acc_std - expected_std).abs() < 1e-12);
        assert_eq!(agg.stages[0].n_seeds, 5);
        assert!((agg.stages[0].labeled_fraction - 0.1).abs() < 1e-12);
        assert!(!agg.single_run);
    }

    #[test]
    fn single_run_is_flagged() {
        let agg = aggregate_runs(&[run(0, &[0.5, 0.7])]).unwrap();
        assert!(agg.single_run);
        assert_eq!(agg.stages[1].acc_std, 0.0);
        assert_eq!(agg.final_accuracy(), Some(0.7));
    }

    #[test]
    fn mismatches_are_rejected() {
        assert!(matches!(aggregate_runs(&[]), Err(Error::Aggregation(_))));
        assert!(matches!(aggregate_runs(&[run(0, &[0.5]), run(1, &[0.5, 0.6])]), Err(Error::Aggregation(_))));
        let mut other = run(1, &[0.5]);
        other.config.strategy = Strategy::Random;
        assert!(matches!(aggregate_runs(&[run(0, &[0.5]), other]), Err(Error::Aggregation(_))));
    }
}
