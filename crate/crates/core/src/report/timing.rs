use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alloop::mean_std;
use crate::error::{Error, Result};
use crate::sampling::{select, Batch, SamplingParams, Strategy};
use crate::vnn::VnnModel;

pub const MIN_REPETITIONS: usize = 3;

/// Wall-clock cost of one full scoring + selection pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub strategy: Strategy,
    pub pool_size: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub repetitions: usize,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Times `repetitions` selection passes over `unlabeled` after one
/// untimed warm-up pass.
pub fn time_sampling(
    strategy: Strategy,
    model: &VnnModel,
    unlabeled: &Batch,
    labeled: &Batch,
    budget: usize,
    params: &SamplingParams,
    repetitions: usize,
) -> Result<Timing> {
    Ok(time_strategies(&[strategy], model, unlabeled, labeled, budget, params, repetitions)?.remove(0))
}

/// Like [`time_sampling`] for several strategies at once. Repetitions are
/// interleaved round-robin, rotating the order each round, so slow drift in
/// machine load falls on every strategy alike.
pub fn time_strategies(
    strategies: &[Strategy],
    model: &VnnModel,
    unlabeled: &Batch,
    labeled: &Batch,
    budget: usize,
    params: &SamplingParams,
    repetitions: usize,
) -> Result<Vec<Timing>> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::Config(format!("timing needs at least {MIN_REPETITIONS} repetitions, got {repetitions}")));
    }
    if unlabeled.is_empty() {
        return Err(Error::EmptyPool);
    }
    for &s in strategies {
        select(s, model, unlabeled, labeled, budget, params, 0)?;
    }
    let n = strategies.len();
    let mut samples = vec![Vec::with_capacity(repetitions); n];
    for rep in 0..repetitions {
        for k in 0..n {
            let i = (rep + k) % n;
            let started = Instant::now();
            let result = select(strategies[i], model, unlabeled, labeled, budget, params, rep as u64)?;
            samples[i].push(started.elapsed().as_secs_f64());
            std::hint::black_box(result);
        }
    }
    Ok(strategies
        .iter()
        .zip(samples)
        .map(|(&strategy, samples)| {
            let (mean_seconds, std_seconds) = mean_std(&samples);
            Timing { strategy, pool_size: unlabeled.len(), mean_seconds, std_seconds, repetitions, samples }
        })
        .collect())
}

pub fn write_timing_csv<W: Write>(out: W, timings: &[Timing]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in timings {
        w.serialize(t)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns() {
        let t = Timing { strategy: Strategy::Weibull, pool_size: 10, mean_seconds: 0.5, std_seconds: 0.1, repetitions: 3, samples: vec![] };
        let mut buf = Vec::new();
        write_timing_csv(&mut buf, &[t]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "strategy,pool_size,mean_seconds,std_seconds,repetitions\nweibull,10,0.5,0.1,3\n");
    }
}
