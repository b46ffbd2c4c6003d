//! Extreme-value modeling of latent distances: per-class means over
//! correctly classified samples, a Weibull fit to the tail of the
//! distances to each mean, and the resulting outlier probability.

use std::collections::BTreeMap;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{Batch, SelectionResult};
use crate::datapool::SampleId;
use crate::error::{Error, Result};
use crate::vnn::{argmax, VnnModel};

pub const MAX_ITERATIONS: usize = 200;
pub const TOLERANCE: f64 = 1e-8;
/// Fewest distances a Weibull fit will accept.
pub const MIN_TAIL: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullFit {
    pub shape: f64,
    pub scale: f64,
    pub iterations: usize,
}

/// CDF 1 - exp(-(d/scale)^shape).
pub fn weibull_cdf(d: f64, shape: f64, scale: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    -(-(d / scale).powf(shape)).exp_m1()
}

/// Maximum-likelihood Weibull fit to the largest ⌈tail_fraction·n⌉
/// distances.
///
/// The scale is profiled out, leaving one equation in the shape k:
///
/// ```text
/// g(k) = Σ x^k ln x / Σ x^k - 1/k - mean(ln x) = 0
/// ```
///
/// solved by damped fixed-point iteration on `k ← 1 / (g(k) + 1/k)`,
/// falling back to bisection on the monotone `g` if the iteration stalls.
/// Then `scale = (mean x^k)^(1/k)`.
pub fn fit_weibull(distances: &[f64], tail_fraction: f64) -> Result<WeibullFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Config(format!("tail_fraction {tail_fraction} must lie in (0, 1]")));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::DegenerateStats("distances must be finite and non-negative".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let keep = ((tail_fraction * sorted.len() as f64).ceil() as usize).min(sorted.len());
    sorted.truncate(keep);
    sorted.retain(|&d| d > 0.0);
    fit_positive(&sorted)
}

fn fit_positive(x: &[f64]) -> Result<WeibullFit> {
    let n = x.len();
    if n < MIN_TAIL {
        return Err(Error::DegenerateStats(format!("{n} positive distances, need at least {MIN_TAIL}")));
    }
    let max = x.iter().copied().fold(f64::MIN, f64::max);
    let min = x.iter().copied().fold(f64::MAX, f64::min);
    if max - min <= 1e-12 * max {
        return Err(Error::DegenerateStats("all distances are equal".into()));
    }
    // work on x / max so powers stay in (0, 1]
    let logs: Vec<f64> = x.iter().map(|v| (v / max).ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / n as f64;
    let weighted = |k: f64| {
        let (mut s0, mut s1) = (0.0, 0.0);
        for &l in &logs {
            let w = (k * l).exp();
            s0 += w;
            s1 += w * l;
        }
        s1 / s0
    };
    let profile = |k: f64| weighted(k) - 1.0 / k - mean_log;

    let var_log = logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / n as f64;
    let mut k = (std::f64::consts::PI / (6.0 * var_log).sqrt()).clamp(1e-3, 1e3);
    let mut solved = None;
    for it in 1..=MAX_ITERATIONS {
        let denom = weighted(k) - mean_log;
        if !(denom > 0.0 && denom.is_finite()) {
            break;
        }
        let next = 0.5 * (k + 1.0 / denom);
        if (next - k).abs() <= TOLERANCE * k {
            solved = Some((next, it));
            break;
        }
        k = next;
    }
    let (shape, iterations) = match solved {
        Some(s) => s,
        None => bisect(profile)?,
    };
    let mean_pow = logs.iter().map(|l| (shape * l).exp()).sum::<f64>() / n as f64;
    let scale = max * mean_pow.powf(1.0 / shape);
    if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
        return Err(Error::Fit { iterations });
    }
    Ok(WeibullFit { shape, scale, iterations })
}

fn bisect(g: impl Fn(f64) -> f64) -> Result<(f64, usize)> {
    let (mut lo, mut hi) = (1e-4f64.ln(), 1e4f64.ln());
    if g(lo.exp()) > 0.0 || g(hi.exp()) < 0.0 {
        return Err(Error::Fit { iterations: 0 });
    }
    for it in 1..=MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if g(mid.exp()) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= TOLERANCE {
            return Ok(((0.5 * (lo + hi)).exp(), it));
        }
    }
    Err(Error::Fit { iterations: MAX_ITERATIONS })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullClassModel {
    pub class_index: usize,
    pub latent_mean: Vec<f64>,
    pub shape: f64,
    pub scale: f64,
    pub tail_size: usize,
    pub n_correct: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMean {
    pub mean: Vec<f64>,
    pub correct_ids: Vec<SampleId>,
}

fn euclidean(a: impl IntoIterator<Item = f64>, b: &[f64]) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per class, the mean posterior mean over labeled samples the model
/// classifies correctly. Classes without a correct sample are absent.
pub fn class_latent_means(model: &VnnModel, labeled: &Batch) -> Result<BTreeMap<usize, ClassMean>> {
    if labeled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (means, probs) = model.score(&labeled.x)?;
    let mut sums: BTreeMap<usize, (Vec<f64>, Vec<SampleId>)> = BTreeMap::new();
    for (i, (row, p)) in means.axis_iter(Axis(0)).zip(probs.axis_iter(Axis(0))).enumerate() {
        let label = labeled.labels[i];
        if argmax(p.iter().copied()) != label {
            continue;
        }
        let entry = sums.entry(label).or_insert_with(|| (vec![0.0; model.z_dim], Vec::new()));
        entry.0.iter_mut().zip(row.iter()).for_each(|(s, v)| *s += v);
        entry.1.push(labeled.ids[i]);
    }
    if sums.is_empty() {
        return Err(Error::DegenerateStats("no labeled sample is classified correctly".into()));
    }
    Ok(sums
        .into_iter()
        .map(|(c, (sum, ids))| {
            let n = ids.len() as f64;
            (c, ClassMean { mean: sum.into_iter().map(|s| s / n).collect(), correct_ids: ids })
        })
        .collect())
}

/// Fits one Weibull per class to the distances of its correctly classified
/// samples from the class mean. Tails shorter than `MIN_TAIL` are widened
/// to `MIN_TAIL` where the class has that many samples; classes that still
/// cannot be fitted are left out.
pub fn fit_class_models(model: &VnnModel, labeled: &Batch, tail_fraction: f64) -> Result<BTreeMap<usize, WeibullClassModel>> {
    let class_means = class_latent_means(model, labeled)?;
    let (means, _) = model.score(&labeled.x)?;
    let row_of: std::collections::HashMap<SampleId, usize> = labeled.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut models = BTreeMap::new();
    let mut last_err = None;
    for (class, cm) in class_means {
        let distances: Vec<f64> =
            cm.correct_ids.iter().map(|id| euclidean(means.row(row_of[id]).iter().copied(), &cm.mean)).collect();
        let n = distances.len();
        let tail = ((tail_fraction * n as f64).ceil() as usize).max(MIN_TAIL.min(n));
        let fraction = (tail as f64 / n as f64).min(1.0);
        match fit_weibull(&distances, fraction) {
            Ok(fit) => {
                models.insert(
                    class,
                    WeibullClassModel {
                        class_index: class,
                        latent_mean: cm.mean,
                        shape: fit.shape,
                        scale: fit.scale,
                        tail_size: tail,
                        n_correct: n,
                    },
                );
            }
            Err(e @ (Error::DegenerateStats(_) | Error::Fit { .. })) => {
                tracing::debug!(class, n, "skipping class without a usable Weibull fit: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    if models.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::DegenerateStats("no class could be modeled".into())));
    }
    Ok(models)
}

/// Minimum over classes of the Weibull CDF of the distance to each class
/// mean: the probability the sample belongs to none of the known classes.
/// Near 0 for inliers, near 1 for outliers.
pub fn outlier_probability(z: &[f64], models: &BTreeMap<usize, WeibullClassModel>) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::DegenerateStats("no class models".into()));
    }
    let mut best = f64::INFINITY;
    for m in models.values() {
        if m.latent_mean.len() != z.len() {
            return Err(Error::shape(format!("[{}]", m.latent_mean.len()), format!("[{}]", z.len())));
        }
        best = best.min(weibull_cdf(euclidean(z.iter().copied(), &m.latent_mean), m.shape, m.scale));
    }
    Ok(best)
}

/// Weibull selection: samples with outlier probability ≥ `reject_threshold`
/// are set aside as suspected out-of-distribution (a threshold of 1.0
/// disables this), and the `budget` remaining samples with the highest
/// outlier probability are selected, ties broken by ascending id.
pub fn select_weibull(
    model: &VnnModel,
    unlabeled: &Batch,
    labeled: &Batch,
    budget: usize,
    tail_fraction: f64,
    reject_threshold: f64,
) -> Result<SelectionResult> {
    if !(reject_threshold > 0.0 && reject_threshold <= 1.0) {
        return Err(Error::Config(format!("reject threshold {reject_threshold} must lie in (0, 1]")));
    }
    if unlabeled.is_empty() {
        return Err(Error::EmptyPool);
    }
    let models = fit_class_models(model, labeled, tail_fraction)?;
    let (means, _) = model.score(&unlabeled.x)?;
    let probs = means
        .axis_iter(Axis(0))
        .map(|row| outlier_probability(row.as_slice().expect("contiguous"), &models))
        .collect::<Result<Vec<f64>>>()?;
    Ok(rank_by_outlier_probability(&unlabeled.ids, &probs, budget, reject_threshold))
}

pub(crate) fn rank_by_outlier_probability(ids: &[SampleId], probs: &[f64], budget: usize, reject_threshold: f64) -> SelectionResult {
    let mut rejected = Vec::new();
    let mut kept: Vec<(SampleId, f64)> = Vec::new();
    for (&id, &p) in ids.iter().zip(probs) {
        if reject_threshold < 1.0 && p >= reject_threshold {
            rejected.push(id);
        } else {
            kept.push((id, p));
        }
    }
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let selected: Vec<SampleId> = kept.iter().take(budget).map(|(id, _)| *id).collect();
    SelectionResult {
        shortfall: budget - selected.len(),
        selected_ids: selected,
        scores: ids.iter().copied().zip(probs.iter().copied()).collect(),
        rejected_ood_ids: rejected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp1};

    use crate::seed;

    fn draws(shape: f64, scale: f64, n: usize, s: u64) -> Vec<f64> {
        let mut rng = seed::stream(s, "weibull-draws", 0);
        (0..n).map(|_| scale * (-(1.0 - rng.random::<f64>()).ln()).powf(1.0 / shape)).collect()
    }

    /// Brute-force maximum likelihood over a shrinking (k, λ) grid.
    fn grid_mle(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let sum_log: f64 = x.iter().map(|v| v.ln()).sum();
        let ll = |k: f64, l: f64| n * k.ln() - n * k * l.ln() + (k - 1.0) * sum_log - x.iter().map(|v| (v / l).powf(k)).sum::<f64>();
        let (mut k, mut l) = (1.0, 1.0);
        let (mut kw, mut lw) = (0.9, 0.9);
        for _ in 0..6 {
            let mut best = (f64::NEG_INFINITY, k, l);
            for i in 0..=30 {
                for j in 0..=30 {
                    let kk = k * (1.0 + kw * (i as f64 / 15.0 - 1.0));
                    let ll_ = l * (1.0 + lw * (j as f64 / 15.0 - 1.0));
                    let v = ll(kk, ll_);
                    if v > best.0 {
                        best = (v, kk, ll_);
                    }
                }
            }
            k = best.1;
            l = best.2;
            kw /= 5.0;
            lw /= 5.0;
        }
        (k, l)
    }

    #[test]
    fn exponential_draws_fit_unit_weibull() {
        let mut rng = seed::stream(1, "exp", 0);
        let x: Vec<f64> = (0..10_000).map(|_| Exp1.sample(&mut rng)).collect();
        let fit = fit_weibull(&x, 1.0).unwrap();
        assert!((fit.shape - 1.0).abs() < 0.05 && (fit.scale - 1.0).abs() < 0.05, "{fit:?}");
        let (k, l) = grid_mle(&x);
        assert!((fit.shape - k).abs() < 2e-3 && (fit.scale - l).abs() < 2e-3, "{fit:?} vs grid ({k}, {l})");
    }

    #[test]
    fn scale_equivariance() {
        let x = draws(1.7, 2.0, 2_000, 3);
        let a = fit_weibull(&x, 0.5).unwrap();
        let tripled: Vec<f64> = x.iter().map(|v| v * 3.0).collect();
        let b = fit_weibull(&tripled, 0.5).unwrap();
        assert!((b.shape - a.shape).abs() < 1e-3);
        assert!((b.scale / a.scale - 3.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_or_constant_is_degenerate() {
        assert!(matches!(fit_weibull(&[1.0, 2.0, 3.0, 4.0, 5.0], 1.0), Err(Error::DegenerateStats(_))));
        assert!(matches!(fit_weibull(&[2.0; 40], 1.0), Err(Error::DegenerateStats(_))));
        // 20 values with tail 0.25 keeps 5
        let x = draws(1.0, 1.0, 20, 4);
        assert!(matches!(fit_weibull(&x, 0.25), Err(Error::DegenerateStats(_))));
    }

    #[test]
    fn recovers_known_parameters() {
        for (i, &k) in [0.5, 1.0, 2.0].iter().enumerate() {
            for (j, &l) in [0.5, 1.0, 3.0].iter().enumerate() {
                let fit = fit_weibull(&draws(k, l, 10_000, (i * 3 + j) as u64), 1.0).unwrap();
                assert!((fit.shape / k - 1.0).abs() < 0.05, "k={k} l={l}: {fit:?}");
                assert!((fit.scale / l - 1.0).abs() < 0.05, "k={k} l={l}: {fit:?}");
            }
        }
    }

    fn single(mean: Vec<f64>, shape: f64, scale: f64) -> BTreeMap<usize, WeibullClassModel> {
        [(0, WeibullClassModel { class_index: 0, latent_mean: mean, shape, scale, tail_size: 8, n_correct: 8 })].into()
    }

    #[test]
    fn outlier_probability_cases() {
        let models = single(vec![1.0, 1.0], 2.0, 1.5);
        assert_eq!(outlier_probability(&[1.0, 1.0], &models).unwrap(), 0.0);
        let at_scale = outlier_probability(&[2.5, 1.0], &models).unwrap();
        assert!((at_scale - (1.0 - (-1f64).exp())).abs() < 1e-12);
        assert!((at_scale - 0.6321).abs() < 1e-4);
        assert!(matches!(outlier_probability(&[0.0, 0.0], &BTreeMap::new()), Err(Error::DegenerateStats(_))));
    }

    #[test]
    fn outlier_probability_takes_minimum() {
        // class 0 gives CDF 0.9 and class 1 gives 0.2 at the origin
        let d = 1.0;
        let scale_for = |p: f64| d / (-(1.0 - p).ln());
        let mut models = single(vec![1.0, 0.0], 1.0, scale_for(0.9));
        models.insert(1, WeibullClassModel { class_index: 1, latent_mean: vec![0.0, 1.0], shape: 1.0, scale: scale_for(0.2), tail_size: 8, n_correct: 8 });
        assert!((outlier_probability(&[0.0, 0.0], &models).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ranking_threshold_rules() {
        let ids: Vec<SampleId> = (0..5).map(SampleId).collect();
        let probs = [0.1, 0.97, 0.5, 0.99, 0.5];
        let r = rank_by_outlier_probability(&ids, &probs, 2, 0.95);
        assert_eq!(r.rejected_ood_ids, vec![SampleId(1), SampleId(3)]);
        assert_eq!(r.selected_ids, vec![SampleId(2), SampleId(4)]);
        let r = rank_by_outlier_probability(&ids, &probs, 2, 1.0);
        assert!(r.rejected_ood_ids.is_empty());
        assert_eq!(r.selected_ids, vec![SampleId(3), SampleId(1)]);
        let r = rank_by_outlier_probability(&ids, &[1.0; 5], 3, 0.9);
        assert!(r.selected_ids.is_empty());
        assert_eq!(r.shortfall, 3);
    }
}
