use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_gradients, LossConfig};
use super::model::{argmax, VnnModel};
use crate::error::{Error, Result};
use crate::nn::{Matrix, Optimizer, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub epochs_per_stage: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 128, learning_rate: 1e-3, weight_decay: 1e-5, optimizer: OptimizerKind::Adam, epochs_per_stage: 10 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Mini-batch training on the labeled pool for `epochs_per_stage` epochs
/// with a fresh optimizer. Returns the sample-weighted mean loss per epoch.
pub fn train_stage(
    model: &mut VnnModel,
    x: &Matrix,
    y: &[usize],
    train: &TrainConfig,
    loss: &LossConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    train.validate()?;
    loss.validate()?;
    if x.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if y.len() != x.nrows() {
        return Err(Error::shape(format!("{} labels", x.nrows()), format!("{} labels", y.len())));
    }
    model.check_input(x.ncols())?;
    let mut optimizer = Optimizer::new(train.optimizer, train.learning_rate, train.weight_decay);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = Vec::with_capacity(train.epochs_per_stage);
    for epoch in 0..train.epochs_per_stage {
        order.shuffle(rng);
        let mut total = 0.0;
        for idx in order.chunks(train.batch_size) {
            let xb = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let (l, grads) = loss_and_gradients(model, &xb, &yb, loss, rng).map_err(|e| match e {
                Error::Numerics { what, .. } => Error::Numerics { what, epoch: Some(epoch) },
                other => other,
            })?;
            total += l.total * idx.len() as f64;
            optimizer.begin_step(&grads);
            let mut i = 0;
            model.visit_params_mut(&mut |p| {
                optimizer.update(i, p, &grads[i]);
                i += 1;
            });
        }
        let mean = total / x.nrows() as f64;
        if !mean.is_finite() {
            return Err(Error::Numerics { what: "epoch loss".into(), epoch: Some(epoch) });
        }
        history.push(mean);
    }
    Ok(history)
}

/// Predicted classes at z = posterior mean.
pub fn predict(model: &VnnModel, x: &Matrix) -> Result<Vec<usize>> {
    let (_, probs) = model.score(x)?;
    Ok(probs.outer_iter().map(|r| argmax(r.iter().copied())).collect())
}

/// Fraction of argmax-correct predictions.
pub fn evaluate(model: &VnnModel, x: &Matrix, labels: &[usize]) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let pred = predict(model, x)?;
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Stacks labeled feature rows into a training matrix.
pub fn stack(rows: &[&[f32]], dim: usize) -> Matrix {
    Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapool::SyntheticConfig;
    use crate::nn::Dense;
    use crate::seed;
    use crate::vnn::model::{Architecture, Variant};

    fn blobs() -> (Matrix, Vec<usize>, Matrix, Vec<usize>) {
        let d = SyntheticConfig::new(4, 50, 2, 1.0, 3).generate().unwrap();
        let to = |recs: &[crate::datapool::SampleRecord]| {
            let rows: Vec<&[f32]> = recs.iter().map(|r| r.features.as_slice()).collect();
            (stack(&rows, 2), recs.iter().map(|r| r.true_label.unwrap()).collect::<Vec<_>>())
        };
        let (x, y) = to(&d.train_records);
        let (xe, ye) = to(&d.eval_records);
        (x, y, xe, ye)
    }

    fn fresh(variant: Variant) -> VnnModel {
        VnnModel::new(variant, Architecture::Dense { hidden: vec![32, 32] }, 2, 8, 4, &mut seed::stream(1, "init", 0)).unwrap()
    }

    #[test]
    fn fits_separable_blobs() {
        let (x, y, xe, ye) = blobs();
        let mut m = fresh(Variant::M1);
        let cfg = TrainConfig { epochs_per_stage: 50, batch_size: 32, learning_rate: 5e-3, ..TrainConfig::default() };
        let hist = train_stage(&mut m, &x, &y, &cfg, &LossConfig::default(), &mut seed::stream(1, "train", 0)).unwrap();
        assert_eq!(hist.len(), 50);
        assert!(hist.last().unwrap() < &hist[0]);
        assert!(evaluate(&m, &x, &y).unwrap() >= 0.95);
        assert!(evaluate(&m, &xe, &ye).unwrap() >= 0.95);
    }

    #[test]
    fn zero_epochs_is_noop() {
        let (x, y, ..) = blobs();
        let mut m = fresh(Variant::M2);
        let before = m.clone();
        let cfg = TrainConfig { epochs_per_stage: 0, ..TrainConfig::default() };
        let hist = train_stage(&mut m, &x, &y, &cfg, &LossConfig::default(), &mut seed::stream(1, "train", 0)).unwrap();
        assert!(hist.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (x, y, ..) = blobs();
        let mut m = fresh(Variant::M1);
        let before = m.clone();
        for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = TrainConfig { learning_rate: 0.0, weight_decay: 0.0, epochs_per_stage: 3, optimizer, ..TrainConfig::default() };
            train_stage(&mut m, &x, &y, &cfg, &LossConfig::default(), &mut seed::stream(1, "train", 0)).unwrap();
            assert_eq!(m, before);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (x, y, ..) = blobs();
        let cfg = TrainConfig { epochs_per_stage: 3, batch_size: 16, ..TrainConfig::default() };
        let run = || {
            let mut m = fresh(Variant::M2);
            let loss = LossConfig { reconstruction: crate::vnn::Reconstruction::Gaussian, ..LossConfig::default() };
            let h = train_stage(&mut m, &x, &y, &cfg, &loss, &mut seed::stream(2, "train", 0)).unwrap();
            (m, h)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_pool_rejected() {
        let mut m = fresh(Variant::M1);
        let r = train_stage(&mut m, &Matrix::zeros((0, 2)), &[], &TrainConfig::default(), &LossConfig::default(), &mut seed::stream(1, "t", 0));
        assert!(matches!(r, Err(Error::EmptyBatch)));
    }

    #[test]
    fn divergence_reports_epoch() {
        let (x, y, ..) = blobs();
        let mut m = fresh(Variant::M1);
        m.classifier.weight.fill(f64::NAN);
        let cfg = TrainConfig { epochs_per_stage: 2, ..TrainConfig::default() };
        let r = train_stage(&mut m, &x, &y, &cfg, &LossConfig::default(), &mut seed::stream(1, "t", 0));
        assert!(matches!(r, Err(Error::Numerics { epoch: Some(0), .. })), "{r:?}");
    }

    #[test]
    fn evaluate_edge_cases() {
        let (_, _, xe, ye) = blobs();
        let mut m = fresh(Variant::M1);
        m.classifier = Dense::zeros(8, 4);
        // zero classifier ties everywhere; the lowest index wins
        let expected = ye.iter().filter(|&&y| y == 0).count() as f64 / ye.len() as f64;
        assert_eq!(evaluate(&m, &xe, &ye).unwrap(), expected);
        assert!(matches!(evaluate(&m, &Matrix::zeros((0, 2)), &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn evaluate_perfect_and_adversarial() {
        let (x, y, ..) = blobs();
        let mut m = fresh(Variant::M1);
        let cfg = TrainConfig { epochs_per_stage: 60, batch_size: 32, learning_rate: 5e-3, ..TrainConfig::default() };
        train_stage(&mut m, &x, &y, &cfg, &LossConfig::default(), &mut seed::stream(1, "train", 0)).unwrap();
        let pred = predict(&m, &x).unwrap();
        assert_eq!(evaluate(&m, &x, &pred).unwrap(), 1.0);
        let wrong: Vec<usize> = pred.iter().map(|p| (p + 1) % 4).collect();
        assert_eq!(evaluate(&m, &x, &wrong).unwrap(), 0.0);
    }
}
