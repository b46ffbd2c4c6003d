//! M1 and M2 objectives and their analytic gradients.
//!
//! Both are minimized as the negated variational objective:
//! classification cross-entropy (plus reconstruction for M2) averaged over
//! Monte Carlo draws, plus beta times the KL to the standard normal prior.

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{softmax_rows, Variant, VnnModel, LOGVAR_CLAMP};
use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruction {
    /// Cross-entropy against pixels in [0, 1]; the decoder emits logits.
    Bernoulli,
    /// Unit-variance Gaussian, constant term dropped.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub mc_samples: usize,
    pub reconstruction: Reconstruction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { beta: 1.0, mc_samples: 1, reconstruction: Reconstruction::Bernoulli }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Batch means of each term. `kl` already carries the beta weight.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    M1,
    M2,
}

impl From<Variant> for Objective {
    fn from(v: Variant) -> Self {
        match v {
            Variant::M1 => Objective::M1,
            Variant::M2 => Objective::M2,
        }
    }
}

pub fn m1_loss(model: &VnnModel, x: &Matrix, y: &[usize], cfg: &LossConfig, rng: &mut impl Rng) -> Result<LossBreakdown> {
    Ok(evaluate(model, x, y, cfg, Objective::M1, rng, false)?.0)
}

pub fn m2_loss(model: &VnnModel, x: &Matrix, y: &[usize], cfg: &LossConfig, rng: &mut impl Rng) -> Result<LossBreakdown> {
    Ok(evaluate(model, x, y, cfg, Objective::M2, rng, false)?.0)
}

/// Loss for the model's own variant plus gradients for every parameter,
/// in `VnnModel::visit_params` order.
pub fn loss_and_gradients(
    model: &VnnModel,
    x: &Matrix,
    y: &[usize],
    cfg: &LossConfig,
    rng: &mut impl Rng,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let (loss, grads) = evaluate(model, x, y, cfg, model.variant.into(), rng, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn evaluate(
    model: &VnnModel,
    x: &Matrix,
    y: &[usize],
    cfg: &LossConfig,
    objective: Objective,
    rng: &mut impl Rng,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Vec<Matrix>>)> {
    cfg.validate()?;
    let batch = x.nrows();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if y.len() != batch {
        return Err(Error::shape(format!("{batch} labels"), format!("{} labels", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= model.num_classes) {
        return Err(Error::LabelRange { label: bad, num_classes: model.num_classes });
    }
    model.check_input(x.ncols())?;
    let decoder = match objective {
        Objective::M1 => None,
        Objective::M2 => Some(model.decoder.as_ref().ok_or(Error::Variant { expected: "M2" })?),
    };
    if decoder.is_some() && cfg.reconstruction == Reconstruction::Bernoulli && x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract("Bernoulli reconstruction needs inputs in [0, 1]".into()));
    }

    let (h, enc_caches) = model.encoder.forward(x);
    let mean = model.mean_head.forward(&h);
    let raw_logvar = model.logvar_head.forward(&h);
    let logvar = raw_logvar.mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
    let std = logvar.mapv(|v| (0.5 * v).exp());

    let samples = cfg.mc_samples;
    let scale = 1.0 / (batch * samples) as f64;
    let noise: Vec<Matrix> = (0..samples)
        .map(|_| Array2::from_shape_simple_fn(mean.raw_dim(), || rng.sample::<f64, _>(StandardNormal)))
        .collect();

    let mut class_sum = 0.0;
    let mut recon_sum = 0.0;
    let mut dmean = Matrix::zeros(mean.raw_dim());
    let mut dlogvar = Matrix::zeros(mean.raw_dim());
    let mut g_classifier: Option<(Matrix, Matrix)> = None;
    let mut g_decoder: Option<Vec<Matrix>> = None;

    for eps in &noise {
        let z = &mean + &(&std * eps);
        let logits = model.classifier.forward(&z);
        let probs = softmax_rows(&logits);
        for (row, &label) in logits.outer_iter().zip(y) {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            class_sum += lse - row[label];
        }
        let mut dz = Matrix::zeros(z.raw_dim());
        if want_grads {
            let mut dlogits = probs;
            for (mut row, &label) in dlogits.outer_iter_mut().zip(y) {
                row[label] -= 1.0;
            }
            dlogits *= scale;
            let mut g = Vec::with_capacity(2);
            dz = model.classifier.backward(&z, &dlogits, &mut g);
            accumulate_pair(&mut g_classifier, g);
        }
        if let Some(dec) = decoder {
            let (out, dec_caches) = dec.forward(&z);
            let (recon, dout) = match cfg.reconstruction {
                Reconstruction::Bernoulli => {
                    let mut total = 0.0;
                    Zip::from(&out).and(x).for_each(|&l, &t| total += softplus(l) - t * l);
                    let grad = want_grads.then(|| {
                        let mut g = out.mapv(sigmoid);
                        g -= x;
                        g
                    });
                    (total, grad)
                }
                Reconstruction::Gaussian => {
                    let diff = &out - x;
                    (0.5 * diff.iter().map(|d| d * d).sum::<f64>(), want_grads.then_some(diff))
                }
            };
            recon_sum += recon;
            if let Some(dout) = dout {
                let (dz_dec, g) = dec.backward(&dec_caches, &(dout * scale));
                dz += &dz_dec;
                match &mut g_decoder {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += &b),
                    None => g_decoder = Some(g),
                }
            }
        }
        if want_grads {
            dmean += &dz;
            Zip::from(&mut dlogvar).and(&dz).and(eps).and(&std).for_each(|d, &g, &e, &s| *d += g * e * 0.5 * s);
        }
    }

    let kl_sum: f64 = Zip::from(&mean).and(&logvar).fold(0.0, |acc, &m, &lv| acc + 0.5 * (m * m + lv.exp() - 1.0 - lv));
    let breakdown = {
        let classification = class_sum * scale;
        let reconstruction = recon_sum * scale;
        let kl = cfg.beta * kl_sum / batch as f64;
        LossBreakdown { total: classification + reconstruction + kl, classification, reconstruction, kl }
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numerics { what: "loss".into(), epoch: None });
    }
    if !want_grads {
        return Ok((breakdown, None));
    }

    let kl_scale = cfg.beta / batch as f64;
    Zip::from(&mut dmean).and(&mean).for_each(|d, &m| *d += kl_scale * m);
    Zip::from(&mut dlogvar).and(&logvar).for_each(|d, &lv| *d += kl_scale * 0.5 * (lv.exp() - 1.0));
    // clamped entries pass no gradient
    Zip::from(&mut dlogvar).and(&raw_logvar).for_each(|d, &raw| {
        if raw <= -LOGVAR_CLAMP || raw >= LOGVAR_CLAMP {
            *d = 0.0;
        }
    });

    let mut head_grads = Vec::with_capacity(4);
    let dh_mean = model.mean_head.backward(&h, &dmean, &mut head_grads);
    let dh_logvar = model.logvar_head.backward(&h, &dlogvar, &mut head_grads);
    let (_, enc_grads) = model.encoder.backward(&enc_caches, &(dh_mean + dh_logvar));

    let mut grads = enc_grads;
    grads.extend(head_grads);
    let (cw, cb) = g_classifier.expect("at least one Monte Carlo sample");
    grads.push(cw);
    grads.push(cb);
    if let Some(dec) = &model.decoder {
        match g_decoder {
            Some(g) => grads.extend(g),
            None => dec.visit_params(&mut |p| grads.push(Matrix::zeros(p.raw_dim()))),
        }
    }
    Ok((breakdown, Some(grads)))
}

fn accumulate_pair(acc: &mut Option<(Matrix, Matrix)>, g: Vec<Matrix>) {
    let mut it = g.into_iter();
    let (w, b) = (it.next().expect("weight grad"), it.next().expect("bias grad"));
    match acc {
        Some((aw, ab)) => {
            *aw += &w;
            *ab += &b;
        }
        None => *acc = Some((w, b)),
    }
}

/// Mean KL over the rows of a batch of posteriors, unweighted.
pub fn mean_kl(mean: &Matrix, logvar: &Matrix) -> f64 {
    let per_row = Zip::from(mean).and(logvar).map_collect(|&m, &lv| 0.5 * (m * m + lv.exp() - 1.0 - lv));
    per_row.sum_axis(Axis(1)).mean().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use crate::seed;
    use crate::vnn::model::Architecture;

    fn model(variant: Variant, classes: usize) -> VnnModel {
        VnnModel::new(variant, Architecture::Dense { hidden: vec![4] }, 5, 3, classes, &mut seed::stream(3, "init", 0)).unwrap()
    }

    fn batch(rows: usize) -> Matrix {
        Array2::from_shape_fn((rows, 5), |(i, j)| ((i + 2 * j) % 5) as f64 / 4.0)
    }

    fn prior_heads(m: &mut VnnModel) {
        m.mean_head = Dense::zeros(4, 3);
        m.logvar_head = Dense::zeros(4, 3);
    }

    fn cfg(beta: f64) -> LossConfig {
        LossConfig { beta, ..LossConfig::default() }
    }

    #[test]
    fn perfect_classifier_zero_loss() {
        let mut m = model(Variant::M1, 3);
        m.classifier = Dense::zeros(3, 3);
        m.classifier.bias[[0, 0]] = 1000.0;
        let l = m1_loss(&m, &batch(4), &[0; 4], &cfg(0.0), &mut seed::stream(1, "t", 0)).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn uniform_classifier_gives_log_c() {
        let mut m = model(Variant::M1, 10);
        m.classifier = Dense::zeros(3, 10);
        let l = m1_loss(&m, &batch(6), &[0, 1, 2, 3, 4, 5], &cfg(0.0), &mut seed::stream(1, "t", 0)).unwrap();
        assert!((l.total - 10f64.ln()).abs() < 1e-12);
        assert!((l.total - 2.3026).abs() < 1e-4);
    }

    #[test]
    fn standard_normal_posterior_adds_no_kl() {
        let mut m = model(Variant::M1, 3);
        prior_heads(&mut m);
        let l = m1_loss(&m, &batch(4), &[0, 1, 2, 0], &cfg(1.0), &mut seed::stream(1, "t", 0)).unwrap();
        assert_eq!(l.kl, 0.0);
        assert_eq!(l.total, l.classification);
    }

    #[test]
    fn m2_is_m1_plus_reconstruction() {
        let m = model(Variant::M2, 3);
        let (x, y) = (batch(5), [0, 1, 2, 1, 0]);
        let a = m1_loss(&m, &x, &y, &cfg(1.0), &mut seed::stream(4, "t", 0)).unwrap();
        let b = m2_loss(&m, &x, &y, &cfg(1.0), &mut seed::stream(4, "t", 0)).unwrap();
        assert!(b.reconstruction > 0.0);
        assert!((b.total - (a.total + b.reconstruction)).abs() < 1e-12);
        assert_eq!(a.classification, b.classification);
    }

    #[test]
    fn all_terms_vanish() {
        let mut m = model(Variant::M2, 2);
        prior_heads(&mut m);
        m.classifier = Dense::zeros(3, 2);
        m.classifier.bias[[0, 1]] = 1000.0;
        let target = [1.0, 0.0, 0.0, 1.0, 1.0];
        let dec = m.decoder.as_mut().unwrap();
        let crate::nn::Layer::Dense(last) = dec.layers.last_mut().unwrap() else { panic!("dense decoder") };
        last.weight.fill(0.0);
        for (j, t) in target.iter().enumerate() {
            last.bias[[0, j]] = if *t > 0.5 { 60.0 } else { -60.0 };
        }
        let x = Array2::from_shape_fn((3, 5), |(_, j)| target[j]);
        let l = m2_loss(&m, &x, &[1, 1, 1], &cfg(1.0), &mut seed::stream(1, "t", 0)).unwrap();
        assert!(l.total.abs() < 1e-9, "{l:?}");
    }

    #[test]
    fn beta_scales_only_kl() {
        let m = model(Variant::M2, 3);
        let (x, y) = (batch(4), [0, 1, 2, 0]);
        let a = m2_loss(&m, &x, &y, &cfg(0.7), &mut seed::stream(9, "t", 0)).unwrap();
        let b = m2_loss(&m, &x, &y, &cfg(1.4), &mut seed::stream(9, "t", 0)).unwrap();
        assert!((b.kl - 2.0 * a.kl).abs() < 1e-12);
        assert_eq!(a.classification, b.classification);
        assert_eq!(a.reconstruction, b.reconstruction);
        assert!(b.total >= a.total);
    }

    #[test]
    fn error_paths() {
        let m1 = model(Variant::M1, 3);
        let mut r = seed::stream(1, "t", 0);
        assert!(matches!(m2_loss(&m1, &batch(2), &[0, 1], &cfg(1.0), &mut r), Err(Error::Variant { .. })));
        assert!(matches!(m1_loss(&m1, &Matrix::zeros((0, 5)), &[], &cfg(1.0), &mut r), Err(Error::EmptyBatch)));
        assert!(matches!(m1_loss(&m1, &batch(1), &[3], &cfg(1.0), &mut r), Err(Error::LabelRange { .. })));
        let bad = LossConfig { mc_samples: 0, ..cfg(1.0) };
        assert!(matches!(m1_loss(&m1, &batch(1), &[0], &bad, &mut r), Err(Error::Config(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (variant, recon) in [
            (Variant::M1, Reconstruction::Bernoulli),
            (Variant::M2, Reconstruction::Bernoulli),
            (Variant::M2, Reconstruction::Gaussian),
        ] {
            let m = model(variant, 2);
            let c = LossConfig { beta: 0.8, mc_samples: 2, reconstruction: recon };
            let (x, y) = (batch(3), [0, 1, 1]);
            let (_, grads) = loss_and_gradients(&m, &x, &y, &c, &mut seed::stream(5, "t", 0)).unwrap();
            let h = 1e-6;
            let n_tensors = grads.len();
            for t in 0..n_tensors {
                let eval = |delta: f64| {
                    let mut p = m.clone();
                    let mut k = 0;
                    p.visit_params_mut(&mut |w| {
                        if k == t {
                            w[[0, 0]] += delta;
                        }
                        k += 1;
                    });
                    evaluate(&p, &x, &y, &c, variant.into(), &mut seed::stream(5, "t", 0), false).unwrap().0.total
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = grads[t][[0, 0]];
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!((numeric - analytic).abs() / denom < 1e-4, "{variant:?} tensor {t}: {numeric} vs {analytic}");
            }
        }
    }

    #[test]
    fn monte_carlo_error_shrinks_with_samples() {
        let m = model(Variant::M1, 3);
        let (x, y) = (batch(4), [0, 1, 2, 0]);
        let spread = |samples: usize| {
            let c = LossConfig { mc_samples: samples, ..cfg(1.0) };
            let vals: Vec<f64> =
                (0..60).map(|s| m1_loss(&m, &x, &y, &c, &mut seed::stream(s, "mc", 0)).unwrap().classification).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        };
        let ratio = spread(4) / spread(64);
        // expected sqrt(64 / 4) = 4
        assert!((2.5..6.5).contains(&ratio), "ratio {ratio}");
    }
}
