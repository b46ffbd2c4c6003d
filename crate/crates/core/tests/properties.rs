use std::collections::{BTreeMap, HashSet};

use osal::datapool::{adapt::adapt_features, idx, FeatureShape, PoolState, SampleId};
use osal::nn::Matrix;
use osal::sampling::{
    outlier_probability, random_select, select_uncertain, select_weibull, uncertainty_scores, weibull_cdf, Batch, UncertaintyScore,
    WeibullClassModel,
};
use osal::seed;
use osal::vnn::{kl_term, reparameterize, Architecture, LatentPosterior, Variant, VnnModel};
use proptest::prelude::*;

fn model(seed_: u64, dim: usize, classes: usize) -> VnnModel {
    VnnModel::new(Variant::M1, Architecture::Dense { hidden: vec![6] }, dim, 3, classes, &mut seed::stream(seed_, "prop", 0)).unwrap()
}

fn batch(ids: &[u64], rows: &[Vec<f64>]) -> Batch {
    let dim = rows[0].len();
    Batch {
        ids: ids.iter().copied().map(SampleId).collect(),
        x: Matrix::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j] as f32 as f64),
        labels: Vec::new(),
    }
}

fn rows(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_non_negative(mean in prop::collection::vec(-5.0f64..5.0, 1..8), lv in prop::collection::vec(-6.0f64..6.0, 8)) {
        let lv = lv[..mean.len()].to_vec();
        let kl = kl_term(&LatentPosterior::new(mean, lv).unwrap()).unwrap();
        prop_assert!(kl >= -1e-12);
    }

    #[test]
    fn zero_noise_returns_the_mean(mean in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let p = LatentPosterior::new(mean.clone(), vec![0.3; mean.len()]).unwrap();
        prop_assert_eq!(reparameterize(&p, &vec![0.0; mean.len()]).unwrap(), mean);
    }

    #[test]
    fn uncertainty_scores_are_bounded(s in 0u64..1000, classes in 2usize..8, x in rows(20, 4)) {
        let m = model(s, 4, classes);
        let ids: Vec<u64> = (0..20).collect();
        for score in uncertainty_scores(&m, &batch(&ids, &x)).unwrap() {
            let p = score.max_class_probability;
            prop_assert!(p >= 1.0 / classes as f64 - 1e-6 && p <= 1.0 + 1e-6, "{}", p);
        }
    }

    #[test]
    fn scores_follow_pool_permutation(s in 0u64..1000, x in rows(16, 3), perm_seed in 0u64..1000) {
        let m = model(s, 3, 4);
        let ids: Vec<u64> = (100..116).collect();
        let base = uncertainty_scores(&m, &batch(&ids, &x)).unwrap();
        let mut order: Vec<usize> = (0..16).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut seed::stream(perm_seed, "perm", 0));
        let pids: Vec<u64> = order.iter().map(|&i| ids[i]).collect();
        let px: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
        let permuted = uncertainty_scores(&m, &batch(&pids, &px)).unwrap();
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(permuted[k], base[i]);
        }
        let a: HashSet<SampleId> = select_uncertain(&base, 5).unwrap().selected_ids.into_iter().collect();
        let b: HashSet<SampleId> = select_uncertain(&permuted, 5).unwrap().selected_ids.into_iter().collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn uncertain_selection_is_a_subset(values in prop::collection::vec(0.1f64..1.0, 1..60), b_frac in 0.0f64..=1.0) {
        let scores: Vec<UncertaintyScore> = values.iter().enumerate()
            .map(|(i, &p)| UncertaintyScore { sample_id: SampleId(i as u64 * 7), max_class_probability: p }).collect();
        let b = (b_frac * values.len() as f64) as usize;
        let r = select_uncertain(&scores, b).unwrap();
        prop_assert_eq!(r.selected_ids.len(), b);
        let set: HashSet<SampleId> = r.selected_ids.iter().copied().collect();
        prop_assert_eq!(set.len(), b);
        let pool: HashSet<SampleId> = scores.iter().map(|s| s.sample_id).collect();
        prop_assert!(set.is_subset(&pool));
        let worst_selected = r.selected_ids.iter().map(|id| r.scores[id]).fold(f64::MIN, f64::max);
        let best_left = scores.iter().filter(|s| !set.contains(&s.sample_id)).map(|s| s.max_class_probability).fold(f64::MAX, f64::min);
        prop_assert!(worst_selected <= best_left);
    }

    #[test]
    fn random_selection_is_a_subset(n in 1usize..80, b_frac in 0.0f64..=1.0, s in any::<u64>()) {
        let ids: Vec<SampleId> = (0..n as u64).map(|i| SampleId(i * 3 + 1)).collect();
        let b = (b_frac * n as f64) as usize;
        let r = random_select(&ids, b, s).unwrap();
        let set: HashSet<SampleId> = r.selected_ids.iter().copied().collect();
        prop_assert_eq!(set.len(), b);
        prop_assert!(set.iter().all(|id| ids.contains(id)));
    }

    #[test]
    fn outlier_probability_is_monotone(d1 in 0.0f64..10.0, extra in 0.0f64..5.0, k in 0.3f64..4.0, l in 0.2f64..5.0) {
        let models: BTreeMap<usize, WeibullClassModel> = [
            (0, WeibullClassModel { class_index: 0, latent_mean: vec![0.0, 0.0], shape: k, scale: l, tail_size: 8, n_correct: 8 }),
            (1, WeibullClassModel { class_index: 1, latent_mean: vec![100.0, 0.0], shape: 1.3, scale: 2.0, tail_size: 8, n_correct: 8 }),
        ].into();
        // both distances grow with d, so the minimum CDF must too
        let at = |d: f64| outlier_probability(&[0.0, d], &models).unwrap();
        prop_assert!(at(d1) <= at(d1 + extra) + 1e-12);
        prop_assert!(weibull_cdf(d1, k, l) <= weibull_cdf(d1 + extra, k, l));
    }

    #[test]
    fn weibull_selection_stays_in_pool(s in 0u64..200, b in 0usize..30, tau in prop::sample::select(vec![0.5, 0.9, 1.0])) {
        let m = model(s, 2, 2);
        let mut rng = seed::stream(s, "pts", 0);
        let labeled_rows: Vec<Vec<f64>> = (0..60).map(|_| vec![rand::Rng::random_range(&mut rng, -3.0..3.0), rand::Rng::random_range(&mut rng, -3.0..3.0)]).collect();
        let (_, probs) = m.score(&batch(&(0..60).collect::<Vec<_>>(), &labeled_rows).x).unwrap();
        // label every row with the model's own prediction so all are correct
        let labels: Vec<usize> = probs.outer_iter().map(|r| osal::vnn::argmax(r.iter().copied())).collect();
        let mut labeled = batch(&(0..60).collect::<Vec<_>>(), &labeled_rows);
        labeled.labels = labels;
        let pool_rows: Vec<Vec<f64>> = (0..30).map(|_| vec![rand::Rng::random_range(&mut rng, -6.0..6.0), rand::Rng::random_range(&mut rng, -6.0..6.0)]).collect();
        let pool_ids: Vec<u64> = (1000..1030).collect();
        let unlabeled = batch(&pool_ids, &pool_rows);
        match select_weibull(&m, &unlabeled, &labeled, b, 0.5, tau) {
            Ok(r) => {
                let sel: HashSet<SampleId> = r.selected_ids.iter().copied().collect();
                prop_assert_eq!(sel.len(), r.selected_ids.len());
                prop_assert!(sel.iter().all(|id| unlabeled.ids.contains(id)));
                prop_assert!(r.rejected_ood_ids.iter().all(|id| !sel.contains(id)));
                prop_assert_eq!(r.selected_ids.len() + r.shortfall, b);
                if tau == 1.0 { prop_assert!(r.rejected_ood_ids.is_empty()); }
            }
            Err(osal::Error::DegenerateStats(_)) => {}
            Err(e) => prop_assert!(false, "{}", e),
        }
    }

    #[test]
    fn promotions_conserve_the_pool(n in 5u64..60, steps in prop::collection::vec((0usize..8, any::<bool>()), 1..12)) {
        let mut pool = PoolState::from_parts((0..2).map(SampleId), (2..n).map(SampleId), (0..2).map(|i| (SampleId(i), 0)).collect()).unwrap();
        let total = pool.total();
        for (take, corrupt) in steps {
            let u: Vec<SampleId> = pool.unlabeled_ids().iter().copied().take(take).collect();
            let mut batch: Vec<(SampleId, usize)> = u.iter().map(|&id| (id, 1)).collect();
            if corrupt {
                batch.push((SampleId(0), 1));
                let before = pool.clone();
                prop_assert!(pool.promote(&batch).is_err());
                prop_assert_eq!(&pool, &before);
            } else {
                pool.promote(&batch).unwrap();
            }
            pool.check_invariants().unwrap();
            prop_assert_eq!(pool.total(), total);
        }
    }

    #[test]
    fn adapted_features_have_the_target_size(c_in in prop::sample::select(vec![1usize, 3]), c_out in prop::sample::select(vec![1usize, 3]),
                                             h in 2usize..12, w in 2usize..12, oh in 2usize..12, ow in 2usize..12) {
        let from = FeatureShape::Image { channels: c_in, height: h, width: w };
        let to = FeatureShape::Image { channels: c_out, height: oh, width: ow };
        let x = vec![0.5f32; c_in * h * w];
        let y = adapt_features(&x, from, to).unwrap();
        prop_assert_eq!(y.len(), c_out * oh * ow);
        prop_assert!(y.iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn idx_round_trips(count in 0usize..6, rows in 1usize..6, cols in 1usize..6, salt in any::<u8>()) {
        let bytes: Vec<u8> = (0..count * rows * cols).map(|i| (i as u8).wrapping_mul(31).wrapping_add(salt)).collect();
        let images = idx::read_images(idx::write_images(count, rows, cols, &bytes).as_slice()).unwrap();
        prop_assert_eq!((images.count, images.rows, images.cols), (count, rows, cols));
        let back: Vec<u8> = images.pixels.iter().map(|p| (p * 255.0).round() as u8).collect();
        prop_assert_eq!(back, bytes.clone());
        let labels: Vec<u8> = bytes.iter().map(|b| b % 10).collect();
        prop_assert_eq!(idx::read_labels(idx::write_labels(&labels).as_slice()).unwrap(), labels);
    }
}
