//! Fixtures shared by the criterion benches.

use osal::datapool::{split_initial, Corpus, SyntheticConfig};
use osal::sampling::Batch;
use osal::seed;
use osal::vnn::{train_stage, Architecture, LossConfig, TrainConfig, Variant, VnnModel};

pub struct Fixture {
    pub model: VnnModel,
    pub unlabeled: Batch,
    pub labeled: Batch,
}

/// A blob pool with `pool_size` unlabeled samples and a model trained on
/// 200 labeled ones, so every class has enough correct samples to fit.
pub fn fixture(pool_size: usize) -> Fixture {
    let classes = 4;
    let per_class = (pool_size + 200).div_ceil(classes);
    let dataset = SyntheticConfig::new(classes, per_class, 8, 1.0, 11).generate().expect("blobs");
    let corpus = Corpus::new(dataset.train_records.iter().cloned()).expect("corpus");
    let pool = split_initial(&dataset, 200, 3).expect("split");
    let labeled = Batch::labeled(&corpus, &pool).expect("labeled");
    let ids: Vec<_> = pool.unlabeled_ids().iter().copied().take(pool_size).collect();
    let unlabeled = Batch::unlabeled(&corpus, &ids).expect("unlabeled");

    let arch = Architecture::Dense { hidden: vec![32, 32] };
    let mut model = VnnModel::new(Variant::M1, arch, 8, 16, classes, &mut seed::stream(0, "init", 0)).expect("model");
    let train = TrainConfig { epochs_per_stage: 20, batch_size: 32, ..TrainConfig::default() };
    let loss = LossConfig { beta: 0.01, ..LossConfig::default() };
    train_stage(&mut model, &labeled.x, &labeled.labels, &train, &loss, &mut seed::stream(0, "train", 0)).expect("train");
    Fixture { model, unlabeled, labeled }
}
