use std::path::Path;

use osal::alloop::{
    aggregate_runs, load_run, resume_run, run_experiment, stage_dir, BudgetSpec, BudgetUnit, DataSource, DatasetSpec, Experiment,
    ExperimentConfig, OodSpec, OracleSpec,
};
use osal::datapool::{PoolCheckpoint, FOREIGN_ID_BASE};
use osal::datapool::SyntheticConfig;
use osal::sampling::Strategy;
use osal::vnn::Architecture;
use osal::Error;

fn blobs(seed: u64) -> SyntheticConfig {
    let mut c = SyntheticConfig::new(4, 150, 2, 1.5, seed);
    c.radius = 5.0;
    c
}

fn config(strategy: Strategy) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(DatasetSpec { source: DataSource::synthetic(blobs(3)), ..Default::default() });
    c.name = "blobs".into();
    c.strategy = strategy;
    c.budget = BudgetSpec::counts(20, 20, 4);
    c.model.z_dim = 4;
    c.model.architecture = Some(Architecture::Dense { hidden: vec![16] });
    c.train.epochs_per_stage = 5;
    c.train.batch_size = 16;
    c.train.learning_rate = 1e-2;
    c
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn labeled_pool_grows_by_the_stage_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&config(Strategy::Uncertainty), 0, dir.path()).unwrap();
    let labeled: Vec<usize> = out.result.stages.iter().map(|s| s.labeled).collect();
    assert_eq!(labeled, vec![20, 40, 60, 80]);
    assert!(out.result.stages.iter().all(|s| (0.0..=1.0).contains(&s.accuracy)));
    for t in 0..4 {
        assert!(stage_dir(dir.path(), t).join("model.bin").exists());
        let ckpt = PoolCheckpoint::load(&stage_dir(dir.path(), t)).unwrap();
        ckpt.pool.check_invariants().unwrap();
        assert_eq!(ckpt.pool.labeled_ids().len() + ckpt.pool.unlabeled_ids().len(), 600);
    }
    let stages = read(&dir.path().join("stages.csv"));
    assert!(stages.starts_with("stage,labeled,accuracy,sampling_seconds,rejected_ood\n"));
    assert_eq!(stages.lines().count(), 5);
}

#[test]
fn replay_and_resume_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = config(Strategy::Weibull);
    run_experiment(&c, 7, a.path()).unwrap();
    run_experiment(&c, 7, b.path()).unwrap();
    let reference = read(&a.path().join("accuracy.csv"));
    assert_eq!(reference, read(&b.path().join("accuracy.csv")));

    // drop the last two stages as if the process died mid-run
    for t in 2..4 {
        std::fs::remove_dir_all(stage_dir(b.path(), t)).unwrap();
    }
    let mut manifest = read(&b.path().join("run.toml"));
    manifest = manifest.replace("complete = true", "complete = false");
    std::fs::write(b.path().join("run.toml"), manifest).unwrap();
    let resumed = resume_run(b.path()).unwrap();
    assert_eq!(resumed.resumed_from, Some(1));
    assert_eq!(reference, read(&b.path().join("accuracy.csv")));

    let again = resume_run(b.path()).unwrap();
    assert!(again.already_complete);
    assert_eq!(load_run(b.path()).unwrap().stages.len(), 4);
}

#[test]
fn random_replays_promote_the_same_ids() {
    let a = run_experiment(&config(Strategy::Random), 2, tempfile::tempdir().unwrap().path()).unwrap();
    let b = run_experiment(&config(Strategy::Random), 2, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(a.queried, b.queried);
}

#[test]
fn strategies_share_stage_zero() {
    let u = run_experiment(&config(Strategy::Uncertainty), 4, tempfile::tempdir().unwrap().path()).unwrap();
    let r = run_experiment(&config(Strategy::Random), 4, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(u.result.stages[0].accuracy, r.result.stages[0].accuracy);
    assert_ne!(u.queried[0].1, r.queried[0].1);
}

#[test]
fn foreign_queries_cost_budget_and_stay_unlabeled() {
    let mut c = config(Strategy::Random);
    let mut far = SyntheticConfig::new(1, 300, 2, 0.5, 99);
    far.centers = Some(vec![vec![40.0, 40.0]]);
    c.dataset.ood = Some(OodSpec { source: DataSource::synthetic(far), fraction: 0.2 });
    c.oracle = OracleSpec::Ood;
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::prepare(&c, 1).unwrap();
    let mut state = exp.initial_state().unwrap();
    let foreign_before = state.pool.unlabeled_ids().iter().filter(|id| id.0 >= FOREIGN_ID_BASE).count();
    assert_eq!(foreign_before, 120);
    let before = state.pool.labeled_ids().len();
    let out = exp.run_stage(&mut state, 0).unwrap();
    let foreign_queried = out.queried.iter().filter(|id| id.0 >= FOREIGN_ID_BASE).count();
    assert_eq!(out.record.rejected_ood, foreign_queried);
    assert_eq!(state.pool.labeled_ids().len(), before + 20 - foreign_queried);
    assert_eq!(state.pool.unlabeled_ids().iter().filter(|id| id.0 >= FOREIGN_ID_BASE).count(), foreign_before);
    assert_eq!(state.pool.discarded_ood_count(), foreign_queried);
    assert_eq!(state.pool.total(), 720);

    let run = run_experiment(&c, 1, dir.path()).unwrap();
    let total_rejected: usize = run.result.stages.iter().map(|s| s.rejected_ood).sum();
    let last = run.result.stages.last().unwrap().labeled;
    let granted_before_last: usize = run.result.stages[..3].iter().map(|s| s.rejected_ood).sum();
    assert_eq!(last, 80 - granted_before_last);
    assert!(total_rejected >= granted_before_last);
}

#[test]
fn percent_schedule_runs_seven_stages() {
    let mut c = config(Strategy::Uncertainty);
    c.budget = BudgetSpec::default();
    c.train.epochs_per_stage = 1;
    let out = run_experiment(&c, 0, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(out.result.stages.len(), 7);
    assert_eq!(out.result.stages.last().unwrap().labeled, 240);
    assert_eq!(out.result.stages.last().unwrap().labeled as f64 / out.result.pool_size as f64, 0.4);
}

#[test]
fn single_target_evaluates_once() {
    let mut c = config(Strategy::Uncertainty);
    c.budget = BudgetSpec { unit: BudgetUnit::Count, targets: Some(vec![20.0]), ..BudgetSpec::default() };
    let out = run_experiment(&c, 0, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(out.result.stages.len(), 1);
    assert!(out.queried.is_empty());
}

#[test]
fn run_directory_guards_its_experiment() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config(Strategy::Uncertainty), 0, dir.path()).unwrap();
    let err = run_experiment(&config(Strategy::Random), 0, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn seeds_aggregate() {
    let c = config(Strategy::Uncertainty);
    let runs: Vec<_> = (0..3)
        .map(|s| run_experiment(&c, s, tempfile::tempdir().unwrap().path()).unwrap().result)
        .collect();
    let agg = aggregate_runs(&runs).unwrap();
    assert_eq!(agg.stages.len(), 4);
    assert_eq!(agg.stages[3].labeled_count, 80);
    assert_eq!(agg.stages[0].n_seeds, 3);
}
