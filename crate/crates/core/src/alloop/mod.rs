//! The active-learning loop: stage training, acquisition, oracle
//! round-trip, promotion, checkpointing and multi-seed aggregation.

mod aggregate;
pub mod config;
pub mod run;

pub use aggregate::{aggregate_runs, mean_std, Aggregate, AggregateStage};
pub use config::{apply_override, parse_override, BudgetSpec, BudgetUnit, DataSource, DatasetSpec, ExperimentConfig, ModelSpec, OodSpec, OracleSpec};
pub use run::{
    load_run, resume_run, run_experiment, run_id, run_seeds, seed_dir, stage_dir, Experiment, LoopState, RunManifest, RunOutcome, RunResult,
    StageOutcome, StageRecord, CONFIG_FILE, RUN_FILE,
};
