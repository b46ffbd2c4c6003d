//! The pool-based labeling loop and its on-disk run directory.
//!
//! ```text
//! <run_dir>/config.toml        experiment snapshot for this seed
//! <run_dir>/run.toml           seed, pool size, progress
//! <run_dir>/stages.csv         stage,labeled,accuracy,sampling_seconds,rejected_ood
//! <run_dir>/accuracy.csv       stage,labeled,accuracy (timing-free, replayable)
//! <run_dir>/stages/NNN/        model.*, pool.*, selections.csv, stage.toml
//! ```
//!
//! `stage.toml` is written last, so a stage directory without it is
//! incomplete and is redone on resume.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OracleSpec};
use crate::datapool::checkpoint::write_atomic;
use crate::datapool::{make_biased_pool, mix_ood, Corpus, Dataset, PoolCheckpoint, PoolState, SampleId, SampleRecord};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::oracle::{HttpOracle, NoiseSpec, OracleOutcome, OracleResponse, SimulatedOracle};
use crate::sampling::{select, selection_rows, write_selection_csv, Batch, SelectionResult};
use crate::seed;
use crate::vnn::{self, load_model, save_model, to_matrix, Architecture, VnnModel};

pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_FILE: &str = "run.toml";
pub const STAGES_CSV: &str = "stages.csv";
pub const ACCURACY_CSV: &str = "accuracy.csv";
const STAGE_FILE: &str = "stage.toml";
const SELECTIONS_CSV: &str = "selections.csv";

const REPRODUCIBILITY: &str = "accuracy.csv is bit-identical when (config, seed) is replayed with the same binary on the \
same platform; parallel scoring uses fixed chunks, so the thread count does not change results; \
sampling_seconds is wall-clock and varies";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Labeled-pool size the stage trained on.
    pub labeled: usize,
    pub accuracy: f64,
    pub sampling_seconds: f64,
    /// Queried samples the oracle discarded as foreign.
    pub rejected_ood: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AccuracyRow {
    stage: usize,
    labeled: usize,
    accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub run_id: String,
    /// In-distribution training records.
    pub pool_size: usize,
    pub total_stages: usize,
    pub completed_stages: usize,
    pub complete: bool,
    pub reproducibility: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub pool_size: usize,
    pub stages: Vec<StageRecord>,
    pub complete: bool,
}

/// What one invocation of [`run_experiment`] did.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: RunResult,
    /// Last complete stage found on disk, if the run was resumed.
    pub resumed_from: Option<usize>,
    pub already_complete: bool,
    /// Ids sent to the oracle, per stage executed in this invocation.
    pub queried: Vec<(usize, Vec<SampleId>)>,
}

enum Oracle {
    Simulated(SimulatedOracle),
    Http(HttpOracle),
}

/// Mutable loop state between stages.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub model: VnnModel,
    pub pool: PoolState,
    pub corpus: Corpus,
    pub foreign: Vec<SampleRecord>,
}

/// Everything fixed for one (config, seed) run.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub dataset: Dataset,
    pub schedule: Vec<usize>,
    eval_x: Matrix,
    eval_y: Vec<usize>,
    oracle: Oracle,
}

/// Result of one stage.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub record: StageRecord,
    pub selection: Option<SelectionResult>,
    pub queried: Vec<SampleId>,
    /// No further stage should run.
    pub stop: bool,
}

pub fn run_id(config: &ExperimentConfig, seed: u64) -> String {
    format!("{}-seed{seed}", config.name)
}

impl Experiment {
    /// Loads data and builds the oracle.
    pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let config = config.for_seed(seed);
        config.validate()?;
        let dataset = config.dataset.source.load()?;
        if dataset.eval_records.is_empty() {
            return Err(Error::Config(format!("dataset {} has no evaluation records", dataset.name)));
        }
        let schedule = config.budget.resolve(dataset.len())?;
        for &c in &config.dataset.excluded_classes {
            if c >= dataset.num_classes {
                return Err(Error::LabelRange { label: c, num_classes: dataset.num_classes });
            }
        }
        let eval_x = to_matrix(dataset.eval_records.iter().map(|r| r.features.as_slice()), dataset.shape.dim());
        let eval_y = dataset
            .eval_records
            .iter()
            .map(|r| r.true_label.ok_or(Error::PoolMembership { id: r.id, reason: "is an evaluation record without a label" }))
            .collect::<Result<_>>()?;
        let oracle = match &config.oracle {
            OracleSpec::Clean | OracleSpec::Ood => Oracle::Simulated(SimulatedOracle::Clean),
            OracleSpec::Noisy { rate, .. } => {
                let spec = NoiseSpec { noise_rate: *rate, superclass_map: config.superclass_map(&dataset)?, seed };
                spec.validate()?;
                Oracle::Simulated(SimulatedOracle::Noisy(spec))
            }
            OracleSpec::Human { url, deadline_secs, poll_ms } => {
                let url = url.clone().ok_or_else(|| Error::Config("the human oracle needs oracle.url (or OSAL_ORACLE_URL)".into()))?;
                let mut client = HttpOracle::new(url, run_id(&config, seed), dataset.num_classes);
                client.deadline = Duration::from_secs_f64(*deadline_secs);
                client.poll_interval = Duration::from_millis(*poll_ms);
                Oracle::Http(client)
            }
        };
        Ok(Experiment { config, seed, dataset, schedule, eval_x, eval_y, oracle })
    }

    pub fn fresh_model(&self) -> Result<VnnModel> {
        let arch = self.config.model.architecture.clone().unwrap_or_else(|| Architecture::default_for(self.dataset.shape));
        VnnModel::new(
            self.config.variant,
            arch,
            self.dataset.shape.dim(),
            self.config.model.z_dim,
            self.dataset.num_classes,
            &mut seed::stream(self.seed, "init", 0),
        )
    }

    /// L^0 (biased when classes are excluded), U^0 with any foreign
    /// records mixed in, and an untrained model.
    pub fn initial_state(&self) -> Result<LoopState> {
        let excluded = self.config.dataset.excluded_classes.iter().copied().collect();
        let mut pool = make_biased_pool(&self.dataset, &excluded, self.schedule[0], self.seed)?;
        let mut foreign = Vec::new();
        if let Some(ood) = &self.config.dataset.ood {
            let source = ood.source.load()?;
            let (mixed, records) = mix_ood(&pool, &self.dataset, &source, ood.fraction, self.seed)?;
            pool = mixed;
            foreign = records;
        }
        let corpus = self.corpus_with(&foreign)?;
        Ok(LoopState { model: self.fresh_model()?, pool, corpus, foreign })
    }

    fn corpus_with(&self, foreign: &[SampleRecord]) -> Result<Corpus> {
        let mut corpus = Corpus::new(self.dataset.train_records.iter().cloned())?;
        corpus.extend(foreign.iter().cloned())?;
        Ok(corpus)
    }

    pub fn num_stages(&self) -> usize {
        self.schedule.len()
    }

    fn cap(&self) -> f64 {
        self.config.budget.max_labeled_fraction * self.dataset.len() as f64
    }

    /// Trains on L^t (warm or cold start), rounds the parameters to f32 as
    /// a checkpoint would, and returns (labeled batch, eval accuracy).
    pub fn train_and_evaluate(&self, state: &mut LoopState, t: usize) -> Result<(Batch, f64)> {
        let labeled = Batch::labeled(&state.corpus, &state.pool)?;
        if self.config.cold_start {
            state.model = self.fresh_model()?;
        }
        vnn::train_stage(
            &mut state.model,
            &labeled.x,
            &labeled.labels,
            &self.config.train,
            &self.config.loss,
            &mut seed::stream(self.seed, "train", t as u64),
        )?;
        state.model.quantize_f32();
        let accuracy = vnn::evaluate(&state.model, &self.eval_x, &self.eval_y)?;
        tracing::info!(seed = self.seed, stage = t, labeled = labeled.len(), accuracy, "stage trained");
        Ok((labeled, accuracy))
    }

    /// Trains on L^t, evaluates, then (unless this is the last stage)
    /// selects, queries the oracle and promotes the granted labels.
    pub fn run_stage(&self, state: &mut LoopState, t: usize) -> Result<StageOutcome> {
        let (labeled, accuracy) = self.train_and_evaluate(state, t)?;
        let mut record = StageRecord { stage: t, labeled: labeled.len(), accuracy, sampling_seconds: 0.0, rejected_ood: 0 };

        let last = t + 1 >= self.schedule.len() || labeled.len() as f64 >= self.cap();
        let unlabeled_ids: Vec<SampleId> = state.pool.unlabeled_ids().iter().copied().collect();
        if last || unlabeled_ids.is_empty() {
            if !last {
                tracing::warn!(stage = t, "unlabeled pool exhausted; stopping");
            }
            return Ok(StageOutcome { record, selection: None, queried: Vec::new(), stop: true });
        }
        let mut budget = self.schedule[t + 1] - self.schedule[t];
        if budget > unlabeled_ids.len() {
            tracing::warn!(stage = t, budget, available = unlabeled_ids.len(), "budget exceeds the unlabeled pool; taking all of it");
            budget = unlabeled_ids.len();
        }
        let unlabeled = Batch::unlabeled(&state.corpus, &unlabeled_ids)?;
        let started = Instant::now();
        let selection = select(
            self.config.strategy,
            &state.model,
            &unlabeled,
            &labeled,
            budget,
            &self.config.sampling,
            seed::derive(self.seed, &[t as u64]),
        )?;
        record.sampling_seconds = started.elapsed().as_secs_f64();
        if selection.shortfall > 0 {
            tracing::info!(stage = t, shortfall = selection.shortfall, "selection fell short of the budget");
        }

        let queried = selection.selected_ids.clone();
        let responses = self.ask(state, t, &queried)?;
        let mut granted = Vec::with_capacity(responses.len());
        let mut rejected = 0;
        for r in &responses {
            match r.outcome {
                OracleOutcome::Label(label) => {
                    if label >= self.dataset.num_classes {
                        return Err(Error::LabelRange { label, num_classes: self.dataset.num_classes });
                    }
                    granted.push((r.sample_id, label));
                }
                OracleOutcome::RejectOod => rejected += 1,
                // unanswered queries stay in U and cost nothing
                OracleOutcome::Pending => {}
            }
        }
        state.pool.promote(&granted)?;
        state.pool.record_rejections(rejected);
        state.pool.check_invariants()?;
        record.rejected_ood = rejected;
        Ok(StageOutcome { record, selection: Some(selection), queried, stop: false })
    }

    /// A fixed scoring pool of `size` records: U first, then L, then
    /// evaluation records, in order. Used for timing selection passes.
    pub fn timing_pool(&self, state: &LoopState, size: usize) -> Result<Batch> {
        let mut rows: Vec<&[f32]> = Vec::with_capacity(size);
        let mut ids = Vec::with_capacity(size);
        for &id in state.pool.unlabeled_ids().iter().chain(state.pool.labeled_ids()).take(size) {
            rows.push(&state.corpus.get(id)?.features);
            ids.push(id);
        }
        for r in self.dataset.eval_records.iter().take(size - ids.len()) {
            rows.push(&r.features);
            ids.push(r.id);
        }
        if ids.len() < size {
            return Err(Error::Budget(format!("only {} records available for a timing pool of {size}", ids.len())));
        }
        Ok(Batch { x: to_matrix(rows.into_iter(), self.dataset.shape.dim()), ids, labels: Vec::new() })
    }

    fn ask(&self, state: &LoopState, t: usize, ids: &[SampleId]) -> Result<Vec<OracleResponse>> {
        match &self.oracle {
            Oracle::Simulated(o) => o.answer(&state.corpus, ids),
            Oracle::Http(o) => o.answer(&state.corpus, self.dataset.shape, t, ids),
        }
    }

    fn restore(&self, stage_dir: &Path) -> Result<LoopState> {
        let (model, _) = load_model(stage_dir)?;
        let ckpt = PoolCheckpoint::load(stage_dir)?;
        let corpus = self.corpus_with(&ckpt.foreign)?;
        Ok(LoopState { model, pool: ckpt.pool, corpus, foreign: ckpt.foreign })
    }
}

pub fn stage_dir(run_dir: &Path, stage: usize) -> PathBuf {
    run_dir.join("stages").join(format!("{stage:03}"))
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::format("run directory", format!("{}: {e}", path.display())))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Contract(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    write_atomic(path, &bytes)
}

fn completed_records(run_dir: &Path) -> Result<Vec<StageRecord>> {
    let mut records = Vec::new();
    loop {
        let marker = stage_dir(run_dir, records.len()).join(STAGE_FILE);
        if !marker.exists() {
            return Ok(records);
        }
        records.push(read_toml(&marker)?);
    }
}

fn write_tables(run_dir: &Path, records: &[StageRecord]) -> Result<()> {
    write_csv(&run_dir.join(STAGES_CSV), records)?;
    let acc: Vec<AccuracyRow> = records.iter().map(|r| AccuracyRow { stage: r.stage, labeled: r.labeled, accuracy: r.accuracy }).collect();
    write_csv(&run_dir.join(ACCURACY_CSV), &acc)
}

/// Runs `config` with `seed` in `run_dir`, resuming from the last complete
/// stage if the directory already holds this experiment.
pub fn run_experiment(config: &ExperimentConfig, seed: u64, run_dir: &Path) -> Result<RunOutcome> {
    let config = config.for_seed(seed);
    config.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let config_path = run_dir.join(CONFIG_FILE);
    if config_path.exists() {
        let text = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let existing = ExperimentConfig::from_toml_str(&text)?;
        if existing != config {
            return Err(Error::Config(format!("{} holds a different experiment", run_dir.display())));
        }
    } else {
        write_atomic(&config_path, config.to_toml()?.as_bytes())?;
    }

    let exp = Experiment::prepare(&config, seed)?;
    let mut manifest = RunManifest {
        seed,
        run_id: run_id(&config, seed),
        pool_size: exp.dataset.len(),
        total_stages: exp.num_stages(),
        completed_stages: 0,
        complete: false,
        reproducibility: REPRODUCIBILITY.into(),
    };
    let run_path = run_dir.join(RUN_FILE);
    if run_path.exists() {
        let previous: RunManifest = read_toml(&run_path)?;
        manifest.complete = previous.complete;
    }
    let mut records = completed_records(run_dir)?;
    manifest.completed_stages = records.len();
    let result = |records: Vec<StageRecord>, complete| RunResult {
        seed,
        config: config.clone(),
        pool_size: exp.dataset.len(),
        stages: records,
        complete,
    };
    if manifest.complete {
        return Ok(RunOutcome { result: result(records, true), resumed_from: None, already_complete: true, queried: Vec::new() });
    }

    let resumed_from = records.len().checked_sub(1);
    let mut state = match resumed_from {
        Some(t) => exp.restore(&stage_dir(run_dir, t))?,
        None => exp.initial_state()?,
    };
    write_toml(&run_path, &manifest)?;

    let mut queried = Vec::new();
    for t in records.len()..exp.num_stages() {
        let outcome = exp.run_stage(&mut state, t)?;
        let dir = stage_dir(run_dir, t);
        save_model(&state.model, &dir, seed, t as u64)?;
        PoolCheckpoint { pool: state.pool.clone(), seed, foreign: state.foreign.clone() }.save(&dir)?;
        if let Some(sel) = &outcome.selection {
            let mut buf = Vec::new();
            write_selection_csv(&mut buf, &selection_rows(t, config.strategy, sel))?;
            write_atomic(&dir.join(SELECTIONS_CSV), &buf)?;
        }
        write_toml(&dir.join(STAGE_FILE), &outcome.record)?;
        records.push(outcome.record);
        if outcome.selection.is_some() {
            queried.push((t, outcome.queried));
        }
        write_tables(run_dir, &records)?;
        manifest.completed_stages = records.len();
        manifest.complete = outcome.stop;
        write_toml(&run_path, &manifest)?;
        if outcome.stop {
            break;
        }
    }
    manifest.complete = true;
    write_toml(&run_path, &manifest)?;
    Ok(RunOutcome { result: result(records, true), resumed_from, already_complete: false, queried })
}

/// Continues the run stored in `run_dir` from its own config snapshot.
pub fn resume_run(run_dir: &Path) -> Result<RunOutcome> {
    let config_path = run_dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config = ExperimentConfig::from_toml_str(&text)?;
    let seed = *config.seeds.first().ok_or_else(|| Error::Config("snapshot has no seed".into()))?;
    run_experiment(&config, seed, run_dir)
}

/// Reads a run directory without touching it.
pub fn load_run(run_dir: &Path) -> Result<RunResult> {
    let config_path = run_dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config = ExperimentConfig::from_toml_str(&text)?;
    let manifest: RunManifest = read_toml(&run_dir.join(RUN_FILE))?;
    Ok(RunResult { seed: manifest.seed, config, pool_size: manifest.pool_size, stages: completed_records(run_dir)?, complete: manifest.complete })
}

pub fn seed_dir(experiment_dir: &Path, seed: u64) -> PathBuf {
    experiment_dir.join(format!("seed-{seed}"))
}

/// Runs every configured seed in parallel, one directory per seed under
/// `experiment_dir`. All seeds run to completion or failure before the
/// first error is returned.
pub fn run_seeds(config: &ExperimentConfig, experiment_dir: &Path) -> Result<Vec<RunOutcome>> {
    use rayon::prelude::*;
    config.validate()?;
    let outcomes: Vec<Result<RunOutcome>> =
        config.seeds.par_iter().map(|&s| run_experiment(config, s, &seed_dir(experiment_dir, s))).collect();
    outcomes.into_iter().collect()
}
