//! Experiment configuration, read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datapool::{load_dataset, map_from_groups, DataFormat, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::sampling::{SamplingParams, Strategy};
use crate::vnn::{Architecture, LossConfig, TrainConfig, Variant, DEFAULT_Z_DIM};

/// Where records come from: a file or directory in a known format, or an
/// inline blob generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<DataFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    /// Keep only the first n training records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    /// Keep only the first n evaluation records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_limit: Option<usize>,
}

impl DataSource {
    pub fn synthetic(config: SyntheticConfig) -> Self {
        DataSource { synthetic: Some(config), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.format, &self.synthetic) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => Ok(()),
            (Some(_), None, None) => Err(Error::Config("a data source path needs a format".into())),
            _ => Err(Error::Config("a data source is either {path, format} or {synthetic}".into())),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        self.validate()?;
        let mut dataset = match (&self.path, self.format, &self.synthetic) {
            (Some(path), Some(format), None) => load_dataset(path, format)?,
            (None, None, Some(cfg)) => {
                let d = cfg.generate()?;
                d.validate()?;
                d
            }
            _ => unreachable!("validated above"),
        };
        if let Some(n) = self.train_limit {
            dataset.train_records.truncate(n);
        }
        if let Some(n) = self.eval_limit {
            dataset.eval_records.truncate(n);
        }
        Ok(dataset)
    }

    fn rebase(&mut self, base: &Path) {
        if let Some(p) = &self.path {
            if p.is_relative() {
                self.path = Some(base.join(p));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSpec {
    pub source: DataSource,
    /// Foreign records added to U, as a fraction of the in-distribution
    /// training set.
    pub fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    /// Classes kept out of the initial labeled pool.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_classes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetUnit {
    #[default]
    Count,
    /// Percent of the in-distribution training set.
    Percent,
}

fn default_max_fraction() -> f64 {
    0.4
}

/// Cumulative labeled-pool sizes, one per stage. The first entry is the
/// initial pool; stage t acquires `targets[t+1] - targets[t]` samples.
/// Either `targets` or `initial` + `step` + `stages` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    #[serde(default)]
    pub unit: BudgetUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(default = "default_max_fraction")]
    pub max_labeled_fraction: f64,
}

impl Default for BudgetSpec {
    fn default() -> Self {
        BudgetSpec {
            unit: BudgetUnit::Percent,
            targets: Some(vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]),
            initial: None,
            step: None,
            stages: None,
            max_labeled_fraction: default_max_fraction(),
        }
    }
}

impl BudgetSpec {
    pub fn counts(initial: usize, step: usize, stages: usize) -> Self {
        BudgetSpec {
            unit: BudgetUnit::Count,
            targets: None,
            initial: Some(initial as f64),
            step: Some(step as f64),
            stages: Some(stages),
            max_labeled_fraction: default_max_fraction(),
        }
    }

    fn raw_targets(&self) -> Result<Vec<f64>> {
        match (&self.targets, self.initial, self.step, self.stages) {
            (Some(t), None, None, None) => Ok(t.clone()),
            (None, Some(i), Some(s), Some(n)) => Ok((0..n).map(|k| i + s * k as f64).collect()),
            _ => Err(Error::Config("budget needs either `targets` or all of `initial`, `step`, `stages`".into())),
        }
    }

    /// Labeled-pool targets in samples for a training set of `n`.
    pub fn resolve(&self, n: usize) -> Result<Vec<usize>> {
        if !(self.max_labeled_fraction > 0.0 && self.max_labeled_fraction <= 1.0) {
            return Err(Error::Config(format!("max_labeled_fraction {} must lie in (0, 1]", self.max_labeled_fraction)));
        }
        let raw = self.raw_targets()?;
        if raw.is_empty() {
            return Err(Error::Config("budget schedule is empty".into()));
        }
        let targets: Vec<usize> = raw
            .iter()
            .map(|&v| {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("budget entry {v} must be positive")));
                }
                Ok(match self.unit {
                    BudgetUnit::Count => v.round() as usize,
                    BudgetUnit::Percent => (v / 100.0 * n as f64).round() as usize,
                })
            })
            .collect::<Result<_>>()?;
        if targets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("budget targets {targets:?} must be strictly increasing")));
        }
        let cap = self.max_labeled_fraction * n as f64;
        let last = *targets.last().expect("non-empty");
        if last as f64 > cap + 1e-9 {
            return Err(Error::Config(format!(
                "budget schedule reaches {last} labeled samples, above max_labeled_fraction·N = {cap}"
            )));
        }
        if targets[0] == 0 || targets[0] >= n {
            return Err(Error::Config(format!("initial labeled pool {} must lie in 1..{n}", targets[0])));
        }
        Ok(targets)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub z_dim: usize,
    /// Defaults to a dense network for flat data and LeNet for images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { z_dim: DEFAULT_Z_DIM, architecture: None }
    }
}

fn default_deadline() -> f64 {
    3600.0
}

fn default_poll_ms() -> u64 {
    500
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    /// True labels; foreign samples are rejected.
    #[default]
    Clean,
    /// Labels corrupted within superclasses at `rate`. `superclasses` lists
    /// the class groups; the dataset's own hierarchy is used when absent.
    Noisy {
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        superclasses: Option<Vec<Vec<usize>>>,
    },
    /// Same answers as `clean`; named for runs whose pool holds foreign data.
    Ood,
    /// A person answering through the annotation service.
    Human {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
        #[serde(default = "default_deadline")]
        deadline_secs: f64,
        #[serde(default = "default_poll_ms")]
        poll_ms: u64,
    },
}

impl OracleSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OracleSpec::Clean => "clean",
            OracleSpec::Noisy { .. } => "noisy",
            OracleSpec::Ood => "ood",
            OracleSpec::Human { .. } => "human",
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Reinitialize the network before every stage instead of continuing.
    #[serde(default)]
    pub cold_start: bool,
}

fn default_variant() -> Variant {
    Variant::M1
}

fn default_strategy() -> Strategy {
    Strategy::Uncertainty
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec) -> Self {
        ExperimentConfig {
            name: default_name(),
            dataset,
            variant: default_variant(),
            strategy: default_strategy(),
            budget: BudgetSpec::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            sampling: SamplingParams::default(),
            oracle: OracleSpec::default(),
            seeds: default_seeds(),
            cold_start: false,
        }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("name {:?} must be non-empty and free of path separators", self.name)));
        }
        self.dataset.source.validate()?;
        if let Some(ood) = &self.dataset.ood {
            ood.source.validate()?;
            if !(ood.fraction > 0.0 && ood.fraction < 1.0) {
                return Err(Error::Config(format!("dataset.ood.fraction {} must lie in (0, 1)", ood.fraction)));
            }
        }
        if !(self.budget.max_labeled_fraction > 0.0 && self.budget.max_labeled_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "budget.max_labeled_fraction {} must lie in (0, 1]",
                self.budget.max_labeled_fraction
            )));
        }
        self.budget.raw_targets()?;
        if self.model.z_dim == 0 {
            return Err(Error::Config("model.z_dim must be positive".into()));
        }
        self.train.validate()?;
        self.loss.validate()?;
        self.sampling.validate()?;
        match &self.oracle {
            OracleSpec::Noisy { rate, .. } if !(0.0..=1.0).contains(rate) => {
                return Err(Error::Config(format!("oracle.rate {rate} must lie in [0, 1]")));
            }
            OracleSpec::Human { deadline_secs, .. } if !(*deadline_secs > 0.0) => {
                return Err(Error::Config("oracle.deadline_secs must be positive".into()));
            }
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        Ok(())
    }

    /// Parse errors carry the line and column of the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let config: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, applies `overrides` in order, resolves relative data
    /// paths against the file's directory, and validates.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = if overrides.is_empty() {
            Self::from_toml_str(&text)
        } else {
            let mut table = parse_table(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            for (key, value) in overrides {
                apply_override(&mut table, key, value)?;
            }
            Self::from_table(table)
        };
        let mut config = parsed.map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.dataset.source.rebase(base);
        if let Some(ood) = &mut config.dataset.ood {
            ood.source.rebase(base);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Contract(format!("config does not serialize: {e}")))
    }

    /// The same experiment restricted to one seed.
    pub fn for_seed(&self, seed: u64) -> Self {
        ExperimentConfig { seeds: vec![seed], ..self.clone() }
    }

    /// Class→superclass map for the noisy oracle.
    pub fn superclass_map(&self, dataset: &Dataset) -> Result<std::collections::BTreeMap<usize, usize>> {
        match &self.oracle {
            OracleSpec::Noisy { superclasses: Some(groups), .. } => {
                let map = map_from_groups(groups);
                if (0..dataset.num_classes).any(|c| !map.contains_key(&c)) {
                    return Err(Error::Config("oracle.superclasses must cover every class".into()));
                }
                Ok(map)
            }
            _ => dataset
                .superclass_map
                .clone()
                .ok_or_else(|| Error::Config(format!("dataset {} has no superclass map; set oracle.superclasses", dataset.name))),
        }
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))
}

/// Sets the dotted `key` to `value`. The value is read as a TOML literal
/// when it parses as one and as a bare string otherwise. Changing a `kind`
/// tag clears its sibling keys.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for part in path {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a table")))?;
    }
    // switching a tagged variant drops the old variant's fields
    if *last == "kind" && node.get("kind").is_some_and(|old| *old != parsed) {
        node.clear();
    }
    node.insert(last.to_string(), parsed);
    Ok(())
}

/// `KEY=VALUE` pairs.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("override {s:?} is not KEY=VALUE")))
}
