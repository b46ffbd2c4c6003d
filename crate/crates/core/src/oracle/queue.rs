//! Annotation queue shared by the labeling loop and a human annotator.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::OracleOutcome;
use crate::datapool::SampleId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryItem {
    pub sample_id: SampleId,
    pub image_base64: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub run_id: String,
    pub stage: usize,
    pub items: Vec<QueryItem>,
    /// Label range for this batch; the queue default applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

/// What an annotator submits for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Submission {
    Label { label: usize },
    Unknown { unknown: bool },
}

impl Submission {
    pub fn outcome(self) -> OracleOutcome {
        match self {
            Submission::Label { label } => OracleOutcome::Label(label),
            Submission::Unknown { .. } => OracleOutcome::RejectOod,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStatus {
    Pending,
    Answered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryView {
    pub run_id: String,
    pub stage: usize,
    #[serde(flatten)]
    pub item: QueryItem,
    pub status: QueryStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OracleOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub sample_id: SampleId,
    pub previous: OracleOutcome,
    pub replacement: OracleOutcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub pending: usize,
    pub labeled: usize,
    pub rejected: usize,
}

#[derive(Debug)]
struct Entry {
    run_id: String,
    stage: usize,
    item: QueryItem,
    num_classes: usize,
    enqueued: Instant,
    outcome: Option<OracleOutcome>,
}

#[derive(Debug, Default)]
struct State {
    entries: IndexMap<SampleId, Entry>,
    audit: Vec<AuditEntry>,
    closed: BTreeMap<String, Progress>,
}

#[derive(Debug)]
pub struct AnnotationQueue {
    default_classes: usize,
    state: Mutex<State>,
}

impl AnnotationQueue {
    pub fn new(default_classes: usize) -> Self {
        AnnotationQueue { default_classes, state: Mutex::new(State::default()) }
    }

    /// Adds the batch; re-enqueueing a sample replaces its previous entry.
    pub fn enqueue(&self, batch: QueryBatch) -> Result<usize> {
        let num_classes = batch.num_classes.unwrap_or(self.default_classes);
        if num_classes == 0 {
            return Err(Error::Contract("num_classes must be positive".into()));
        }
        let mut state = self.state.lock();
        let n = batch.items.len();
        for item in batch.items {
            state.entries.insert(
                item.sample_id,
                Entry { run_id: batch.run_id.clone(), stage: batch.stage, item, num_classes, enqueued: Instant::now(), outcome: None },
            );
        }
        Ok(n)
    }

    pub fn list(&self, status: Option<QueryStatus>, run_id: Option<&str>) -> Vec<QueryView> {
        let state = self.state.lock();
        state
            .entries
            .values()
            .filter(|e| run_id.is_none_or(|r| e.run_id == r))
            .map(|e| QueryView {
                run_id: e.run_id.clone(),
                stage: e.stage,
                item: e.item.clone(),
                status: if e.outcome.is_some() { QueryStatus::Answered } else { QueryStatus::Pending },
                outcome: e.outcome,
            })
            .filter(|v| status.is_none_or(|s| v.status == s))
            .collect()
    }

    /// Records an answer. A second answer for the same sample replaces the
    /// first and is logged in the audit trail.
    pub fn submit(&self, id: SampleId, submission: Submission) -> Result<OracleOutcome> {
        let mut state = self.state.lock();
        let entry = state.entries.get_mut(&id).ok_or(Error::PoolMembership { id, reason: "is not queued" })?;
        match submission {
            Submission::Label { label } if label >= entry.num_classes => {
                return Err(Error::LabelRange { label, num_classes: entry.num_classes });
            }
            Submission::Unknown { unknown: false } => return Err(Error::Contract("\"unknown\" must be true".into())),
            _ => {}
        }
        let outcome = submission.outcome();
        if let Some(previous) = entry.outcome.replace(outcome) {
            tracing::info!(%id, ?previous, replacement = ?outcome, "annotation overwritten");
            state.audit.push(AuditEntry { sample_id: id, previous, replacement: outcome });
        }
        Ok(outcome)
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.state.lock().audit.clone()
    }

    pub fn progress(&self, run_id: &str) -> Progress {
        let state = self.state.lock();
        let mut p = state.closed.get(run_id).copied().unwrap_or_default();
        for e in state.entries.values().filter(|e| e.run_id == run_id) {
            match e.outcome {
                None | Some(OracleOutcome::Pending) => p.pending += 1,
                Some(OracleOutcome::Label(_)) => p.labeled += 1,
                Some(OracleOutcome::RejectOod) => p.rejected += 1,
            }
        }
        p
    }

    /// Removes every entry of (run, stage) and returns its outcomes;
    /// unanswered entries come back as `Pending`.
    pub fn close_stage(&self, run_id: &str, stage: usize) -> Vec<(SampleId, OracleOutcome)> {
        let mut state = self.state.lock();
        let mut out = Vec::new();
        state.entries.retain(|&id, e| {
            if e.run_id == run_id && e.stage == stage {
                out.push((id, e.outcome.unwrap_or(OracleOutcome::Pending)));
                false
            } else {
                true
            }
        });
        let tally = state.closed.entry(run_id.to_string()).or_default();
        for (_, o) in &out {
            match o {
                OracleOutcome::Label(_) => tally.labeled += 1,
                OracleOutcome::RejectOod => tally.rejected += 1,
                OracleOutcome::Pending => {}
            }
        }
        out
    }

    /// Drops pending entries older than `deadline`; returns their ids.
    pub fn expire(&self, deadline: Duration) -> Vec<SampleId> {
        let mut state = self.state.lock();
        let mut expired = Vec::new();
        state.entries.retain(|&id, e| {
            let stale = e.outcome.is_none() && e.enqueued.elapsed() >= deadline;
            if stale {
                expired.push(id);
            }
            !stale
        });
        expired
    }
}
