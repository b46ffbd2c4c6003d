//! Blocking client used by the labeling loop when a human is the oracle.

use std::time::{Duration, Instant};

use base64::Engine;

use super::queue::{Progress, QueryBatch, QueryItem};
use super::service::{ClosedQuery, LabelSubmission};
use super::{OracleOutcome, OracleResponse};
use crate::datapool::{Corpus, FeatureShape, SampleId};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpOracle {
    pub base_url: String,
    pub run_id: String,
    pub num_classes: usize,
    pub poll_interval: Duration,
    /// Queries unanswered after this long go back to the unlabeled pool.
    pub deadline: Duration,
    agent: ureq::Agent,
}

fn service_err(e: ureq::Error) -> Error {
    Error::Service(e.to_string())
}

/// Pixels as interleaved 8-bit bytes, row-major; flat vectors become a
/// one-row grayscale strip. Values are clipped to [0, 1] first.
pub fn render(features: &[f32], shape: FeatureShape) -> (String, usize, usize, usize) {
    let (c, h, w) = match shape {
        FeatureShape::Image { channels, height, width } => (channels, height, width),
        FeatureShape::Flat { dim } => (1, 1, dim),
    };
    let mut bytes = vec![0u8; c * h * w];
    for ch in 0..c {
        for p in 0..h * w {
            bytes[p * c + ch] = (features[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    (base64::engine::general_purpose::STANDARD.encode(bytes), w, h, c)
}

impl HttpOracle {
    pub fn new(base_url: impl Into<String>, run_id: impl Into<String>, num_classes: usize) -> Self {
        HttpOracle {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            run_id: run_id.into(),
            num_classes,
            poll_interval: Duration::from_millis(500),
            deadline: Duration::from_secs(3600),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    pub fn enqueue(&self, corpus: &Corpus, shape: FeatureShape, stage: usize, ids: &[SampleId]) -> Result<()> {
        let items = ids
            .iter()
            .map(|&id| {
                let (image_base64, width, height, channels) = render(&corpus.get(id)?.features, shape);
                Ok(QueryItem { sample_id: id, image_base64, width, height, channels })
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = QueryBatch { run_id: self.run_id.clone(), stage, items, num_classes: Some(self.num_classes) };
        self.agent.post(format!("{}/v1/queries", self.base_url)).send_json(&batch).map_err(service_err)?;
        Ok(())
    }

    pub fn progress(&self) -> Result<Progress> {
        self.agent
            .get(format!("{}/v1/runs/{}/progress", self.base_url, self.run_id))
            .call()
            .map_err(service_err)?
            .body_mut()
            .read_json()
            .map_err(service_err)
    }

    pub fn close(&self, stage: usize) -> Result<Vec<ClosedQuery>> {
        self.agent
            .post(format!("{}/v1/runs/{}/stages/{stage}/close", self.base_url, self.run_id))
            .send_empty()
            .map_err(service_err)?
            .body_mut()
            .read_json()
            .map_err(service_err)
    }

    pub fn submit(&self, submission: &LabelSubmission) -> Result<()> {
        self.agent.post(format!("{}/v1/labels", self.base_url)).send_json(submission).map_err(service_err)?;
        Ok(())
    }

    /// Enqueues `ids`, waits until every one is answered or the deadline
    /// passes, and returns responses in query order. Unanswered queries come
    /// back `Pending`.
    pub fn answer(&self, corpus: &Corpus, shape: FeatureShape, stage: usize, ids: &[SampleId]) -> Result<Vec<OracleResponse>> {
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        self.enqueue(corpus, shape, stage, ids)?;
        let started = Instant::now();
        while self.progress()?.pending > 0 && started.elapsed() < self.deadline {
            std::thread::sleep(self.poll_interval);
        }
        let closed: std::collections::HashMap<SampleId, OracleOutcome> =
            self.close(stage)?.into_iter().map(|c| (c.sample_id, c.outcome)).collect();
        Ok(ids
            .iter()
            .map(|&id| OracleResponse { sample_id: id, outcome: closed.get(&id).copied().unwrap_or(OracleOutcome::Pending) })
            .collect())
    }
}
