//! Label oracles: reproducible simulated ones, and a queue-backed HTTP
//! service for human annotation.

pub mod client;
pub mod queue;
pub mod service;
mod simulated;

pub use client::HttpOracle;
pub use queue::{AnnotationQueue, Progress, QueryBatch, QueryItem, QueryStatus, Submission};
pub use service::{router, serve, BackgroundServer, LabelSubmission};
pub use simulated::{clean_label, noisy_label, ood_response, NoiseSpec, OracleOutcome, OracleResponse, SimulatedOracle};
