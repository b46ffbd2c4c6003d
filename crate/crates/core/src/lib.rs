//! Pool-based active learning that picks samples to label the way an
//! open-set recognizer flags unknowns: a variational classifier supplies
//! class confidence and latent-space outlier probabilities, and the least
//! confident or most novel unlabeled samples go to the oracle.

pub mod alloop;
pub mod datapool;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod report;
pub mod sampling;
pub mod seed;
pub mod vnn;

pub use error::{Error, Result};
