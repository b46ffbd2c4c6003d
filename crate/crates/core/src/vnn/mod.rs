//! Variational neural network: encoder to a diagonal-Gaussian latent, a
//! single linear classifier on the latent, and for M2 a decoder.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod train;

pub use checkpoint::{load_model, save_model, ModelManifest};
pub use loss::{loss_and_gradients, m1_loss, m2_loss, LossBreakdown, LossConfig, Objective, Reconstruction};
pub use model::{
    argmax, kl_term, reparameterize, softmax_rows, to_matrix, Architecture, LatentPosterior, Variant, VnnModel, DEFAULT_Z_DIM,
    LOGVAR_CLAMP,
};
pub use train::{evaluate, predict, stack, train_stage, TrainConfig};
