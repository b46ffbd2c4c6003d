//! Minimal dense/convolutional network toolkit with hand-written
//! backpropagation, in f64 so gradients can be checked numerically.

pub mod layers;
pub mod optim;

pub use layers::{Cache, Conv2d, Dense, ImageDims, Layer, Matrix, Sequential};
pub use optim::{Optimizer, OptimizerKind};
