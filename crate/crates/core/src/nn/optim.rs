use serde::{Deserialize, Serialize};

use super::layers::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Gradient-descent state over a fixed list of parameter tensors. Weight
/// decay is applied as an L2 term added to the gradient.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64, weight_decay: f64, velocity: Vec<Matrix> },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64, step: i32, m: Vec<Matrix>, v: Vec<Matrix> },
}

pub const SGD_MOMENTUM: f64 = 0.9;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr, momentum: SGD_MOMENTUM, weight_decay, velocity: Vec::new() },
            OptimizerKind::Adam => {
                Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
            }
        }
    }

    /// Applies one update. `params` and `grads` must list tensors in the
    /// same order on every call.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        self.begin_step(grads);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g);
        }
    }

    /// Starts an update round; follow with one `update` per tensor.
    pub fn begin_step(&mut self, grads: &[Matrix]) {
        match self {
            Optimizer::Sgd { velocity, .. } => {
                if velocity.is_empty() {
                    *velocity = grads.iter().map(|g| Matrix::zeros(g.raw_dim())).collect();
                }
            }
            Optimizer::Adam { step, m, v, .. } => {
                if m.is_empty() {
                    *m = grads.iter().map(|g| Matrix::zeros(g.raw_dim())).collect();
                    *v = m.clone();
                }
                *step += 1;
            }
        }
    }

    /// Updates tensor `index` of the current round.
    pub fn update(&mut self, index: usize, p: &mut Matrix, g: &Matrix) {
        match self {
            Optimizer::Sgd { lr, momentum, weight_decay, velocity } => {
                ndarray::Zip::from(p).and(g).and(&mut velocity[index]).for_each(|p, &g, v| {
                    let g = g + *weight_decay * *p;
                    *v = *momentum * *v + g;
                    *p -= *lr * *v;
                });
            }
            Optimizer::Adam { lr, beta1, beta2, eps, weight_decay, step, m, v } => {
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                ndarray::Zip::from(p).and(g).and(&mut m[index]).and(&mut v[index]).for_each(|p, &g, m, v| {
                    let g = g + *weight_decay * *p;
                    *m = *beta1 * *m + (1.0 - *beta1) * g;
                    *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                    *p -= *lr * (*m / c1) / ((*v / c2).sqrt() + *eps);
                });
            }
        }
    }
}
