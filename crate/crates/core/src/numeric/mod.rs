//! Dense arithmetic with reverse-mode differentiation, plus the Adam
//! optimizer.

mod batch;
mod graph;
mod optim;
mod params;

pub use graph::{
    binary_cross_entropy, cross_entropy, dropout, log_softmax, log_sum_exp, masked_softmax,
    sigmoid, softmax, Graph, Var, PROB_EPS,
};
pub use batch::batch_gradients;
pub use optim::{AdamConfig, OptimizerState};
pub use params::{Gradients, Param, ParamId, ParamStore, Precision};

/// Relative error used by gradient checks: `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
