//! Differentiable-computation substrate: tensors, a reverse-mode tape,
//! AdamW, cosine annealing, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod real;
pub mod schedule;
pub mod tensor;

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use graph::{ConvGeometry, Gradients, Graph, Var};
pub use optim::{AdamW, OptimizerSpec};
pub use params::{Bound, ParamId, ParamSet};
pub use real::{DType, Real};
pub use schedule::{cosine_lr, ScheduleKind, ScheduleSpec};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
