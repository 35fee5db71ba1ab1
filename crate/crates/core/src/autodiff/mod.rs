//! Minimal deterministic reverse-mode automatic differentiation.
//!
//! Tensors are dense `f64` arrays. A [`Graph`] records every operation on a
//! linear tape as it executes; [`Graph::backward`] sweeps the tape once in
//! reverse to produce gradients for every leaf that requires them.

mod conv;
mod elementwise;
mod gemm;
pub mod gradcheck;
mod graph;
mod linalg;
pub mod optim;
mod params;
mod reduce;
mod shape;
mod tensor;

pub use conv::ConvGeometry;
pub use elementwise::ElementwiseOp;
pub use gradcheck::{check_gradients, compare_with_finite_differences, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{lr_at, AdamConfig, AdamState, LrSchedule, Moments};
pub use params::{BoundParams, ParamStore};
pub use reduce::{ReduceKind, LAYER_NORM_EPS};
pub use tensor::Tensor;
