//! Minimal CNN engine: tensors, parameter layouts and a differentiable tape.

pub mod graph;
pub mod layout;
pub mod tensor;

pub use graph::{softmax_cross_entropy, Graph, RunningUpdate, Var, BN_MOMENTUM};
pub use layout::{BatchNorm, Buffer, Conv2d, Init, Layout, Linear, ModelState, ParamTensor};
pub use tensor::Tensor;
