//! Dense tensors, reverse-mode differentiation, initialization, Adadelta and
//! checkpoint serialization.

pub mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use params::{
    adadelta_step, glorot_bound, glorot_uniform, AdadeltaConfig, Gradients, ParamId, Parameter, ParameterStore,
};
pub use tensor::{log_softmax, softmax, Tensor};
