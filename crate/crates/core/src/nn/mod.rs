//! Small feed-forward networks (dense, convolution, max-pool, ReLU) with
//! hand-written backpropagation and plain SGD.

mod gemm;
mod network;
mod params;
mod spec;
mod tensor;

pub use network::Network;
pub use params::{sgd_step, ParamVector};
pub(crate) use params::sgd_step_in_place;
pub use spec::{ActShape, Layer, NetworkSpec};
pub use tensor::{argmax, softmax_rows, Tensor};
