//! Layer kernels, network specs and the forward/backward runtime.

pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod perceptron;
pub mod spec;

pub use layers::{accuracy, argmax_rows, cross_entropy_loss, softmax};
pub use network::{
    net_backward, net_backward_from_logits, net_backward_with_input, net_forward, net_forward_from, predict, ForwardTrace, Gradients,
    LayerParams, Mode, NetworkState,
};
pub use perceptron::Perceptron;
pub use spec::{build_alexnet_mini, build_emex, LayerKind, LayerSpec, NetworkSpec};
