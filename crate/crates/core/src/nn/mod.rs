//! Array machinery for the segmentation network: convolution, activations,
//! the network itself, and its optimizer.

pub mod conv;
pub mod network;
pub mod ops;
pub mod optim;

pub use conv::{conv2d, conv2d_backward};
pub use network::{backward, forward, forward_cached, init_params, ForwardCache, ModelParams, NetworkConfig};
pub use ops::{relu, relu_backward, softmax_backward, softmax_pixelwise};
pub use optim::{ema_update, poly_lr, sgd_nesterov_step, OptimizerState};
