//! Layers with hand-derived forward/backward passes.
//!
//! Every op is a pure function: same inputs, bit-identical outputs.  Backward
//! passes take the cached forward inputs (or outputs, where that is cheaper)
//! plus the upstream gradient and return gradients for every differentiable
//! argument.  Parameters are kept in a name-keyed [`ParamSet`]; whole-model
//! backward passes return a [`LayerGrads`] keyed the same way so the
//! optimizer and the weight serializer can walk them uniformly.

mod act;
mod conv;
mod init;
mod linear;
mod loss;
mod optim;
mod params;
mod sample;

pub use act::{relu, relu_backward, sigmoid, sigmoid_backward, tanh, tanh_backward};
pub use conv::{conv2d, conv2d_backward};
pub use init::{kaiming_uniform, lecun_uniform};
pub use linear::{linear, linear_backward};
pub use loss::{
    bce_loss, bce_loss_backward, smooth_l1_loss, smooth_l1_loss_backward, SMOOTH_L1_BETA,
};
pub use optim::SgdOptimizer;
pub use params::{LayerGrads, ParamSet};
pub use sample::{
    grid_sample_bilinear, grid_sample_bilinear_backward, upsample_bilinear_2x,
    upsample_bilinear_2x_backward,
};
