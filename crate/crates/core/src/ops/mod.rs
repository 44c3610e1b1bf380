//! Layer primitives with forward and backward passes.

pub mod conv;
pub mod dense;
pub mod norm;

pub use conv::{
    conv3d_backward, conv3d_forward, depthwise_separable_forward, Conv3dSpec, ConvGrads,
    SeparableSpec,
};
pub use dense::{
    fully_connected_backward, fully_connected_forward, global_avg_pool, global_avg_pool_backward,
    relu_backward, softmax, FcGrads,
};
pub use norm::{batchnorm_backward, batchnorm_forward, BatchNormSpec, BnCache, BnGrads, BnState, Mode};
