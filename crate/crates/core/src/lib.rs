//! Engine for a lightweight 3D depthwise-separable CNN that classifies
//! hyperspectral image pixels.
//!
//! Layout of the crate:
//!
//! - [`tensor`]: dense row-major tensors generic over [`Real`].
//! - [`ops`]: convolution, batch norm, pooling, dense and softmax kernels.
//! - [`network`]: layer graph, parameters, checkpoints, forward/backward.
//! - [`loss`]: cross entropy, balanced cross entropy and focal loss.
//! - [`analyzer`]: static parameter and FLOP counts.
//! - [`hsi`]: scene formats, normalization, splits and patches.
//! - [`trainer`]: optimizers, the training loop and OA/AA/Kappa metrics.
//! - [`render`]: classification maps as binary PPM.

pub mod analyzer;
pub mod error;
pub mod hsi;
pub mod loss;
pub mod network;
pub mod ops;
pub mod render;
pub mod tensor;
pub mod trainer;

pub use analyzer::{analyze_network, CostReport, LayerCost};
pub use error::{Error, Result};
pub use hsi::{HsiScene, Normalization, PatchBatch, Pixel, SplitPlan};
pub use loss::{AlphaMode, LossConfig, LossKind};
pub use network::{build_network, NetworkConfig, NetworkGraph, ParameterStore};
pub use ops::Mode;
pub use tensor::{Real, Shape5, Tensor};
pub use trainer::{EvalReport, History, OptimizerKind, TrainConfig};
