//! The depthwise-separable HSI classifier as a layer graph.
//!
//! ```text
//! input (n,1,P,P,B)
//!   └ stem 1×1×7 conv, spectral stride 2 → BN → ReLU            (24 ch)
//!       ├─────────────────────────────────────────────┐ skip
//!       ├ branch1: group 1×1×1 (3 groups) → BN → ReLU  │
//!       │          depthwise 3×3×3 → pointwise → BN → ReLU (12 ch)
//!       ├ branch2: same prefix, then a second           │
//!       │          depthwise 3×3×3 → pointwise → BN → ReLU (12 ch)
//!       └ concat [stem, branch1, branch2]                (48 ch)
//!           depthwise 3×3×D (collapses spectrum) → pointwise → BN → ReLU (60 ch)
//!           global average pool → fully connected (classes)
//! ```
//!
//! Depthwise convolutions always feed their pointwise partner directly.

mod exec;
mod graph;
mod params;

pub use exec::{backward, forward, predict, BackwardPass, ForwardPass};
pub use graph::{
    build_network, table_notation, BiasConvention, BranchLayout, LayerKind, LayerSpec,
    NetworkConfig, NetworkGraph,
};
pub use params::{
    bias_key, bn_key, init_parameters, BN_KEYS, is_trainable, load_checkpoint, read_entries,
    save_checkpoint, weight_key, write_entries, Gradients, ParameterStore, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION, CONFIG_ENTRY,
};
