//! Hyperspectral scenes: binary formats, normalization, stratified
//! splitting and patch extraction.
//!
//! Patches centred on training pixels may overlap test pixels. This
//! follows the usual per-pixel protocol; spatially disjoint splits are out
//! of scope.

mod patches;
mod scene;
mod split;
pub mod synthetic;

pub use patches::{extract_at, extract_patches, mirror_index, patch_batches, PatchBatch};
pub use scene::{
    load_scene, normalize, read_cube, read_labels, save_scene, write_cube, write_labels, HsiScene,
    Normalization, CUBE_MAGIC, LABEL_MAGIC,
};
pub use split::{stratified_split, Pixel, Split, SplitPlan};
pub use synthetic::{synthetic_scene, SyntheticSpec};
