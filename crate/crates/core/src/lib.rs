//! Motion-guided objectness loss for dense self-supervised features.
//!
//! The loss compares, inside small windows of a feature map, how similar each
//! location's feature is to an anchor location against how similar its
//! optical-flow vector is. Pixels that move together should have similar
//! features. Windows are weighted by how much they move, so static regions
//! contribute nothing.
//!
//! Modules, bottom up:
//!
//! * [`flow_codec`]: `.flo` I/O and the packed 16-bit TIFF flow store.
//! * [`preprocess`]: background-motion removal and flow-norm maps.
//! * [`patch_grid`]: sliding-window patch enumeration and extraction.
//! * [`similarity`]: anchor choice, cosine / flow-kernel similarity, softmax.
//! * [`loss`]: per-patch KL, motion weights, total loss, gradient and
//!   finite-difference checking.
//! * [`tensor_file`]: the on-disk container for feature and saliency maps.

pub mod flow_codec;
pub mod loss;
pub mod patch_grid;
pub mod preprocess;
pub mod similarity;
pub mod tensor_file;

pub use flow_codec::{CodecError, FlowField, PackedImage, QuantizedFlow};
pub use loss::{
    finite_diff_check, flow_loss, flow_loss_grad, FeatureMap, GradCheckReport, LossError,
    LossReport, PatchLoss, Sampling,
};
pub use patch_grid::{build_grid, GridSpec, PatchGrid, Window};
pub use preprocess::{flow_norm_map, stabilize, ScalarMap};
pub use similarity::{LossParams, SaliencyMap};
pub use tensor_file::{TensorData, TensorFile};
