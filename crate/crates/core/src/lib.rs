//! Anchor-based multi-person pose estimation below the network: head-tensor
//! decoding and encoding, CIoU/OKS/confidence losses with analytic gradients,
//! detection post-processing, OKS-based AP/AR evaluation, and a gradient-descent
//! harness that fits raw head channels directly.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root name the common instantiations.

// `!(x > 0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchors;
pub mod assign;
pub mod codec;
pub mod error;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod pose;
pub mod postprocess;
pub mod scalar;
pub mod synth;

pub use anchors::{build_grid, AnchorSpec, GridDims, ScaleSpec};
pub use assign::{assign, AssignConfig, Assignment};
pub use codec::{decode, encode, letterbox, unletterbox, HeadTensor, LetterboxTransform, Slot};
pub use error::{Error, Result};
pub use eval::{evaluate, AreaRange, EvalReport};
pub use geometry::{ciou, iou, BBox};
pub use loss::{oks, total_loss, KptLossKind, LossBreakdown, LossConfig, LossWeights};
pub use pose::{Detection, GtKeypoint, KptWeights, PoseInstance, PredKeypoint, Visibility, NUM_KEYPOINTS};
pub use postprocess::{nms, postprocess, PostprocessConfig};
pub use scalar::Scalar;

pub type BBoxF32 = BBox<f32>;
pub type BBoxF64 = BBox<f64>;
pub type DetectionF32 = Detection<f32>;
pub type DetectionF64 = Detection<f64>;
pub type PoseInstanceF32 = PoseInstance<f32>;
pub type PoseInstanceF64 = PoseInstance<f64>;
pub type HeadTensorF32 = HeadTensor<f32>;
pub type HeadTensorF64 = HeadTensor<f64>;
pub type AnchorSpecF32 = AnchorSpec<f32>;
pub type AnchorSpecF64 = AnchorSpec<f64>;
