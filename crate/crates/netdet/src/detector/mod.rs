//! Single-shot detector over the reconfigured pyramid: anchors, matching,
//! multibox training, and decoded/suppressed prediction.

pub mod anchors;
pub mod boxes;
pub mod matching;
pub mod model;
pub mod predict;
pub mod train;

pub use anchors::{generate_anchors, AnchorConfig};
pub use boxes::{decode, encode, iou, nms, Anchor, BBox, Detection, GroundTruthBox, ScaleClass};
pub use matching::{build_targets, match_anchors};
pub use model::{Model, ModelConfig, Variant};
pub use predict::{predict, PredictConfig};
pub use train::{train, Example, TrainConfig};
