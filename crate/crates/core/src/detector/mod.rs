//! Anchor-free center-heatmap object detector: box utilities, target
//! encoding and decoding, the network, training and checkpoints.

mod boxes;
mod config;
mod model;
mod targets;
mod train;

pub use boxes::{iou, nms, rank_order, Detection};
pub use config::DetectorConfig;
pub use model::{detection_loss, DetectorModel, HeadTensors, TargetTensors, SIZE_LOSS_WEIGHT};
pub use targets::{decode, encode_boxes, encode_targets, DetTargets, HeadMaps};
pub use train::{
    detect_all, read_detections, train_detector, write_detections, DetLossRecord,
    DetectionRecord, DetectorCheckpoint, DETECTOR_FORMAT_VERSION,
};
