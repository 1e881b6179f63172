//! Object-detection math toolkit.
//!
//! Box geometry and CIoU, detection losses with analytic gradients,
//! momentum SGD, anchor-free decoding, NMS / Soft-NMS, mosaic augmentation,
//! COCO-style mAP evaluation and the plain-text file formats that tie them
//! together.

pub mod augment;
pub mod error;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod postprocess;

pub use error::{Error, Result};
pub use geometry::{iou, BBox, GroundTruth, IoUBreakdown};
pub use postprocess::Detection;
