//! Dynamic-scene dense mapping from stereo depth and object detections.
//!
//! A static background and every tracked object are fused into separate
//! sparse TSDF volumes; moving objects are carried along by their detected
//! poses so the background is never smeared by them.

pub mod decompose;
pub mod dynamic_map;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod tracking;
pub mod tsdf;

/// Persistent identifier of a tracked object across frames.
pub type TrackletId = u64;
