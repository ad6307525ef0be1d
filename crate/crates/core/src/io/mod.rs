//! On-disk formats: depth/disparity and lidar binaries, pose text,
//! detection JSON, PPM color, PLY meshes, dataset manifests and key=value
//! configuration.

mod binary;
mod config;
mod manifest;
mod ply;
mod ppm;
mod text;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use binary::{read_lidar, read_scalar_map, write_depth, write_disparity, write_lidar, ScalarMapFile, DEPTH_MAGIC, LIDAR_MAGIC};
pub use config::{apply_map_config, KeyValues, SynthConfig, MAP_KEYS, SYNTH_KEYS};
pub use manifest::{write_dataset, DatasetManifest, InputKind, MANIFEST_FILE};
pub use ply::{parse_ply, read_ply, write_ply, write_ply_to};
pub use ppm::{read_ppm, write_ppm};
pub use text::{
    detections_from_json, detections_to_json, format_pose, parse_pose, read_detections, read_pose, write_detections,
    write_pose, Box3Record, DetectionRecord,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: missing file")]
    MissingFile { path: PathBuf },
    #[error("{path}: bad magic {found:?} at offset 0, expected {expected:?}")]
    BadMagic { path: PathBuf, found: String, expected: &'static str },
    #[error("{path}: malformed header at offset {offset}: {message}")]
    Header { path: PathBuf, offset: usize, message: String },
    #[error("{path}: truncated at offset {offset}: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, offset: usize, expected: usize, found: usize },
    #[error("{path}: dimension mismatch: file is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch { path: PathBuf, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("{path}: invalid pose at offset {offset}: {message}")]
    InvalidPose { path: PathBuf, offset: usize, message: String },
    #[error("{path}: parse error at {location}: {message}")]
    Parse { path: PathBuf, location: String, message: String },
    #[error("{path}: invalid value: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IoError::MissingFile { path: path.to_path_buf() }
        } else {
            IoError::Io { path: path.to_path_buf(), source }
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(io_err(path))
}

pub(crate) fn read_string(path: &Path) -> Result<String, IoError> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        location: format!("byte {}", e.utf8_error().valid_up_to()),
        message: "not valid UTF-8".into(),
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}
