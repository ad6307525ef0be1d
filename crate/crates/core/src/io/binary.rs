use std::path::Path;

use nalgebra::Vector3;

use super::{read_bytes, write_bytes, IoError};
use crate::geometry::{DepthMap, DisparityMap};

pub const DEPTH_MAGIC: &[u8; 4] = b"DFDM";
pub const LIDAR_MAGIC: &[u8; 4] = b"DFPT";

const KIND_DEPTH: u8 = 0;
const KIND_DISPARITY: u8 = 1;
const DEPTH_HEADER: usize = 16;

/// Contents of a DFDM file.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarMapFile {
    Depth(DepthMap),
    Disparity(DisparityMap),
}

fn encode_scalar(kind: u8, width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(DEPTH_HEADER + 4 * values.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&[kind, 0, 0, 0]);
    for &v in values {
        let v = if v.is_nan() { 0.0f32 } else { v };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    write_bytes(path, &encode_scalar(KIND_DEPTH, depth.width(), depth.height(), depth.values()))
}

pub fn write_disparity(path: &Path, disparity: &DisparityMap) -> Result<(), IoError> {
    write_bytes(path, &encode_scalar(KIND_DISPARITY, disparity.width(), disparity.height(), disparity.values()))
}

fn check_magic(path: &Path, bytes: &[u8], magic: &'static [u8; 4]) -> Result<(), IoError> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(IoError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: std::str::from_utf8(magic).expect("ascii magic"),
        });
    }
    Ok(())
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

fn f32_at(bytes: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn read_scalar_map(path: &Path) -> Result<ScalarMapFile, IoError> {
    let bytes = read_bytes(path)?;
    check_magic(path, &bytes, DEPTH_MAGIC)?;
    if bytes.len() < DEPTH_HEADER {
        return Err(IoError::Truncated { path: path.to_path_buf(), offset: bytes.len(), expected: DEPTH_HEADER, found: bytes.len() });
    }
    let width = u32_at(&bytes, 4) as usize;
    let height = u32_at(&bytes, 8) as usize;
    let kind = bytes[12];
    if kind > KIND_DISPARITY {
        return Err(IoError::Header { path: path.to_path_buf(), offset: 12, message: format!("unknown kind {kind}") });
    }
    if bytes[13..16] != [0, 0, 0] {
        return Err(IoError::Header { path: path.to_path_buf(), offset: 13, message: "reserved bytes are not zero".into() });
    }
    let expected = width.checked_mul(height).and_then(|n| n.checked_mul(4)).ok_or_else(|| IoError::Header {
        path: path.to_path_buf(),
        offset: 4,
        message: format!("size {width}x{height} overflows"),
    })?;
    let found = bytes.len() - DEPTH_HEADER;
    if found != expected {
        return Err(IoError::Truncated { path: path.to_path_buf(), offset: DEPTH_HEADER, expected, found });
    }
    let values: Vec<f32> = (0..width * height).map(|i| f32_at(&bytes, DEPTH_HEADER + 4 * i)).collect();
    let invalid = |e: crate::geometry::GeometryError| IoError::Invalid { path: path.to_path_buf(), message: e.to_string() };
    Ok(if kind == KIND_DEPTH {
        ScalarMapFile::Depth(DepthMap::from_values(width, height, values).map_err(invalid)?)
    } else {
        ScalarMapFile::Disparity(DisparityMap::from_values(width, height, values).map_err(invalid)?)
    })
}

pub fn write_lidar(path: &Path, points: &[Vector3<f64>]) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(8 + 12 * points.len());
    out.extend_from_slice(LIDAR_MAGIC);
    out.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for c in p.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    write_bytes(path, &out)
}

pub fn read_lidar(path: &Path) -> Result<Vec<Vector3<f64>>, IoError> {
    let bytes = read_bytes(path)?;
    check_magic(path, &bytes, LIDAR_MAGIC)?;
    if bytes.len() < 8 {
        return Err(IoError::Truncated { path: path.to_path_buf(), offset: bytes.len(), expected: 8, found: bytes.len() });
    }
    let count = u32_at(&bytes, 4) as usize;
    let expected = count * 12;
    let found = bytes.len() - 8;
    if found != expected {
        return Err(IoError::Truncated { path: path.to_path_buf(), offset: 8, expected, found });
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let o = 8 + 12 * i;
        let p = Vector3::new(f32_at(&bytes, o) as f64, f32_at(&bytes, o + 4) as f64, f32_at(&bytes, o + 8) as f64);
        if !p.iter().all(|c| c.is_finite()) {
            return Err(IoError::Invalid { path: path.to_path_buf(), message: format!("non-finite point at offset {o}") });
        }
        points.push(p);
    }
    Ok(points)
}
