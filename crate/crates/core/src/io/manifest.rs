use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::binary::{read_lidar, read_scalar_map, write_depth, write_disparity, write_lidar, ScalarMapFile};
use super::ppm::{read_ppm, write_ppm};
use super::text::{read_detections, read_pose, write_detections, write_pose};
use super::{read_string, write_bytes, IoError};
use crate::dynamic_map::FramePacket;
use crate::geometry::{disparity_to_depth, DisparityMap, Intrinsics};

/// What the per-frame scalar maps hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    #[default]
    Depth,
    /// Converted to depth with `baseline * fx / disparity` when loaded.
    Disparity,
}

impl std::str::FromStr for InputKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "depth" => Ok(InputKind::Depth),
            "disparity" => Ok(InputKind::Disparity),
            other => Err(format!("unknown input '{other}' (expected depth or disparity)")),
        }
    }
}

/// JSON description of a sequence. Path patterns are relative to the
/// manifest's directory; `{frame}` expands to the six-digit frame index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub frames: usize,
    pub intrinsics: Intrinsics,
    pub input: InputKind,
    /// Use the `track_id` fields of the detection files instead of tracking.
    pub track_ids: bool,
    pub depth: String,
    pub color: String,
    pub pose: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lidar: Option<String>,
    #[serde(skip)]
    root: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    /// Reads a manifest and checks that every referenced file exists.
    pub fn open(path: &Path) -> Result<Self, IoError> {
        let text = read_string(path)?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.intrinsics.validate().map_err(|e| IoError::Invalid { path: path.to_path_buf(), message: e.to_string() })?;
        if m.frames == 0 {
            return Err(IoError::Invalid { path: path.to_path_buf(), message: "manifest lists no frames".into() });
        }
        for pattern in [&m.depth, &m.color, &m.pose] {
            if !pattern.contains("{frame}") {
                return Err(IoError::Invalid { path: path.to_path_buf(), message: format!("pattern '{pattern}' lacks {{frame}}") });
            }
        }
        for f in 0..m.frames {
            for p in m.frame_paths(f) {
                if !p.is_file() {
                    return Err(IoError::MissingFile { path: p });
                }
            }
        }
        Ok(m)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn expand(&self, pattern: &str, frame: usize) -> PathBuf {
        self.root.join(pattern.replace("{frame}", &format!("{frame:06}")))
    }

    fn frame_paths(&self, frame: usize) -> Vec<PathBuf> {
        let mut out = vec![self.expand(&self.depth, frame), self.expand(&self.color, frame), self.expand(&self.pose, frame)];
        out.extend(self.detections.as_deref().map(|p| self.expand(p, frame)));
        out.extend(self.lidar.as_deref().map(|p| self.expand(p, frame)));
        out
    }

    pub fn lidar_path(&self, frame: usize) -> Option<PathBuf> {
        self.lidar.as_deref().map(|p| self.expand(p, frame))
    }

    pub fn detections_path(&self, frame: usize) -> Option<PathBuf> {
        self.detections.as_deref().map(|p| self.expand(p, frame))
    }

    /// Parses and validates every file of frame `index`.
    pub fn load_frame(&self, index: usize) -> Result<FramePacket, IoError> {
        if index >= self.frames {
            return Err(IoError::Invalid { path: self.root.join(MANIFEST_FILE), message: format!("frame {index} out of range ({} frames)", self.frames) });
        }
        let k = &self.intrinsics;
        let dims = |path: &Path, w: usize, h: usize| {
            if w != k.width || h != k.height {
                Err(IoError::DimensionMismatch { path: path.to_path_buf(), got_w: w, got_h: h, want_w: k.width, want_h: k.height })
            } else {
                Ok(())
            }
        };

        let depth_path = self.expand(&self.depth, index);
        let depth = match (read_scalar_map(&depth_path)?, self.input) {
            (ScalarMapFile::Depth(d), InputKind::Depth) => {
                dims(&depth_path, d.width(), d.height())?;
                d
            }
            (ScalarMapFile::Disparity(d), InputKind::Disparity) => {
                dims(&depth_path, d.width(), d.height())?;
                disparity_to_depth(&d, k)
            }
            (_, expected) => {
                return Err(IoError::Header {
                    path: depth_path,
                    offset: 12,
                    message: format!("map kind does not match manifest input '{}'", if expected == InputKind::Depth { "depth" } else { "disparity" }),
                })
            }
        };

        let color_path = self.expand(&self.color, index);
        let color = read_ppm(&color_path)?;
        dims(&color_path, color.width, color.height)?;

        let camera_pose = read_pose(&self.expand(&self.pose, index))?;
        let mut detections = match self.detections_path(index) {
            Some(p) => read_detections(&p)?,
            None => Vec::new(),
        };
        if !self.track_ids {
            detections.iter_mut().for_each(|(id, _)| *id = None);
        }
        let lidar_points = self.lidar_path(index).map(|p| read_lidar(&p)).transpose()?;

        Ok(FramePacket { frame_index: index as u64, depth, color, camera_pose, detections, lidar_points })
    }
}

/// Writes `packets` as a dataset under `dir` and returns the manifest.
/// Packets are stored in order as frames `0..n`.
pub fn write_dataset(
    dir: &Path,
    k: &Intrinsics,
    packets: &[FramePacket],
    input: InputKind,
    track_ids: bool,
) -> Result<DatasetManifest, IoError> {
    let with_lidar = packets.iter().any(|p| p.lidar_points.is_some());
    let manifest = DatasetManifest {
        frames: packets.len(),
        intrinsics: *k,
        input,
        track_ids,
        depth: match input {
            InputKind::Depth => "depth/{frame}.dfdm".into(),
            InputKind::Disparity => "disparity/{frame}.dfdm".into(),
        },
        color: "color/{frame}.ppm".into(),
        pose: "pose/{frame}.txt".into(),
        detections: Some("detections/{frame}.json".into()),
        lidar: with_lidar.then(|| "lidar/{frame}.dfpt".into()),
        root: dir.to_path_buf(),
    };
    for (f, p) in packets.iter().enumerate() {
        let depth_path = manifest.expand(&manifest.depth, f);
        match input {
            InputKind::Depth => write_depth(&depth_path, &p.depth)?,
            InputKind::Disparity => {
                let bf = (k.baseline * k.fx) as f32;
                let values = p.depth.values().iter().map(|&z| bf / z).collect();
                let disparity = DisparityMap::from_values(p.depth.width(), p.depth.height(), values)
                    .map_err(|e| IoError::Invalid { path: depth_path.clone(), message: e.to_string() })?;
                write_disparity(&depth_path, &disparity)?;
            }
        }
        write_ppm(&manifest.expand(&manifest.color, f), &p.color)?;
        write_pose(&manifest.expand(&manifest.pose, f), &p.camera_pose)?;
        let dets: Vec<_> = p.detections.iter().map(|(id, d)| (id.filter(|_| track_ids), d.clone())).collect();
        write_detections(&manifest.detections_path(f).expect("set above"), &dets)?;
        if let Some(path) = manifest.lidar_path(f) {
            write_lidar(&path, p.lidar_points.as_deref().unwrap_or(&[]))?;
        }
    }
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_bytes(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}
