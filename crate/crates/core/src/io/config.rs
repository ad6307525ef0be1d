use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{read_string, IoError, InputKind};
use crate::dynamic_map::MapConfig;
use crate::oracle::{NoiseSpec, SceneScript};
use crate::tsdf::DEFAULT_TRUNC_VOXELS;

/// `key = value` lines; `#` starts a comment. Later entries override earlier
/// ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    source: PathBuf,
    entries: BTreeMap<String, (String, Option<usize>)>,
}

impl KeyValues {
    pub fn new(source: impl Into<PathBuf>) -> Self {
        Self { source: source.into(), entries: BTreeMap::new() }
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self, IoError> {
        let mut kv = Self::new(source);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(IoError::Parse {
                    path: source.to_path_buf(),
                    location: format!("line {}", i + 1),
                    message: format!("expected key = value, found '{line}'"),
                });
            };
            kv.entries.insert(key.trim().to_string(), (value.trim().to_string(), Some(i + 1)));
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read_string(path)?, path)
    }

    /// Overrides (or adds) a value, e.g. from a command-line flag.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), None));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn where_(&self, key: &str) -> String {
        match self.entries.get(key).and_then(|(_, l)| *l) {
            Some(line) => format!("line {line}"),
            None => "override".into(),
        }
    }

    fn invalid(&self, key: &str, message: impl std::fmt::Display) -> IoError {
        IoError::Parse { path: self.source.clone(), location: self.where_(key), message: format!("{key}: {message}") }
    }

    /// Parsed value of `key`, if present.
    pub fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>, IoError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| self.invalid(key, format!("'{v}': {e}"))),
        }
    }

    fn check_known(&self, known: &[&str]) -> Result<(), IoError> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(self.invalid(k, "unknown key")),
            None => Ok(()),
        }
    }
}

pub const MAP_KEYS: &[&str] = &[
    "mode",
    "strategy",
    "background_voxel",
    "object_voxel",
    "background_trunc",
    "object_trunc",
    "max_depth",
    "max_weight",
    "block_side",
    "iou_threshold",
    "max_misses",
    "min_object_pixels",
    "hull_mask",
];

/// Applies reconstruction settings from `kv` on top of `config`. A voxel size
/// given without a truncation distance resets the truncation to 4 voxels.
pub fn apply_map_config(config: &mut MapConfig, kv: &KeyValues) -> Result<(), IoError> {
    kv.check_known(MAP_KEYS)?;
    if let Some(v) = kv.value("mode")? {
        config.mode = v;
    }
    if let Some(v) = kv.value("strategy")? {
        config.strategy = v;
    }
    for (volume, voxel_key, trunc_key) in [
        (&mut config.background, "background_voxel", "background_trunc"),
        (&mut config.object, "object_voxel", "object_trunc"),
    ] {
        if let Some(v) = kv.value::<f64>(voxel_key)? {
            volume.voxel_size = v;
            volume.trunc_dist = DEFAULT_TRUNC_VOXELS * v;
        }
        if let Some(v) = kv.value(trunc_key)? {
            volume.trunc_dist = v;
        }
        if let Some(v) = kv.value("max_depth")? {
            volume.max_depth = v;
        }
        if let Some(v) = kv.value("max_weight")? {
            volume.max_weight = v;
        }
        if let Some(v) = kv.value("block_side")? {
            volume.block_side = v;
        }
    }
    if let Some(v) = kv.value("iou_threshold")? {
        config.tracker.iou_threshold = v;
    }
    if let Some(v) = kv.value("max_misses")? {
        config.tracker.max_misses = v;
    }
    if let Some(v) = kv.value("min_object_pixels")? {
        config.min_object_pixels = v;
    }
    if let Some(v) = kv.value("hull_mask")? {
        config.hull_mask = v;
    }
    config.validate().map_err(|e| IoError::Invalid { path: kv.source.clone(), message: e.to_string() })
}

/// Settings for writing an oracle dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// `desk` (one moving car) or `desk_static`.
    pub scene: String,
    pub frames: usize,
    pub noise: NoiseSpec,
    /// Write tracklet ids into the detection files.
    pub track_ids: bool,
    pub input: InputKind,
    pub lidar: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { scene: "desk".into(), frames: 60, noise: NoiseSpec::default(), track_ids: true, input: InputKind::Depth, lidar: true }
    }
}

pub const SYNTH_KEYS: &[&str] =
    &["scene", "frames", "seed", "depth_sigma", "center_sigma", "yaw_sigma", "drop_prob", "track_ids", "input", "lidar"];

impl SynthConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, IoError> {
        kv.check_known(SYNTH_KEYS)?;
        let mut c = Self::default();
        if let Some(v) = kv.value::<String>("scene")? {
            if v != "desk" && v != "desk_static" {
                return Err(kv.invalid("scene", format!("unknown scene '{v}' (expected desk or desk_static)")));
            }
            c.scene = v;
        }
        if let Some(v) = kv.value("frames")? {
            c.frames = v;
        }
        if c.frames == 0 {
            return Err(kv.invalid("frames", "must be at least 1"));
        }
        if let Some(v) = kv.value("seed")? {
            c.noise.seed = v;
        }
        for (key, slot) in [
            ("depth_sigma", &mut c.noise.depth_sigma),
            ("center_sigma", &mut c.noise.center_sigma),
            ("yaw_sigma", &mut c.noise.yaw_sigma),
            ("drop_prob", &mut c.noise.drop_prob),
        ] {
            if let Some(v) = kv.value::<f64>(key)? {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(kv.invalid(key, "must be a non-negative number"));
                }
                *slot = v;
            }
        }
        if c.noise.drop_prob > 1.0 {
            return Err(kv.invalid("drop_prob", "must be at most 1"));
        }
        if let Some(v) = kv.value("track_ids")? {
            c.track_ids = v;
        }
        if let Some(v) = kv.value("input")? {
            c.input = v;
        }
        if let Some(v) = kv.value("lidar")? {
            c.lidar = v;
        }
        Ok(c)
    }

    pub fn script(&self) -> SceneScript {
        let mut s = SceneScript::desk(self.frames, self.scene == "desk");
        if !self.lidar {
            s.lidar = None;
        }
        s
    }
}
