//! The time-dependent map: a static background volume, one volume per
//! tracked object, the camera trajectory, and per-frame object poses.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::decompose::{decompose, hull_mask, DecomposeError, Detection, Strategy};
use crate::geometry::{DepthMap, Intrinsics, Pose, RgbImage};
use crate::tracking::{Tracker, TrackerConfig};
use crate::tsdf::{IntegrationStats, TriangleMesh, TsdfError, TsdfVolume, VolumeConfig};
use crate::TrackletId;

/// Object slices with fewer valid pixels are not fused for that frame.
pub const DEFAULT_MIN_OBJECT_PIXELS: usize = 30;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("frame {got} arrived after frame {previous}")]
    OutOfOrder { previous: u64, got: u64 },
    #[error("frame {frame}: tracklet {id} appears on more than one detection")]
    DuplicateTracklet { frame: u64, id: TrackletId },
    #[error("frame {0} has not been processed")]
    UnknownFrame(u64),
    #[error("no object with tracklet id {0}")]
    UnknownTracklet(TrackletId),
    #[error("tracklet {id} has no pose at frame {frame}")]
    NoPoseAtFrame { id: TrackletId, frame: u64 },
    #[error("frame {frame}: {what} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    SizeMismatch { frame: u64, what: &'static str, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("invalid map config: {0}")]
    Config(String),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Tsdf(#[from] TsdfError),
}

/// Whether objects get their own volumes or everything goes to the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum MapMode {
    #[default]
    #[serde(rename = "dynamic")]
    Dynamic,
    /// Baseline that fuses all depth into the background as if the world were static.
    #[serde(rename = "static")]
    NonDynamic,
}

impl std::str::FromStr for MapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dynamic" => Ok(MapMode::Dynamic),
            "static" | "non-dynamic" => Ok(MapMode::NonDynamic),
            other => Err(format!("unknown mode '{other}' (expected dynamic or static)")),
        }
    }
}

impl std::fmt::Display for MapMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MapMode::Dynamic => "dynamic",
            MapMode::NonDynamic => "static",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MapConfig {
    pub background: VolumeConfig,
    pub object: VolumeConfig,
    pub strategy: Strategy,
    pub mode: MapMode,
    pub tracker: TrackerConfig,
    pub min_object_pixels: usize,
    /// Invalidate depth outside the convex hull of the frame's lidar points.
    pub hull_mask: bool,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            background: VolumeConfig::background(),
            object: VolumeConfig::object(),
            strategy: Strategy::default(),
            mode: MapMode::default(),
            tracker: TrackerConfig::default(),
            min_object_pixels: DEFAULT_MIN_OBJECT_PIXELS,
            hull_mask: true,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        self.background.validate()?;
        self.object.validate()?;
        self.tracker.validate().map_err(MapError::Config)
    }
}

/// All inputs for one time step. `camera_pose` is camera-to-world in the
/// input's own world frame; the map rebases it onto the first frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePacket {
    pub frame_index: u64,
    pub depth: DepthMap,
    pub color: RgbImage,
    pub camera_pose: Pose,
    pub detections: Vec<(Option<TrackletId>, Detection)>,
    /// Sparse ground-truth points in the camera frame.
    pub lidar_points: Option<Vec<Vector3<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ObjectInstance {
    pub tracklet_id: TrackletId,
    pub volume: TsdfVolume,
    /// Object-to-camera pose per frame.
    pub pose_history: BTreeMap<u64, Pose>,
    pub class_label: String,
}

/// Which volume produced a live-view pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum VolumeLabel {
    Empty,
    Background,
    Object(TrackletId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveView {
    pub depth: DepthMap,
    /// Row-major, one entry per pixel.
    pub labels: Vec<VolumeLabel>,
}

impl LiveView {
    pub fn label(&self, u: usize, v: usize) -> VolumeLabel {
        self.labels[v * self.depth.width() + u]
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct StageTimings {
    pub decompose_ms: f64,
    pub integrate_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct FrameReport {
    pub frame_index: u64,
    pub background: IntegrationStats,
    pub objects: Vec<(TrackletId, IntegrationStats)>,
    pub new_objects: Vec<TrackletId>,
    /// Detections whose tracklet ids came from the built-in tracker.
    pub tracked: bool,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct DynamicMap {
    config: MapConfig,
    intrinsics: Intrinsics,
    background: TsdfVolume,
    /// Camera-to-world, with the world frame at the first processed camera.
    trajectory: BTreeMap<u64, Pose>,
    objects: BTreeMap<TrackletId, ObjectInstance>,
    world_from_input: Option<Pose>,
    tracker: Tracker,
}

impl DynamicMap {
    pub fn new(config: MapConfig, intrinsics: Intrinsics) -> Result<Self, MapError> {
        config.validate()?;
        intrinsics.validate().map_err(|e| MapError::Config(e.to_string()))?;
        Ok(Self {
            config,
            intrinsics,
            background: TsdfVolume::new(config.background)?,
            trajectory: BTreeMap::new(),
            objects: BTreeMap::new(),
            world_from_input: None,
            tracker: Tracker::new(config.tracker),
        })
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn background(&self) -> &TsdfVolume {
        &self.background
    }

    pub fn trajectory(&self) -> &BTreeMap<u64, Pose> {
        &self.trajectory
    }

    pub fn objects(&self) -> &BTreeMap<TrackletId, ObjectInstance> {
        &self.objects
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.trajectory.keys().next_back().copied()
    }

    pub fn process_frame(&mut self, packet: &FramePacket) -> Result<FrameReport, MapError> {
        let start = Instant::now();
        let f = packet.frame_index;
        if let Some(previous) = self.last_frame() {
            if f <= previous {
                return Err(MapError::OutOfOrder { previous, got: f });
            }
        }
        let k = self.intrinsics;
        for (what, w, h) in [
            ("depth", packet.depth.width(), packet.depth.height()),
            ("color", packet.color.width, packet.color.height),
        ] {
            if w != k.width || h != k.height {
                return Err(MapError::SizeMismatch { frame: f, what, got_w: w, got_h: h, want_w: k.width, want_h: k.height });
            }
        }
        for (_, det) in &packet.detections {
            det.validate()?;
        }

        let mut report = FrameReport { frame_index: f, ..Default::default() };
        let world_from_input = *self.world_from_input.get_or_insert_with(|| packet.camera_pose.invert());
        let camera_pose = world_from_input.compose(&packet.camera_pose);

        if self.config.mode == MapMode::NonDynamic {
            let t = Instant::now();
            report.background = self.background.integrate(&packet.depth, &packet.color, &k, &camera_pose)?;
            report.timings.integrate_ms = ms(t);
            self.trajectory.insert(f, camera_pose);
            report.timings.total_ms = ms(start);
            return Ok(report);
        }

        let t = Instant::now();
        let mut depth = packet.depth.clone();
        if self.config.hull_mask {
            if let Some(points) = packet.lidar_points.as_deref().filter(|p| !p.is_empty()) {
                match hull_mask(points, &k) {
                    Ok(mask) => depth = depth.masked(&mask),
                    Err(e) => report.warnings.push(format!("hull mask skipped: {e}")),
                }
            }
        }

        let detections = self.resolve_ids(packet, &mut report)?;
        let parts = decompose(&depth, &detections, &k, self.config.strategy)?;
        report.timings.decompose_ms = ms(t);

        let t = Instant::now();
        let mut work: Vec<(TrackletId, DepthMap, Pose)> = Vec::new();
        for (id, slice) in parts.object_slices {
            let valid = slice.valid_count();
            if valid < self.config.min_object_pixels {
                if valid > 0 {
                    report.warnings.push(format!("tracklet {id}: {valid} object pixels, below minimum; not fused"));
                }
                continue;
            }
            let det = &detections.iter().find(|(d, _)| *d == id).expect("slice comes from a detection").1;
            let object_pose = det.box3.as_ref().expect("slices require a 3D box").pose();
            if !self.objects.contains_key(&id) {
                self.objects.insert(
                    id,
                    ObjectInstance {
                        tracklet_id: id,
                        volume: TsdfVolume::new(self.config.object)?,
                        pose_history: BTreeMap::new(),
                        class_label: det.class_label.clone(),
                    },
                );
                report.new_objects.push(id);
            }
            work.push((id, slice, object_pose));
        }

        let color = &packet.color;
        let background = &mut self.background;
        let objects = &mut self.objects;
        let (bg, obj): (Result<IntegrationStats, TsdfError>, Result<Vec<_>, TsdfError>) = rayon::join(
            || background.integrate(&parts.background, color, &k, &camera_pose),
            || {
                let mut targets: Vec<(&mut ObjectInstance, &DepthMap, &Pose)> = Vec::new();
                let mut rest: BTreeMap<TrackletId, (&DepthMap, &Pose)> =
                    work.iter().map(|(id, s, p)| (*id, (s, p))).collect();
                for (id, inst) in objects.iter_mut() {
                    if let Some((s, p)) = rest.remove(id) {
                        targets.push((inst, s, p));
                    }
                }
                targets
                    .into_par_iter()
                    .map(|(inst, slice, pose)| {
                        let stats = inst.volume.integrate(slice, color, &k, &pose.invert())?;
                        inst.pose_history.insert(f, *pose);
                        Ok((inst.tracklet_id, stats))
                    })
                    .collect()
            },
        );
        report.background = bg?;
        report.objects = obj?;
        report.timings.integrate_ms = ms(t);
        self.trajectory.insert(f, camera_pose);
        report.timings.total_ms = ms(start);
        Ok(report)
    }

    /// Tracklet ids for the frame's detections. Input ids are used when every
    /// detection carries one; otherwise the tracker labels the whole frame.
    fn resolve_ids(&mut self, packet: &FramePacket, report: &mut FrameReport) -> Result<Vec<(TrackletId, Detection)>, MapError> {
        let f = packet.frame_index;
        let mut dets: Vec<(TrackletId, Detection)> = if packet.detections.iter().all(|(id, _)| id.is_some()) {
            packet.detections.iter().map(|(id, d)| (id.expect("checked"), d.clone())).collect()
        } else {
            let boxes: Vec<_> = packet.detections.iter().map(|(_, d)| d.box2).collect();
            report.tracked = true;
            let ids = self.tracker.associate(&boxes, f);
            ids.into_iter().zip(packet.detections.iter().map(|(_, d)| d.clone())).collect()
        };
        let mut seen = BTreeSet::new();
        for (id, det) in dets.iter_mut() {
            if !seen.insert(*id) {
                return Err(MapError::DuplicateTracklet { frame: f, id: *id });
            }
            if let Some(b) = &det.box3 {
                if b.center.z <= 0.0 {
                    report.warnings.push(format!("tracklet {id}: 3D box behind the camera; box ignored"));
                    det.box3 = None;
                }
            }
        }
        Ok(dets)
    }

    /// Object-to-world pose of `id` at `frame`.
    pub fn world_pose(&self, id: TrackletId, frame: u64) -> Result<Pose, MapError> {
        let obj = self.objects.get(&id).ok_or(MapError::UnknownTracklet(id))?;
        let cam = self.trajectory.get(&frame).ok_or(MapError::UnknownFrame(frame))?;
        let rel = obj.pose_history.get(&frame).ok_or(MapError::NoPoseAtFrame { id, frame })?;
        Ok(cam.compose(rel))
    }

    /// Composite render from the camera at `frame`: background plus every
    /// object posed at that frame, nearest depth wins.
    pub fn render_live_view(&self, frame: u64, k: &Intrinsics) -> Result<LiveView, MapError> {
        let cam = self.trajectory.get(&frame).ok_or(MapError::UnknownFrame(frame))?;
        let mut depth = self.background.raycast(k, cam);
        let mut labels: Vec<VolumeLabel> = depth
            .values()
            .iter()
            .map(|d| if d.is_nan() { VolumeLabel::Empty } else { VolumeLabel::Background })
            .collect();
        for (id, obj) in &self.objects {
            if !obj.pose_history.contains_key(&frame) {
                continue;
            }
            let world = self.world_pose(*id, frame)?;
            let volume_from_camera = world.invert().compose(cam);
            let r = obj.volume.raycast(k, &volume_from_camera);
            for (u, v, z) in r.iter_valid() {
                if depth.get(u, v).is_none_or(|cur| z < cur) {
                    depth.set(u, v, z);
                    labels[v * k.width + u] = VolumeLabel::Object(*id);
                }
            }
        }
        Ok(LiveView { depth, labels })
    }

    /// Meshes of all non-empty volumes in world coordinates at `frame`;
    /// objects without a pose at that frame are omitted.
    pub fn export_state(&self, frame: u64) -> Result<Vec<(VolumeLabel, TriangleMesh)>, MapError> {
        if !self.trajectory.contains_key(&frame) {
            return Err(MapError::UnknownFrame(frame));
        }
        let mut out = Vec::new();
        let bg = self.background.extract_mesh();
        if !bg.is_empty() {
            out.push((VolumeLabel::Background, bg));
        }
        for (id, obj) in &self.objects {
            if !obj.pose_history.contains_key(&frame) {
                continue;
            }
            let mesh = obj.volume.extract_mesh();
            if mesh.is_empty() {
                continue;
            }
            let world = self.world_pose(*id, frame)?;
            out.push((VolumeLabel::Object(*id), mesh.map_vertices(|p| world.apply(p))));
        }
        Ok(out)
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
