//! Analytic scenes of cuboids on a ground plane, rendered exactly: depth,
//! color, per-pixel ownership, detections and sparse lidar ground truth.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::decompose::Detection;
use crate::dynamic_map::FramePacket;
use crate::geometry::{Box2, DepthMap, Intrinsics, OrientedBox3, Pose, RgbImage, ROTATION_TOLERANCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("frame {frame} out of range (script has {frames} frames)")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("body {body} at frame {frame} is not yaw-only relative to the camera")]
    UnsupportedOrientation { body: usize, frame: usize },
    #[error("invalid scene script: {0}")]
    InvalidScript(String),
}

/// Points `p` with `normal · p = offset`, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    /// `[length, width, height]`.
    pub dims: [f64; 3],
    /// Body-to-world pose per frame.
    pub trajectory: Vec<Pose>,
    pub color: [u8; 3],
    pub class_label: String,
}

/// Regular grid of beams in the camera frame; angles in radians, elevation
/// positive upwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPattern {
    pub azimuth: (f64, f64),
    pub azimuth_step: f64,
    pub elevation: (f64, f64),
    pub elevation_step: f64,
    pub max_range: f64,
}

impl Default for LidarPattern {
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        Self {
            azimuth: (-40.0 * deg, 40.0 * deg),
            azimuth_step: 0.35 * deg,
            elevation: (-16.0 * deg, 2.0 * deg),
            elevation_step: 0.4 * deg,
            max_range: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScript {
    pub ground_plane: Option<Plane>,
    pub plane_color: [u8; 3],
    pub bodies: Vec<Body>,
    /// Camera-to-world pose per frame.
    pub camera_trajectory: Vec<Pose>,
    pub intrinsics: Intrinsics,
    pub frames: usize,
    pub lidar: Option<LidarPattern>,
    /// Surfaces farther than this along the optical axis are not seen.
    pub max_range: f64,
}

/// Owner of a rendered pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelOwner {
    Nothing,
    Plane,
    Body(usize),
}

#[derive(Debug, Clone)]
pub struct OracleFrame {
    pub packet: FramePacket,
    /// Row-major ownership labels.
    pub owners: Vec<PixelOwner>,
    /// Row-major z-depth in full precision, NaN where nothing is hit.
    pub exact_depth: Vec<f64>,
}

pub const DESK_CAMERA_HEIGHT: f64 = 1.65;

impl SceneScript {
    /// 320x96 camera advancing 0.1 m/frame over a ground plane, with one car
    /// moving laterally at 8 m range and one parked car.
    pub fn desk_default() -> Self {
        Self::desk(60, true)
    }

    /// The desk layout with both cars parked.
    pub fn desk_static() -> Self {
        Self::desk(60, false)
    }

    pub fn desk(frames: usize, moving: bool) -> Self {
        let intrinsics = Intrinsics::new(186.0, 186.0, 159.5, 47.5, 0.54, 320, 96).expect("valid intrinsics");
        let camera_step = 0.1;
        let camera_trajectory = (0..frames).map(|f| Pose::from_translation(0.0, 0.0, camera_step * f as f64)).collect();

        let car_a = [4.0, 1.8, 1.5];
        let car_b = [4.2, 1.8, 1.6];
        let lateral = if moving { 0.1 } else { 0.0 };
        let forward = if moving { camera_step } else { 0.0 };
        let moving_car = Body {
            dims: car_a,
            trajectory: (0..frames)
                .map(|f| {
                    let f = f as f64;
                    Pose::from_translation(-3.0 + lateral * f, DESK_CAMERA_HEIGHT - car_a[2] / 2.0, 8.0 + forward * f)
                })
                .collect(),
            color: [200, 30, 30],
            class_label: "Car".into(),
        };
        let parked_pose = Pose::from_yaw(std::f64::consts::FRAC_PI_2)
            .with_translation(Vector3::new(-4.5, DESK_CAMERA_HEIGHT - car_b[2] / 2.0, 16.0));
        let parked_car = Body {
            dims: car_b,
            trajectory: vec![parked_pose; frames],
            color: [30, 60, 200],
            class_label: "Car".into(),
        };
        Self {
            ground_plane: Some(Plane { normal: Vector3::new(0.0, 1.0, 0.0), offset: DESK_CAMERA_HEIGHT }),
            plane_color: [120, 120, 110],
            bodies: vec![moving_car, parked_car],
            camera_trajectory,
            intrinsics,
            frames,
            lidar: Some(LidarPattern::default()),
            max_range: 80.0,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::InvalidScript(m));
        if self.camera_trajectory.len() < self.frames {
            return bad(format!("camera trajectory has {} poses for {} frames", self.camera_trajectory.len(), self.frames));
        }
        for (i, b) in self.bodies.iter().enumerate() {
            if b.trajectory.len() < self.frames {
                return bad(format!("body {i} trajectory has {} poses for {} frames", b.trajectory.len(), self.frames));
            }
            if !b.dims.iter().all(|d| d.is_finite() && *d > 0.0) {
                return bad(format!("body {i} dims {:?} must be positive", b.dims));
            }
        }
        if let Some(p) = &self.ground_plane {
            if !(p.normal.norm() > 0.0) {
                return bad("ground plane normal is zero".into());
            }
        }
        if !(self.max_range > 0.0) {
            return bad("max_range must be positive".into());
        }
        self.intrinsics.validate().map_err(|e| OracleError::InvalidScript(e.to_string()))
    }

    /// Renders frame `frame` exactly; tracklet ids are body indices.
    pub fn render_frame(&self, frame: usize) -> Result<OracleFrame, OracleError> {
        self.validate()?;
        if frame >= self.frames {
            return Err(OracleError::FrameOutOfRange { frame, frames: self.frames });
        }
        let k = &self.intrinsics;
        let cam = &self.camera_trajectory[frame];
        let cam_inv = cam.invert();

        // the scene in camera coordinates: rays start at the origin
        let plane = self.ground_plane.map(|p| Plane {
            normal: cam.rotation().transpose() * p.normal,
            offset: p.offset - p.normal.dot(cam.translation()),
        });
        let bodies: Vec<(Pose, Vector3<f64>)> = self
            .bodies
            .iter()
            .map(|b| {
                let half = Vector3::new(b.dims[0], b.dims[2], b.dims[1]) * 0.5;
                (b.trajectory[frame].invert().compose(cam), half)
            })
            .collect();
        let scene = CameraScene { plane, bodies };

        let mut depth = DepthMap::invalid(k.width, k.height);
        let mut color = RgbImage::filled(k.width, k.height, [0; 3]);
        let mut owners = vec![PixelOwner::Nothing; k.pixel_count()];
        let mut exact = vec![f64::NAN; k.pixel_count()];
        for v in 0..k.height {
            for u in 0..k.width {
                let ray = k.ray(u as f64, v as f64);
                let Some((t, owner)) = scene.intersect(&ray) else { continue };
                if t > self.max_range {
                    continue;
                }
                let i = v * k.width + u;
                depth.set(u, v, t as f32);
                exact[i] = t;
                owners[i] = owner;
                color.pixels[i] = match owner {
                    PixelOwner::Body(b) => self.bodies[b].color,
                    _ => self.plane_color,
                };
            }
        }

        let mut detections = Vec::new();
        for (i, body) in self.bodies.iter().enumerate() {
            let cam_from_body = cam_inv.compose(&body.trajectory[frame]);
            let box3 = OrientedBox3::from_pose(&cam_from_body, body.dims).map_err(|_| {
                if cam_from_body.yaw_only(ROTATION_TOLERANCE).is_some() {
                    OracleError::InvalidScript(format!("body {i} has a near-yaw rotation outside tolerance"))
                } else {
                    OracleError::UnsupportedOrientation { body: i, frame }
                }
            })?;
            let Some(box2) = projected_box(&box3, k) else { continue };
            detections.push((
                Some(i as u64),
                Detection { box2, box3: Some(box3), score: 1.0, class_label: body.class_label.clone() },
            ));
        }

        let lidar_points = self.lidar.as_ref().map(|pattern| {
            let mut pts = Vec::new();
            let steps = |(lo, hi): (f64, f64), step: f64| ((hi - lo) / step + 1e-9).floor() as usize + 1;
            for ei in 0..steps(pattern.elevation, pattern.elevation_step) {
                let el = pattern.elevation.0 + ei as f64 * pattern.elevation_step;
                for ai in 0..steps(pattern.azimuth, pattern.azimuth_step) {
                    let az = pattern.azimuth.0 + ai as f64 * pattern.azimuth_step;
                    let dir = Vector3::new(az.sin() * el.cos(), -el.sin(), az.cos() * el.cos());
                    if let Some((t, _)) = scene.intersect(&dir) {
                        if t <= pattern.max_range {
                            let p = dir * t;
                            pts.push(p.map(|c| c as f32 as f64));
                        }
                    }
                }
            }
            pts
        });

        Ok(OracleFrame {
            packet: FramePacket { frame_index: frame as u64, depth, color, camera_pose: *cam, detections, lidar_points },
            owners,
            exact_depth: exact,
        })
    }
}

struct CameraScene {
    plane: Option<Plane>,
    /// Body-from-camera pose and half extents per body.
    bodies: Vec<(Pose, Vector3<f64>)>,
}

impl CameraScene {
    /// Nearest surface hit by `t·dir`, `t > 0`; bodies win ties against the
    /// plane, the lower body index wins between bodies.
    fn intersect(&self, dir: &Vector3<f64>) -> Option<(f64, PixelOwner)> {
        let mut best: Option<(f64, PixelOwner)> = None;
        for (i, (body_from_camera, half)) in self.bodies.iter().enumerate() {
            let o = body_from_camera.translation();
            let d = body_from_camera.apply_vector(dir);
            if let Some(t) = ray_box(o, &d, half) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, PixelOwner::Body(i)));
                }
            }
        }
        if let Some(plane) = &self.plane {
            let denom = plane.normal.dot(dir);
            if denom.abs() > 1e-15 {
                let t = plane.offset / denom;
                if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, PixelOwner::Plane));
                }
            }
        }
        best
    }
}

/// Entry parameter of a ray into an axis-aligned box centred at the origin,
/// if positive.
fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, half: &Vector3<f64>) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i].abs() > half[i] {
                return None;
            }
            continue;
        }
        let a = (-half[i] - o[i]) / d[i];
        let b = (half[i] - o[i]) / d[i];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// Half-open pixel box covering every pixel centre inside the projected
/// corners' bounding rectangle, clipped to the image.
fn projected_box(b: &OrientedBox3, k: &Intrinsics) -> Option<Box2> {
    const EPS: f64 = 1e-9;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in b.corners() {
        if c.z <= 1e-3 {
            return None;
        }
        let q = k.project(&c)?;
        lo = [lo[0].min(q.x), lo[1].min(q.y)];
        hi = [hi[0].max(q.x), hi[1].max(q.y)];
    }
    let x0 = (lo[0] - EPS).ceil().max(0.0);
    let y0 = (lo[1] - EPS).ceil().max(0.0);
    let x1 = ((hi[0] + EPS).floor() + 1.0).min(k.width as f64);
    let y1 = ((hi[1] + EPS).floor() + 1.0).min(k.height as f64);
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Box2::new(x0, y0, x1, y1).ok()
}

/// Seeded corruption of an oracle packet.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    pub seed: u64,
    /// Gaussian depth noise, meters.
    pub depth_sigma: f64,
    /// Gaussian jitter of 3D box centres, meters per axis.
    pub center_sigma: f64,
    /// Gaussian jitter of 3D box yaw, radians.
    pub yaw_sigma: f64,
    /// Probability that each detection is dropped.
    pub drop_prob: f64,
}

/// Applies `noise` to `packet`; the result depends only on the seed, the
/// frame index and the input.
pub fn perturb(packet: &FramePacket, noise: &NoiseSpec) -> FramePacket {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ packet.frame_index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut out = packet.clone();

    if noise.depth_sigma > 0.0 {
        let n = Normal::new(0.0, noise.depth_sigma).expect("finite sigma");
        let (w, h) = (out.depth.width(), out.depth.height());
        for v in 0..h {
            for u in 0..w {
                if let Some(d) = out.depth.get(u, v) {
                    let z = d as f64 + n.sample(&mut rng);
                    if z > 0.0 {
                        out.depth.set(u, v, z as f32);
                    } else {
                        out.depth.invalidate(u, v);
                    }
                }
            }
        }
    }

    if noise.drop_prob > 0.0 {
        let p = noise.drop_prob.min(1.0);
        out.detections.retain(|_| !rng.random_bool(p));
    }

    if noise.center_sigma > 0.0 || noise.yaw_sigma > 0.0 {
        let nc = Normal::new(0.0, noise.center_sigma.max(0.0)).expect("finite sigma");
        let ny = Normal::new(0.0, noise.yaw_sigma.max(0.0)).expect("finite sigma");
        for (_, det) in out.detections.iter_mut() {
            if let Some(b) = det.box3.as_mut() {
                b.center += Vector3::new(nc.sample(&mut rng), nc.sample(&mut rng), nc.sample(&mut rng));
                b.yaw = crate::geometry::normalize_yaw(b.yaw + ny.sample(&mut rng));
            }
        }
    }
    out
}
