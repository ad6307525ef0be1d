//! Rigid transforms, the pinhole camera model, depth/disparity grids and
//! the box primitives used to carve objects out of a depth frame.
//!
//! Camera frame convention: x right, y down, z forward. The "up" axis used
//! for box yaw is therefore `-y`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Point2, Vector3};
use thiserror::Error;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Slack applied by [`OrientedBox3::contains`] on each half extent.
///
/// Depth is stored as `f32`, so a point backprojected from a pixel that lies
/// exactly on a box face lands within a few micrometres of it.
pub const CONTAINMENT_SLACK: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("grid size mismatch: expected {expected} values, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("unsupported orientation: box rotation is not a pure yaw about the up axis")]
    UnsupportedOrientation,
}

/// Rigid-body transform. `apply(x) = rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Builds a pose, checking that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!(
                "rotation is not orthonormal (max |R^T R - I| = {ortho_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::new(x, y, z) }
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rotation_unchecked(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rotation_unchecked(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rotation_unchecked(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation by `yaw` about the camera up axis (`-y`).
    pub fn from_yaw(yaw: f64) -> Self {
        Self::rot_y(-yaw)
    }

    fn from_rotation_unchecked(rotation: Matrix3<f64>) -> Self {
        Self { rotation, translation: Vector3::zeros() }
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn from_rows(rows: &[[f64; 4]; 3]) -> Result<Self, GeometryError> {
        let rotation = Matrix3::from_fn(|r, c| rows[r][c]);
        let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        Self::new(rotation, translation)
    }

    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let mut rows = [[0.0; 4]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().take(3).enumerate() {
                *v = self.rotation[(r, c)];
            }
            row[3] = self.translation[r];
        }
        rows
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(mut self, translation: Vector3<f64>) -> Self {
        self.translation = translation;
        self
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Largest absolute difference over the 12 entries of the 3x4 matrices.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }

    /// Yaw angle if the rotation is a pure rotation about the up axis.
    pub fn yaw_only(&self, tolerance: f64) -> Option<f64> {
        let r = &self.rotation;
        let yaw = r[(2, 0)].atan2(r[(0, 0)]);
        let expected = Pose::from_yaw(yaw);
        if (expected.rotation - r).abs().max() <= tolerance {
            Some(normalize_yaw(yaw))
        } else {
            None
        }
    }
}

/// Maps an angle into `(-π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = yaw.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Pinhole intrinsics plus the stereo baseline. Pixel `(u, v)` has its
/// centre at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        baseline: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, baseline, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.baseline].iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if self.baseline <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("baseline must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be non-zero".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Viewing ray through pixel `(u, v)`, scaled to unit depth.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn backproject_pixel(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.ray(u, v) * depth
    }

    /// Continuous image coordinates of `p`, or `None` when `p` is at or
    /// behind the camera plane.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<Point2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Nearest pixel containing the projection of `p`, if inside the image.
    #[inline]
    pub fn pixel_of(&self, p: &Vector3<f64>) -> Option<(usize, usize)> {
        let q = self.project(p)?;
        self.round_pixel(q.x, q.y)
    }

    /// Nearest pixel to `(u, v)`, halves rounding up.
    #[inline]
    pub fn round_pixel(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        // truncation equals floor here, and avoids a libm call
        if u > -0.5 && v > -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5 {
            Some(((u + 0.5) as usize, (v + 0.5) as usize))
        } else {
            None
        }
    }
}

/// Row-major scalar grid where the invalid marker is NaN.
#[derive(Debug, Clone)]
struct ScalarGrid {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

/// Invalid pixels compare equal to each other.
impl PartialEq for ScalarGrid {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.values.iter().zip(&other.values).all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl ScalarGrid {
    fn invalid(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![f32::NAN; width * height] }
    }

    fn from_values(width: usize, height: usize, mut values: Vec<f32>) -> Result<Self, GeometryError> {
        if values.len() != width * height {
            return Err(GeometryError::SizeMismatch { expected: width * height, actual: values.len() });
        }
        for v in &mut values {
            *v = sanitize(*v);
        }
        Ok(Self { width, height, values })
    }

    #[inline]
    fn get(&self, u: usize, v: usize) -> Option<f32> {
        let d = self.values[v * self.width + u];
        if d.is_nan() {
            None
        } else {
            Some(d)
        }
    }
}

#[inline]
fn sanitize(v: f32) -> f32 {
    if v.is_finite() && v > 0.0 {
        v
    } else {
        f32::NAN
    }
}

macro_rules! scalar_map {
    ($name:ident, $unit:literal) => {
        #[doc = concat!("Dense per-pixel ", $unit, " with an explicit invalid marker.")]
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(ScalarGrid);

        impl $name {
            /// A map where every pixel is invalid.
            pub fn invalid(width: usize, height: usize) -> Self {
                Self(ScalarGrid::invalid(width, height))
            }

            /// Row-major values; anything non-finite or `<= 0` becomes invalid.
            pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Result<Self, GeometryError> {
                ScalarGrid::from_values(width, height, values).map(Self)
            }

            pub fn width(&self) -> usize {
                self.0.width
            }

            pub fn height(&self) -> usize {
                self.0.height
            }

            /// Raw row-major values; invalid pixels are NaN.
            pub fn values(&self) -> &[f32] {
                &self.0.values
            }

            #[inline]
            pub fn get(&self, u: usize, v: usize) -> Option<f32> {
                self.0.get(u, v)
            }

            #[inline]
            pub fn is_valid(&self, u: usize, v: usize) -> bool {
                self.get(u, v).is_some()
            }

            pub fn set(&mut self, u: usize, v: usize, value: f32) {
                let w = self.0.width;
                self.0.values[v * w + u] = sanitize(value);
            }

            pub fn invalidate(&mut self, u: usize, v: usize) {
                let w = self.0.width;
                self.0.values[v * w + u] = f32::NAN;
            }

            pub fn valid_count(&self) -> usize {
                self.0.values.iter().filter(|v| !v.is_nan()).count()
            }

            /// `(u, v, value)` for every valid pixel in row-major order.
            pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
                let w = self.0.width;
                self.0
                    .values
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| !v.is_nan())
                    .map(move |(i, &v)| (i % w, i / w, v))
            }
        }
    };
}

scalar_map!(DepthMap, "metric depth (meters)");
scalar_map!(DisparityMap, "disparity (pixels)");

impl DepthMap {
    /// Keeps only the pixels marked valid in `mask`.
    pub fn masked(&self, mask: &crate::decompose::ValidityMask) -> DepthMap {
        let mut out = self.clone();
        for (i, v) in out.0.values.iter_mut().enumerate() {
            if !mask.get_index(i) {
                *v = f32::NAN;
            }
        }
        out
    }
}

/// `depth = baseline * fx / disparity` per valid pixel.
pub fn disparity_to_depth(disparity: &DisparityMap, k: &Intrinsics) -> DepthMap {
    let bf = k.baseline * k.fx;
    let values = disparity
        .values()
        .iter()
        .map(|&z| if z.is_nan() { f32::NAN } else { (bf / z as f64) as f32 })
        .collect();
    DepthMap::from_values(disparity.width(), disparity.height(), values)
        .expect("dimensions are preserved")
}

/// A camera-frame point together with the pixel it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: usize,
    pub v: usize,
    pub point: Vector3<f64>,
}

pub fn backproject(depth: &DepthMap, k: &Intrinsics) -> Vec<PixelPoint> {
    depth
        .iter_valid()
        .map(|(u, v, d)| PixelPoint { u, v, point: k.backproject_pixel(u as f64, v as f64, d as f64) })
        .collect()
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self { width, height, pixels: vec![color; width * height] }
    }

    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self, GeometryError> {
        if pixels.len() != width * height {
            return Err(GeometryError::SizeMismatch { expected: width * height, actual: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> [u8; 3] {
        self.pixels[v * self.width + u]
    }
}

/// Axis-aligned image box; contains pixel centres with
/// `x_min <= u < x_max` and `y_min <= v < y_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2 {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2 {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all_finite = [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite());
        if !all_finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(GeometryError::InvalidBox(format!(
                "2D box [{}, {}, {}, {}] must satisfy min < max",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn contains_pixel(&self, u: usize, v: usize) -> bool {
        let (u, v) = (u as f64, v as f64);
        u >= self.x_min && u < self.x_max && v >= self.y_min && v < self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn iou(&self, other: &Box2) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            return 0.0;
        }
        let inter = w * h;
        inter / (self.area() + other.area() - inter)
    }

    /// Pixel index ranges covered by the box, clipped to a `width x height` image.
    pub fn pixel_ranges(&self, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let clip = |lo: f64, hi: f64, n: usize| {
            let a = lo.ceil().max(0.0).min(n as f64) as usize;
            // half-open: the last covered index is the largest integer < hi
            let b = hi.ceil().max(0.0).min(n as f64) as usize;
            a..b.max(a)
        };
        (clip(self.x_min, self.x_max, width), clip(self.y_min, self.y_max, height))
    }
}

/// Yaw-only 3D box in the camera frame.
///
/// In the box frame, `dims[0]` (length) runs along x, `dims[2]` (height)
/// along the vertical y axis and `dims[1]` (width) along z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox3 {
    pub center: Vector3<f64>,
    /// `[length, width, height]` in meters.
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl OrientedBox3 {
    pub fn new(center: Vector3<f64>, dims: [f64; 3], yaw: f64) -> Result<Self, GeometryError> {
        if !center.iter().all(|v| v.is_finite()) || !yaw.is_finite() {
            return Err(GeometryError::InvalidBox("non-finite center or yaw".into()));
        }
        if !dims.iter().all(|&d| d.is_finite() && d > 0.0) {
            return Err(GeometryError::InvalidBox(format!("dimensions {dims:?} must be positive")));
        }
        Ok(Self { center, dims, yaw: normalize_yaw(yaw) })
    }

    /// Builds a box from an object-to-camera pose; rejects anything but yaw.
    pub fn from_pose(pose: &Pose, dims: [f64; 3]) -> Result<Self, GeometryError> {
        let yaw = pose.yaw_only(1e-9).ok_or(GeometryError::UnsupportedOrientation)?;
        Self::new(*pose.translation(), dims, yaw)
    }

    /// Object-to-camera pose: rotation = yaw about up, translation = centre.
    pub fn pose(&self) -> Pose {
        Pose::from_yaw(self.yaw).with_translation(self.center)
    }

    /// Half extents along the box-frame x, y, z axes.
    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.dims[0], self.dims[2], self.dims[1]) * 0.5
    }

    /// Expresses a camera-frame point in the box frame.
    #[inline]
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.center;
        // R^T d with R = rotation about -y by yaw
        Vector3::new(c * d.x + s * d.z, d.y, -s * d.x + c * d.z)
    }

    #[inline]
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.to_local(p);
        let half = self.half_extents();
        (0..3).all(|i| local[i].abs() <= half[i] + CONTAINMENT_SLACK)
    }

    pub fn enlarge(&self, factor: f64) -> OrientedBox3 {
        let s = 1.0 + factor;
        OrientedBox3 { center: self.center, dims: self.dims.map(|d| d * s), yaw: self.yaw }
    }

    /// Same box after moving the whole scene by a yaw-only rigid motion.
    pub fn transformed(&self, motion: &Pose) -> Result<OrientedBox3, GeometryError> {
        let yaw = motion.yaw_only(1e-9).ok_or(GeometryError::UnsupportedOrientation)?;
        Self::new(motion.apply(&self.center), self.dims, self.yaw + yaw)
    }

    /// The eight corners in the camera frame.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let pose = self.pose();
        let h = self.half_extents();
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = pose.apply(&Vector3::new(sx * h.x, sy * h.y, sz * h.z));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wide_camera() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 40.0, 0.5, 100, 80).unwrap()
    }

    #[test]
    fn compose_examples() {
        let p = Pose::rot_x(0.3).compose(&Pose::from_translation(1.0, 2.0, 3.0));
        assert!(Pose::identity().compose(&p).max_abs_diff(&p) < 1e-12);

        let t = Pose::from_translation(1.0, 0.0, 0.0).compose(&Pose::from_translation(0.0, 1.0, 0.0));
        assert!(t.max_abs_diff(&Pose::from_translation(1.0, 1.0, 0.0)) < 1e-12);

        let q = Pose::rot_z(PI / 2.0).compose(&Pose::from_translation(1.0, 0.0, 0.0));
        let o = q.apply(&Vector3::zeros());
        assert!((o - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn invert_examples() {
        assert_eq!(Pose::identity().invert(), Pose::identity());
        let t = Pose::from_translation(1.0, 2.0, 3.0).invert();
        assert!(t.max_abs_diff(&Pose::from_translation(-1.0, -2.0, -3.0)) < 1e-12);
        let r = Pose::rot_z(30f64.to_radians()).invert();
        assert!(r.max_abs_diff(&Pose::rot_z(-30f64.to_radians())) < 1e-12);
    }

    #[test]
    fn pose_validation_rejects_reflections() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(matches!(Pose::new(m, Vector3::zeros()), Err(GeometryError::InvalidPose(_))));
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(skew, Vector3::zeros()).is_err());
    }

    #[test]
    fn disparity_examples() {
        let k1 = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 1.0, 1, 1).unwrap();
        let z = DisparityMap::from_values(1, 1, vec![1.0]).unwrap();
        assert_eq!(disparity_to_depth(&z, &k1).get(0, 0), Some(1.0));

        let k = Intrinsics::new(720.0, 720.0, 0.0, 0.0, 0.5, 2, 1).unwrap();
        let z = DisparityMap::from_values(2, 1, vec![90.0, 0.0]).unwrap();
        let d = disparity_to_depth(&z, &k);
        assert_eq!(d.get(0, 0), Some(4.0));
        assert_eq!(d.get(1, 0), None);
    }

    #[test]
    fn depth_map_sanitizes_invalid_values() {
        let d = DepthMap::from_values(4, 1, vec![0.0, -1.0, f32::INFINITY, 2.5]).unwrap();
        assert_eq!(d.valid_count(), 1);
        assert_eq!(d.get(3, 0), Some(2.5));
        assert!(DepthMap::from_values(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn backproject_examples() {
        let k = wide_camera();
        let mut d = DepthMap::invalid(100, 80);
        d.set(50, 40, 2.0);
        let pts = backproject(&d, &k);
        assert_eq!(pts.len(), 1);
        assert!((pts[0].point - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);

        let p = k.backproject_pixel(k.cx + k.fx, k.cy, 3.0);
        assert!((p - Vector3::new(3.0, 0.0, 3.0)).norm() < 1e-12);

        assert!(backproject(&DepthMap::invalid(100, 80), &k).is_empty());
    }

    #[test]
    fn project_examples() {
        let k = wide_camera();
        let q = k.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((q.x, q.y), (k.cx, k.cy));
        let q = k.project(&Vector3::new(3.0, 0.0, 3.0)).unwrap();
        assert_eq!((q.x, q.y), (150.0, k.cy));
        assert!(k.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn contains_examples() {
        let b = OrientedBox3::new(Vector3::zeros(), [2.0, 2.0, 2.0], 0.0).unwrap();
        assert!(b.contains(&Vector3::new(0.5, 0.0, 0.0)));
        assert!(!b.contains(&Vector3::new(1.5, 0.0, 0.0)));

        let r = OrientedBox3::new(Vector3::zeros(), [2.0, 2.0, 2.0], PI / 4.0).unwrap();
        let p = Vector3::new(1.2, 0.0, 0.0);
        let local = r.to_local(&p);
        // by hand: (1.2 cos45, 0, -1.2 sin45)
        let h = 1.2 * (0.5f64).sqrt();
        assert!((local - Vector3::new(h, 0.0, -h)).norm() < 1e-12);
        assert!(r.contains(&p));
    }

    #[test]
    fn box_frame_axes() {
        // length along x, height along the vertical axis, width along z
        let b = OrientedBox3::new(Vector3::zeros(), [4.0, 2.0, 1.0], 0.0).unwrap();
        assert!(b.contains(&Vector3::new(1.9, 0.0, 0.0)));
        assert!(b.contains(&Vector3::new(0.0, 0.4, 0.0)));
        assert!(!b.contains(&Vector3::new(0.0, 0.6, 0.0)));
        assert!(b.contains(&Vector3::new(0.0, 0.0, 0.9)));
        assert!(!b.contains(&Vector3::new(0.0, 0.0, 1.1)));
    }

    #[test]
    fn enlarge_examples() {
        let b = OrientedBox3::new(Vector3::new(1.0, 2.0, 3.0), [2.0, 2.0, 2.0], 0.4).unwrap();
        assert_eq!(b.enlarge(0.0), b);
        let e = b.enlarge(0.15);
        for d in e.dims {
            assert!((d - 2.3).abs() < 1e-12);
        }
        assert_eq!((e.center, e.yaw), (b.center, b.yaw));
        assert_eq!(b.enlarge(1.0).dims, [4.0, 4.0, 4.0]);
    }

    #[test]
    fn yaw_is_normalized() {
        let b = OrientedBox3::new(Vector3::zeros(), [1.0, 1.0, 1.0], 3.0 * PI).unwrap();
        assert!((b.yaw - PI).abs() < 1e-12);
        let b = OrientedBox3::new(Vector3::zeros(), [1.0, 1.0, 1.0], -PI).unwrap();
        assert!((b.yaw - PI).abs() < 1e-12);
        assert!(OrientedBox3::new(Vector3::zeros(), [1.0, 0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn box_pose_round_trip() {
        let b = OrientedBox3::new(Vector3::new(1.0, 0.5, 8.0), [4.0, 1.8, 1.5], 0.7).unwrap();
        let back = OrientedBox3::from_pose(&b.pose(), b.dims).unwrap();
        assert!((back.yaw - b.yaw).abs() < 1e-12);
        assert!(OrientedBox3::from_pose(&Pose::rot_x(0.2), b.dims).is_err());
    }

    #[test]
    fn box2_half_open_and_iou() {
        let a = Box2::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = Box2::new(10.0, 0.0, 20.0, 10.0).unwrap();
        assert!(a.contains_pixel(9, 9) && !a.contains_pixel(10, 0));
        assert!(b.contains_pixel(10, 0));
        assert_eq!(a.iou(&b), 0.0);
        assert_eq!(a.iou(&a), 1.0);
        let c = Box2::new(5.0, 0.0, 15.0, 10.0).unwrap();
        assert!((a.iou(&c) - 50.0 / 150.0).abs() < 1e-12);
        assert!(Box2::new(1.0, 0.0, 1.0, 2.0).is_err());
        let (us, vs) = Box2::new(-3.5, 2.2, 4.0, 9.9).unwrap().pixel_ranges(100, 100);
        assert_eq!((us, vs), (0..4, 3..10));
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-PI..PI, -PI..PI, -PI..PI, -10.0..10.0, -10.0..10.0, -10.0..10.0).prop_map(|(a, b, c, x, y, z)| {
            Pose::rot_z(a)
                .compose(&Pose::rot_y(b))
                .compose(&Pose::rot_x(c))
                .with_translation(Vector3::new(x, y, z))
        })
    }

    proptest! {
        #[test]
        fn group_laws(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-6);
            prop_assert!(a.compose(&a.invert()).max_abs_diff(&Pose::identity()) < 1e-6);
            prop_assert!(a.invert().compose(&a).max_abs_diff(&Pose::identity()) < 1e-6);
            prop_assert!(Pose::new(*a.rotation(), *a.translation()).is_ok());
        }

        #[test]
        fn project_backproject_round_trip(u in 0usize..100, v in 0usize..80, d in 0.1f64..80.0) {
            let k = wide_camera();
            let q = k.project(&k.backproject_pixel(u as f64, v as f64, d)).unwrap();
            prop_assert!((q.x - u as f64).abs() < 1e-4 && (q.y - v as f64).abs() < 1e-4);
        }

        #[test]
        fn disparity_monotone(a in 0.01f32..500.0, b in 0.01f32..500.0) {
            let k = wide_camera();
            let z = DisparityMap::from_values(2, 1, vec![a.min(b), a.max(b)]).unwrap();
            let d = disparity_to_depth(&z, &k);
            prop_assert!(d.get(0, 0).unwrap() >= d.get(1, 0).unwrap());
        }
    }
}
