//! Splitting a depth frame into a background slice and one slice per
//! detected object, plus lidar convex-hull masking of spurious depth.

use nalgebra::{Point2, Vector3};
use thiserror::Error;

use crate::geometry::{Box2, DepthMap, Intrinsics, OrientedBox3};
use crate::TrackletId;

/// Enlargement used by [`Strategy::EnlargedBox3`].
pub const ENLARGE_FACTOR: f64 = 0.15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error("degenerate lidar hull: {usable} usable projections, need 3 non-collinear")]
    DegenerateHull { usable: usize },
    #[error("depth map is {depth_w}x{depth_h} but intrinsics describe {k_w}x{k_h}")]
    DimensionMismatch { depth_w: usize, depth_h: usize, k_w: usize, k_h: usize },
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
}

/// One detector output for a frame. `box3` is absent when 3D estimation
/// failed for the 2D proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub box2: Box2,
    pub box3: Option<OrientedBox3>,
    pub score: f64,
    pub class_label: String,
}

impl Detection {
    pub fn validate(&self) -> Result<(), DecomposeError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(DecomposeError::InvalidDetection(format!("score {} outside [0, 1]", self.score)));
        }
        self.box2.validate().map_err(|e| DecomposeError::InvalidDetection(e.to_string()))
    }
}

/// How object pixels are kept out of the background slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Strategy {
    /// Invalidate every pixel inside any detection's 2D box.
    #[default]
    #[serde(rename = "box2d")]
    Box2Invalidation,
    /// Invalidate pixels whose points fall inside the 3D box enlarged by 15%.
    #[serde(rename = "box3d15")]
    EnlargedBox3,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "box2d" => Ok(Strategy::Box2Invalidation),
            "box3d15" => Ok(Strategy::EnlargedBox3),
            other => Err(format!("unknown strategy '{other}' (expected box2d or box3d15)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Box2Invalidation => "box2d",
            Strategy::EnlargedBox3 => "box3d15",
        })
    }
}

/// Per-pixel validity bitmask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ValidityMask {
    pub fn all(width: usize, height: usize, valid: bool) -> Self {
        Self { width, height, bits: vec![valid; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    #[inline]
    pub(crate) fn get_index(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, u: usize, v: usize, valid: bool) {
        self.bits[v * self.width + u] = valid;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2<f64>>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Marks pixels inside (or on) the convex hull of the projected lidar points.
pub fn hull_mask(lidar_points: &[Vector3<f64>], k: &Intrinsics) -> Result<ValidityMask, DecomposeError> {
    let projected: Vec<Point2<f64>> = lidar_points.iter().filter_map(|p| k.project(p)).collect();
    let hull = convex_hull(&projected);
    if hull.len() < 3 {
        return Err(DecomposeError::DegenerateHull { usable: projected.len() });
    }

    // pixels lying on a hull edge count as inside
    const ON_EDGE: f64 = 1e-9;
    let mut mask = ValidityMask::all(k.width, k.height, false);
    let (min_y, max_y) = hull.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    for v in 0..k.height {
        let vf = v as f64;
        if vf < min_y - 1.0 || vf > max_y + 1.0 {
            continue;
        }
        for u in 0..k.width {
            let p = Point2::new(u as f64, vf);
            let inside = (0..hull.len()).all(|i| {
                let a = &hull[i];
                let b = &hull[(i + 1) % hull.len()];
                let scale = (b - a).norm().max(1.0);
                cross(a, b, &p) >= -ON_EDGE * scale
            });
            if inside {
                mask.set(u, v, true);
            }
        }
    }
    Ok(mask)
}

/// Output of [`decompose`]. Object slices follow the order of the input
/// detections that carried a 3D box.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub background: DepthMap,
    pub object_slices: Vec<(TrackletId, DepthMap)>,
    pub strategy_used: Strategy,
}

/// Splits `depth` into background and per-object slices.
///
/// A pixel whose backprojected point lies in several 3D boxes goes to the box
/// with the nearest centre, ties broken by the lower tracklet id.
pub fn decompose(
    depth: &DepthMap,
    detections: &[(TrackletId, Detection)],
    k: &Intrinsics,
    strategy: Strategy,
) -> Result<DecompositionResult, DecomposeError> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(DecomposeError::DimensionMismatch {
            depth_w: depth.width(),
            depth_h: depth.height(),
            k_w: k.width,
            k_h: k.height,
        });
    }

    let carriers: Vec<(TrackletId, &OrientedBox3)> =
        detections.iter().filter_map(|(id, d)| d.box3.as_ref().map(|b| (*id, b))).collect();
    let enlarged: Vec<OrientedBox3> = match strategy {
        Strategy::EnlargedBox3 => carriers.iter().map(|(_, b)| b.enlarge(ENLARGE_FACTOR)).collect(),
        Strategy::Box2Invalidation => Vec::new(),
    };

    let mut background = depth.clone();
    let mut slices: Vec<DepthMap> = carriers.iter().map(|_| DepthMap::invalid(depth.width(), depth.height())).collect();

    for (u, v, d) in depth.iter_valid() {
        let p = k.backproject_pixel(u as f64, v as f64, d as f64);

        let mut owner: Option<(usize, f64, TrackletId)> = None;
        for (i, (id, b)) in carriers.iter().enumerate() {
            if !b.contains(&p) {
                continue;
            }
            let dist = (p - b.center).norm_squared();
            let better = match owner {
                None => true,
                Some((_, best, best_id)) => dist < best || (dist == best && *id < best_id),
            };
            if better {
                owner = Some((i, dist, *id));
            }
        }

        if let Some((i, _, _)) = owner {
            slices[i].set(u, v, d);
            background.invalidate(u, v);
            continue;
        }

        let removed = match strategy {
            Strategy::Box2Invalidation => detections.iter().any(|(_, det)| det.box2.contains_pixel(u, v)),
            Strategy::EnlargedBox3 => enlarged.iter().any(|b| b.contains(&p)),
        };
        if removed {
            background.invalidate(u, v);
        }
    }

    let object_slices = carriers.iter().map(|(id, _)| *id).zip(slices).collect();
    Ok(DecompositionResult { background, object_slices, strategy_used: strategy })
}
