use nalgebra::Vector3;
use rayon::prelude::*;

use super::{BlockKey, TsdfVolume};
use crate::geometry::{DepthMap, Intrinsics, Pose};

/// Closest depth at which rays start marching (meters).
pub const RAYCAST_NEAR: f64 = 0.1;

impl TsdfVolume {
    /// Renders the z-depth of the zero level set seen from `volume_from_camera`.
    /// Pixels whose ray finds no `+ → −` crossing are invalid.
    pub fn raycast(&self, k: &Intrinsics, volume_from_camera: &Pose) -> DepthMap {
        let mut out = DepthMap::invalid(k.width, k.height);
        let Some((lo, hi)) = self.bounds() else {
            return out;
        };
        let rows: Vec<Vec<f32>> = (0..k.height)
            .into_par_iter()
            .map(|v| {
                (0..k.width)
                    .map(|u| {
                        self.cast_ray(k, volume_from_camera, u, v, &lo, &hi)
                            .map_or(f32::NAN, |z| z as f32)
                    })
                    .collect()
            })
            .collect();
        for (v, row) in rows.into_iter().enumerate() {
            for (u, z) in row.into_iter().enumerate() {
                if z.is_finite() {
                    out.set(u, v, z);
                }
            }
        }
        out
    }

    fn cast_ray(
        &self,
        k: &Intrinsics,
        pose: &Pose,
        u: usize,
        v: usize,
        lo: &Vector3<f64>,
        hi: &Vector3<f64>,
    ) -> Option<f64> {
        let cfg = &self.config;
        // parametrize by camera z-depth: p(z) = origin + z·dir
        let dir = pose.apply_vector(&k.ray(u as f64, v as f64));
        let origin = *pose.translation();
        let (mut z, z_end) = clip_to_box(&origin, &dir, lo, hi, RAYCAST_NEAR, cfg.max_depth)?;
        let inv_len = 1.0 / dir.norm();
        let half_voxel = 0.5 * cfg.voxel_size * inv_len;
        let extent = cfg.block_extent();

        let mut prev: Option<(f64, f32)> = None;
        while z <= z_end {
            let p = origin + dir * z;
            let key = BlockKey::of_point(&p, cfg);
            if !self.has_block(&key) {
                prev = None;
                // jump to where the ray leaves this block
                z = block_exit(&origin, &dir, &key, extent).max(z + half_voxel * 0.01) + half_voxel * 0.01;
                continue;
            }
            match self.query_tsdf(&p) {
                None => {
                    prev = None;
                    z += half_voxel;
                }
                Some((tsdf, _)) => {
                    if let Some((zp, tp)) = prev {
                        // a flip between saturated values is a truncation edge, not a surface
                        let saturated = tp >= 0.999 && tsdf <= -0.999;
                        if tp > 0.0 && tsdf <= 0.0 && !saturated {
                            let zc = zp + (z - zp) * tp as f64 / (tp as f64 - tsdf as f64);
                            return Some(zc);
                        }
                    }
                    prev = Some((z, tsdf));
                    let step = if tsdf > 0.0 {
                        (0.5 * tsdf as f64 * cfg.trunc_dist * inv_len).max(half_voxel)
                    } else {
                        half_voxel
                    };
                    z += step;
                }
            }
        }
        None
    }
}

/// Depth range of `origin + z·dir` inside the box, intersected with `[near, far]`.
fn clip_to_box(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
    near: f64,
    far: f64,
) -> Option<(f64, f64)> {
    let mut t0 = near;
    let mut t1 = far;
    for i in 0..3 {
        if dir[i].abs() < 1e-15 {
            if origin[i] < lo[i] || origin[i] > hi[i] {
                return None;
            }
            continue;
        }
        let a = (lo[i] - origin[i]) / dir[i];
        let b = (hi[i] - origin[i]) / dir[i];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1).then_some((t0, t1))
}

fn block_exit(origin: &Vector3<f64>, dir: &Vector3<f64>, key: &BlockKey, extent: f64) -> f64 {
    let lo = Vector3::new(key.x as f64, key.y as f64, key.z as f64) * extent;
    let mut exit = f64::INFINITY;
    for i in 0..3 {
        if dir[i] > 1e-15 {
            exit = exit.min((lo[i] + extent - origin[i]) / dir[i]);
        } else if dir[i] < -1e-15 {
            exit = exit.min((lo[i] - origin[i]) / dir[i]);
        }
    }
    exit
}

#[cfg(test)]
mod tests {
    use super::super::VolumeConfig;
    use super::*;
    use crate::geometry::RgbImage;

    fn k() -> Intrinsics {
        Intrinsics::new(40.0, 40.0, 19.5, 14.5, 0.5, 40, 30).unwrap()
    }

    #[test]
    fn empty_volume_renders_nothing() {
        let vol = TsdfVolume::new(VolumeConfig::with_voxel_size(0.02)).unwrap();
        assert_eq!(vol.raycast(&k(), &Pose::identity()).valid_count(), 0);
    }

    #[test]
    fn plane_round_trip() {
        let k = k();
        let cfg = VolumeConfig::with_voxel_size(0.02);
        let mut vol = TsdfVolume::new(cfg).unwrap();
        let d = DepthMap::from_values(40, 30, vec![2.0; 1200]).unwrap();
        vol.integrate(&d, &RgbImage::filled(40, 30, [9; 3]), &k, &Pose::identity()).unwrap();
        let r = vol.raycast(&k, &Pose::identity());
        let c = r.get(20, 15).expect("centre pixel");
        assert!((c as f64 - 2.0).abs() < cfg.voxel_size, "{c}");
        let mut errs: Vec<f64> = r.iter_valid().map(|(_, _, z)| (z as f64 - 2.0).abs()).collect();
        assert!(errs.len() > 1000);
        errs.sort_by(f64::total_cmp);
        assert!(errs[errs.len() / 2] < cfg.voxel_size);
    }

    #[test]
    fn marching_skips_unobserved_gaps() {
        // the ray starts in free space and crosses unallocated and unobserved voxels first
        let k = k();
        let cfg = VolumeConfig::with_voxel_size(0.02);
        let mut vol = TsdfVolume::new(cfg).unwrap();
        let far = DepthMap::from_values(40, 30, vec![3.0; 1200]).unwrap();
        vol.integrate(&far, &RgbImage::filled(40, 30, [9; 3]), &k, &Pose::identity()).unwrap();
        let r = vol.raycast(&k, &Pose::from_translation(0.0, 0.0, 1.0));
        let c = r.get(20, 15).expect("centre pixel");
        assert!((c as f64 - 2.0).abs() < cfg.voxel_size, "{c}");
    }

    #[test]
    fn clip_box() {
        let o = Vector3::zeros();
        let d = Vector3::new(0.0, 0.0, 1.0);
        let r = clip_to_box(&o, &d, &Vector3::new(-1.0, -1.0, 2.0), &Vector3::new(1.0, 1.0, 3.0), 0.1, 40.0);
        assert_eq!(r, Some((2.0, 3.0)));
        assert!(clip_to_box(&o, &d, &Vector3::new(2.0, -1.0, 2.0), &Vector3::new(3.0, 1.0, 3.0), 0.1, 40.0).is_none());
    }
}
