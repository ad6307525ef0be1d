//! Sparse voxel-block-hashed TSDF volume.
//!
//! Space is split into cubic blocks of `block_side³` voxels; a block is only
//! stored once some depth sample's truncation band passes through it.
//! Voxel `g` (integer index) covers `[g·s, (g+1)·s)` and is sampled at its
//! centre `(g + 0.5)·s`.

mod mc_table;
mod mesh;
mod raycast;

use std::collections::{HashMap, HashSet};
use std::hash::{BuildHasherDefault, Hash, Hasher};

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{DepthMap, Intrinsics, Pose, RgbImage};

pub use mesh::TriangleMesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsdfError {
    #[error("invalid volume config: {0}")]
    InvalidConfig(String),
    #[error("input size mismatch: {0}")]
    SizeMismatch(String),
}

/// Voxel size for the background volume (meters).
pub const BACKGROUND_VOXEL_SIZE: f64 = 0.0468;
/// Voxel size for object volumes (meters).
pub const OBJECT_VOXEL_SIZE: f64 = 0.0156;
/// Depth beyond which samples are not integrated (meters).
pub const DEFAULT_MAX_DEPTH: f64 = 40.0;
pub const DEFAULT_MAX_WEIGHT: f32 = 128.0;
pub const DEFAULT_BLOCK_SIDE: usize = 8;
/// Truncation band as a multiple of the voxel size.
pub const DEFAULT_TRUNC_VOXELS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VolumeConfig {
    pub voxel_size: f64,
    pub trunc_dist: f64,
    pub max_weight: f32,
    pub block_side: usize,
    pub max_depth: f64,
}

impl VolumeConfig {
    /// Defaults for a given voxel size: truncation 4 voxels, weight cap 128,
    /// 8³ blocks, 40 m depth cap.
    pub fn with_voxel_size(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            trunc_dist: DEFAULT_TRUNC_VOXELS * voxel_size,
            max_weight: DEFAULT_MAX_WEIGHT,
            block_side: DEFAULT_BLOCK_SIDE,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }

    pub fn background() -> Self {
        Self::with_voxel_size(BACKGROUND_VOXEL_SIZE)
    }

    pub fn object() -> Self {
        Self::with_voxel_size(OBJECT_VOXEL_SIZE)
    }

    pub fn validate(&self) -> Result<(), TsdfError> {
        let err = |m: &str| Err(TsdfError::InvalidConfig(m.to_string()));
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return err("voxel_size must be positive");
        }
        if !(self.trunc_dist.is_finite() && self.trunc_dist >= 2.0 * self.voxel_size * (1.0 - 1e-12)) {
            return err("trunc_dist must be at least 2 voxels");
        }
        if self.block_side < 2 {
            return err("block_side must be at least 2");
        }
        if !(self.max_weight >= 1.0) {
            return err("max_weight must be at least 1");
        }
        if !(self.max_depth.is_finite() && self.max_depth > 0.0) {
            return err("max_depth must be positive");
        }
        Ok(())
    }

    #[inline]
    pub fn block_extent(&self) -> f64 {
        self.voxel_size * self.block_side as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel {
    /// Signed distance divided by the truncation distance, in `[-1, 1]`.
    pub tsdf: f32,
    /// Zero means unobserved.
    pub weight: f32,
    pub color: [u8; 3],
}

impl Default for Voxel {
    fn default() -> Self {
        Self { tsdf: 1.0, weight: 0.0, color: [0; 3] }
    }
}

impl Voxel {
    #[inline]
    pub fn observed(&self) -> bool {
        self.weight > 0.0
    }
}

/// Integer block coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockKey {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl BlockKey {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    /// Block holding voxel `v`.
    #[inline]
    pub fn of_voxel(v: [i64; 3], block_side: usize) -> Self {
        let b = block_side as i64;
        Self::new(v[0].div_euclid(b) as i32, v[1].div_euclid(b) as i32, v[2].div_euclid(b) as i32)
    }

    /// Block holding point `p`: `floor(floor(p / voxel_size) / block_side)`.
    #[inline]
    pub fn of_point(p: &Vector3<f64>, config: &VolumeConfig) -> Self {
        Self::of_voxel(voxel_of_point(p, config.voxel_size), config.block_side)
    }

    fn as_array(&self) -> [i64; 3] {
        [self.x as i64, self.y as i64, self.z as i64]
    }
}

#[inline]
pub fn voxel_of_point(p: &Vector3<f64>, voxel_size: f64) -> [i64; 3] {
    [(p.x / voxel_size).floor() as i64, (p.y / voxel_size).floor() as i64, (p.z / voxel_size).floor() as i64]
}

/// SplitMix64-style mixing of the three block coordinates.
#[derive(Default, Clone, Copy)]
pub struct BlockKeyHasher(u64);

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Hasher for BlockKeyHasher {
    fn finish(&self) -> u64 {
        mix64(self.0)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = mix64(self.0 ^ b as u64);
        }
    }

    fn write_i32(&mut self, v: i32) {
        self.0 = mix64(self.0.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ (v as u32 as u64));
    }
}

pub type BlockMap<V> = HashMap<BlockKey, V, BuildHasherDefault<BlockKeyHasher>>;
type BlockSet = HashSet<BlockKey, BuildHasherDefault<BlockKeyHasher>>;

/// Dense `side³` voxel array, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    voxels: Box<[Voxel]>,
}

impl Block {
    fn new(side: usize) -> Self {
        Self { voxels: vec![Voxel::default(); side * side * side].into_boxed_slice() }
    }

    pub fn voxels(&self) -> &[Voxel] {
        &self.voxels
    }

    fn any_observed(&self) -> bool {
        self.voxels.iter().any(Voxel::observed)
    }
}

/// Counters returned by [`TsdfVolume::integrate`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct IntegrationStats {
    /// Valid depth pixels within the depth cap.
    pub pixels_used: usize,
    /// Blocks whose allocation band was hit this frame.
    pub touched_blocks: usize,
    /// Blocks added to the volume by this frame.
    pub new_blocks: usize,
    pub updated_voxels: usize,
}

#[derive(Debug, Clone)]
pub struct TsdfVolume {
    config: VolumeConfig,
    blocks: BlockMap<Block>,
}

impl TsdfVolume {
    pub fn new(config: VolumeConfig) -> Result<Self, TsdfError> {
        config.validate()?;
        Ok(Self { config, blocks: BlockMap::default() })
    }

    pub fn config(&self) -> &VolumeConfig {
        &self.config
    }

    pub fn allocated_block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, key: &BlockKey) -> Option<&Block> {
        self.blocks.get(key)
    }

    /// Allocated keys in ascending order.
    pub fn sorted_keys(&self) -> Vec<BlockKey> {
        let mut keys: Vec<BlockKey> = self.blocks.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    #[inline]
    fn local_index(&self, local: [i64; 3]) -> usize {
        let b = self.config.block_side;
        local[0] as usize + b * (local[1] as usize + b * local[2] as usize)
    }

    /// Voxel with global index `g`, if its block is allocated.
    #[inline]
    pub fn voxel(&self, g: [i64; 3]) -> Option<&Voxel> {
        let b = self.config.block_side as i64;
        let key = BlockKey::of_voxel(g, self.config.block_side);
        let block = self.blocks.get(&key)?;
        let local = [g[0].rem_euclid(b), g[1].rem_euclid(b), g[2].rem_euclid(b)];
        Some(&block.voxels[self.local_index(local)])
    }

    /// Centre of voxel `g` in the volume frame.
    #[inline]
    pub fn voxel_center(&self, g: [i64; 3]) -> Vector3<f64> {
        let s = self.config.voxel_size;
        Vector3::new((g[0] as f64 + 0.5) * s, (g[1] as f64 + 0.5) * s, (g[2] as f64 + 0.5) * s)
    }

    /// `(global voxel index, voxel)` for every stored voxel, blocks in key order.
    pub fn iter_voxels(&self) -> impl Iterator<Item = ([i64; 3], &Voxel)> + '_ {
        let b = self.config.block_side as i64;
        self.sorted_keys().into_iter().flat_map(move |key| {
            let base = key.as_array().map(|c| c * b);
            let block = &self.blocks[&key];
            block.voxels.iter().enumerate().map(move |(i, v)| {
                let i = i as i64;
                ([base[0] + i % b, base[1] + (i / b) % b, base[2] + i / (b * b)], v)
            })
        })
    }

    /// Order-independent digest of all stored voxel contents.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for key in self.sorted_keys() {
            feed(key.x as u32 as u64);
            feed(key.y as u32 as u64);
            feed(key.z as u32 as u64);
            for v in self.blocks[&key].voxels.iter() {
                feed(v.tsdf.to_bits() as u64);
                feed(v.weight.to_bits() as u64);
                feed(u32::from_le_bytes([v.color[0], v.color[1], v.color[2], 0]) as u64);
            }
        }
        h
    }

    /// Fuses one depth frame observed from a camera whose pose in the volume
    /// frame is `volume_from_camera`.
    pub fn integrate(
        &mut self,
        depth: &DepthMap,
        color: &RgbImage,
        k: &Intrinsics,
        volume_from_camera: &Pose,
    ) -> Result<IntegrationStats, TsdfError> {
        if depth.width() != k.width || depth.height() != k.height {
            return Err(TsdfError::SizeMismatch(format!(
                "depth {}x{} vs intrinsics {}x{}",
                depth.width(),
                depth.height(),
                k.width,
                k.height
            )));
        }
        if color.width != k.width || color.height != k.height {
            return Err(TsdfError::SizeMismatch(format!(
                "color {}x{} vs intrinsics {}x{}",
                color.width, color.height, k.width, k.height
            )));
        }

        let cfg = self.config;
        let mut stats = IntegrationStats::default();

        // allocation: every block crossed by [d - trunc, d + trunc] along each pixel ray
        let mut touched = BlockSet::default();
        for (u, v, d) in depth.iter_valid() {
            let d = d as f64;
            if d > cfg.max_depth {
                continue;
            }
            stats.pixels_used += 1;
            let ray = k.ray(u as f64, v as f64);
            let near = (d - cfg.trunc_dist).max(0.0);
            let p0 = volume_from_camera.apply(&(ray * near));
            let p1 = volume_from_camera.apply(&(ray * (d + cfg.trunc_dist)));
            traverse_blocks(&p0, &p1, &cfg, |key| {
                touched.insert(key);
            });
        }
        if touched.is_empty() {
            return Ok(stats);
        }
        let mut keys: Vec<BlockKey> = touched.into_iter().collect();
        keys.sort_unstable();
        stats.touched_blocks = keys.len();

        // update: voxels of touched blocks, each block independently
        let camera_from_volume = volume_from_camera.invert();
        let mut work: Vec<(BlockKey, Block, bool)> = keys
            .into_iter()
            .map(|key| match self.blocks.remove(&key) {
                Some(b) => (key, b, false),
                None => (key, Block::new(cfg.block_side), true),
            })
            .collect();
        let updated: usize = work
            .par_iter_mut()
            .map(|(key, block, _)| update_block(*key, block, depth, color, k, &camera_from_volume, &cfg))
            .sum();
        stats.updated_voxels = updated;

        for (key, block, is_new) in work {
            if is_new {
                if !block.any_observed() {
                    continue;
                }
                stats.new_blocks += 1;
            }
            self.blocks.insert(key, block);
        }
        Ok(stats)
    }

    /// Trilinear `(tsdf, weight)` at `p`, or `None` when any of the eight
    /// neighbouring voxels is unallocated or unobserved.
    pub fn query_tsdf(&self, p: &Vector3<f64>) -> Option<(f32, f32)> {
        let s = self.config.voxel_size;
        let g = [p.x / s - 0.5, p.y / s - 0.5, p.z / s - 0.5];
        let base = g.map(|c| c.floor() as i64);
        let f = [g[0] - base[0] as f64, g[1] - base[1] as f64, g[2] - base[2] as f64];

        let b = self.config.block_side as i64;
        let local = [base[0].rem_euclid(b), base[1].rem_euclid(b), base[2].rem_euclid(b)];
        let mut corners = [Voxel::default(); 8];
        if local.iter().all(|&l| l < b - 1) {
            // all eight corners in one block
            let block = self.blocks.get(&BlockKey::of_voxel(base, self.config.block_side))?;
            for (i, c) in corners.iter_mut().enumerate() {
                let idx = self.local_index([local[0] + (i & 1) as i64, local[1] + ((i >> 1) & 1) as i64, local[2] + (i >> 2) as i64]);
                *c = block.voxels[idx];
            }
        } else {
            for (i, c) in corners.iter_mut().enumerate() {
                *c = *self.voxel([base[0] + (i & 1) as i64, base[1] + ((i >> 1) & 1) as i64, base[2] + (i >> 2) as i64])?;
            }
        }
        if corners.iter().any(|c| !c.observed()) {
            return None;
        }
        let mut tsdf = 0.0;
        let mut weight = 0.0;
        for (i, c) in corners.iter().enumerate() {
            let wx = if i & 1 == 1 { f[0] } else { 1.0 - f[0] };
            let wy = if (i >> 1) & 1 == 1 { f[1] } else { 1.0 - f[1] };
            let wz = if (i >> 2) == 1 { f[2] } else { 1.0 - f[2] };
            let w = wx * wy * wz;
            tsdf += w * c.tsdf as f64;
            weight += w * c.weight as f64;
        }
        Some((tsdf as f32, weight as f32))
    }

    /// Axis-aligned bounds of all allocated blocks, in meters.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut keys = self.blocks.keys();
        let first = keys.next()?;
        let (mut lo, mut hi) = (first.as_array(), first.as_array());
        for k in keys {
            let a = k.as_array();
            for i in 0..3 {
                lo[i] = lo[i].min(a[i]);
                hi[i] = hi[i].max(a[i]);
            }
        }
        let e = self.config.block_extent();
        Some((
            Vector3::new(lo[0] as f64 * e, lo[1] as f64 * e, lo[2] as f64 * e),
            Vector3::new((hi[0] + 1) as f64 * e, (hi[1] + 1) as f64 * e, (hi[2] + 1) as f64 * e),
        ))
    }

    #[inline]
    pub(crate) fn has_block(&self, key: &BlockKey) -> bool {
        self.blocks.contains_key(key)
    }
}

/// Visits every block crossed by the segment `p0 → p1` (3D DDA).
fn traverse_blocks(p0: &Vector3<f64>, p1: &Vector3<f64>, cfg: &VolumeConfig, mut visit: impl FnMut(BlockKey)) {
    let start = BlockKey::of_point(p0, cfg).as_array();
    let end = BlockKey::of_point(p1, cfg).as_array();
    let extent = cfg.block_extent();
    let a = p0 / extent;
    let dir = (p1 - p0) / extent;

    let mut cell = start;
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for i in 0..3 {
        if dir[i] > 0.0 {
            step[i] = 1;
            t_max[i] = ((cell[i] + 1) as f64 - a[i]) / dir[i];
            t_delta[i] = 1.0 / dir[i];
        } else if dir[i] < 0.0 {
            step[i] = -1;
            t_max[i] = (cell[i] as f64 - a[i]) / dir[i];
            t_delta[i] = -1.0 / dir[i];
        }
    }
    let budget = (0..3).map(|i| (end[i] - start[i]).abs()).sum::<i64>() + 3;
    for _ in 0..=budget {
        visit(BlockKey::new(cell[0] as i32, cell[1] as i32, cell[2] as i32));
        if cell == end {
            return;
        }
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[axis] > 1.0 + 1e-9 {
            break;
        }
        cell[axis] += step[axis];
        t_max[axis] += t_delta[axis];
    }
    visit(BlockKey::new(end[0] as i32, end[1] as i32, end[2] as i32));
}

fn update_block(
    key: BlockKey,
    block: &mut Block,
    depth: &DepthMap,
    color: &RgbImage,
    k: &Intrinsics,
    camera_from_volume: &Pose,
    cfg: &VolumeConfig,
) -> usize {
    let side = cfg.block_side;
    let s = cfg.voxel_size;
    let base = key.as_array().map(|c| c * side as i64);
    let origin = Vector3::new((base[0] as f64 + 0.5) * s, (base[1] as f64 + 0.5) * s, (base[2] as f64 + 0.5) * s);
    let c0 = camera_from_volume.apply(&origin);
    let r = camera_from_volume.rotation();
    let dx = r.column(0) * s;
    let dy = r.column(1) * s;
    let dz = r.column(2) * s;

    let half = cfg.block_extent() * 0.5;
    let centre = c0 + (dx + dy + dz) * ((side as f64 - 1.0) * 0.5);
    let radius = half * 3f64.sqrt();
    if centre.z + radius <= 0.0 || centre.z - radius > cfg.max_depth + cfg.trunc_dist {
        return 0;
    }

    let trunc = cfg.trunc_dist;
    let inv_trunc = 1.0 / trunc;
    let z_far = cfg.max_depth + trunc;
    let (w, h) = (k.width as f64, k.height as f64);
    let depth_values = depth.values();
    let max_weight = cfg.max_weight as f64;
    let mut updated = 0;
    let mut idx = 0;
    for kz in 0..side {
        for ky in 0..side {
            let row = c0 + dy * ky as f64 + dz * kz as f64;
            for kx in 0..side {
                let p = row + dx * kx as f64;
                let i = idx;
                idx += 1;
                if p.z <= 0.0 || p.z > z_far {
                    continue;
                }
                let inv_z = 1.0 / p.z;
                let uf = k.fx * p.x * inv_z + k.cx;
                let vf = k.fy * p.y * inv_z + k.cy;
                // same test as Intrinsics::round_pixel
                if !(uf > -0.5 && uf < w - 0.5 && vf > -0.5 && vf < h - 0.5) {
                    continue;
                }
                let pix = (vf + 0.5) as usize * k.width + (uf + 0.5) as usize;
                let d = depth_values[pix];
                if !(d > 0.0) {
                    continue;
                }
                let d = d as f64;
                if d > cfg.max_depth {
                    continue;
                }
                let sdf = d - p.z;
                if sdf < -trunc {
                    continue;
                }
                let sample = (sdf * inv_trunc).min(1.0) as f32 as f64;
                let vox = &mut block.voxels[i];
                let wt = vox.weight as f64;
                let inv_total = 1.0 / (wt + 1.0);
                vox.tsdf = ((vox.tsdf as f64 * wt + sample) * inv_total) as f32;
                let rgb = color.pixels[pix];
                for c in 0..3 {
                    vox.color[c] = ((vox.color[c] as f64 * wt + rgb[c] as f64) * inv_total + 0.5) as u8;
                }
                vox.weight = (wt + 1.0).min(max_weight) as f32;
                updated += 1;
            }
        }
    }
    updated
}
