use std::collections::HashMap;

use nalgebra::Vector3;

use super::mc_table::{CORNERS, EDGES, TRIANGLES};
use super::{TsdfVolume, Voxel};

/// Indexed triangle mesh with per-vertex colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Copy with every vertex mapped through `f`.
    pub fn map_vertices(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> TriangleMesh {
        TriangleMesh { vertices: self.vertices.iter().map(f).collect(), colors: self.colors.clone(), faces: self.faces.clone() }
    }
}

impl TsdfVolume {
    /// Marching cubes over the lattice of voxel centres. Cubes with any
    /// unobserved corner are skipped; edge vertices are shared between
    /// neighbouring cubes.
    pub fn extract_mesh(&self) -> TriangleMesh {
        let mut mesh = TriangleMesh::default();
        let mut edge_vertex: HashMap<([i64; 3], u8), u32> = HashMap::new();
        let side = self.config.block_side as i64;

        for key in self.sorted_keys() {
            let base = [key.x as i64 * side, key.y as i64 * side, key.z as i64 * side];
            for lz in 0..side {
                for ly in 0..side {
                    for lx in 0..side {
                        let g = [base[0] + lx, base[1] + ly, base[2] + lz];
                        self.march_cube(g, &mut mesh, &mut edge_vertex);
                    }
                }
            }
        }
        mesh
    }

    fn march_cube(&self, g: [i64; 3], mesh: &mut TriangleMesh, edge_vertex: &mut HashMap<([i64; 3], u8), u32>) {
        let mut corner = [Voxel::default(); 8];
        for (c, off) in CORNERS.iter().enumerate() {
            match self.voxel([g[0] + off[0], g[1] + off[1], g[2] + off[2]]) {
                Some(v) if v.observed() => corner[c] = *v,
                _ => return,
            }
        }
        let mut index = 0usize;
        for (c, v) in corner.iter().enumerate() {
            if v.tsdf < 0.0 {
                index |= 1 << c;
            }
        }
        let row = &TRIANGLES[index];
        if row[0] < 0 {
            return;
        }

        let mut tri = [0u32; 3];
        for (n, &e) in row.iter().take_while(|&&e| e >= 0).enumerate() {
            let (a, b) = EDGES[e as usize];
            let ga = [g[0] + CORNERS[a][0], g[1] + CORNERS[a][1], g[2] + CORNERS[a][2]];
            let gb = [g[0] + CORNERS[b][0], g[1] + CORNERS[b][1], g[2] + CORNERS[b][2]];
            let axis = (0..3).find(|&i| ga[i] != gb[i]).unwrap_or(0) as u8;
            let lower = if ga[axis as usize] < gb[axis as usize] { ga } else { gb };
            let id = *edge_vertex.entry((lower, axis)).or_insert_with(|| {
                let (va, vb) = (corner[a], corner[b]);
                let t = (va.tsdf as f64 / (va.tsdf as f64 - vb.tsdf as f64)).clamp(0.0, 1.0);
                let pa = self.voxel_center(ga);
                let pb = self.voxel_center(gb);
                mesh.vertices.push(pa + (pb - pa) * t);
                let mut color = [0u8; 3];
                for (i, c) in color.iter_mut().enumerate() {
                    *c = (va.color[i] as f64 + (vb.color[i] as f64 - va.color[i] as f64) * t).round() as u8;
                }
                mesh.colors.push(color);
                (mesh.vertices.len() - 1) as u32
            });
            tri[n % 3] = id;
            if n % 3 == 2 && tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                mesh.faces.push(tri);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Block, BlockKey, VolumeConfig};
    use super::*;
    use crate::geometry::{DepthMap, Intrinsics, Pose, RgbImage};

    /// Fills whole blocks around the origin from an analytic signed distance.
    fn volume_from_sdf(voxel: f64, blocks: i32, sdf: impl Fn(&Vector3<f64>) -> f64) -> TsdfVolume {
        let cfg = VolumeConfig::with_voxel_size(voxel);
        let mut vol = TsdfVolume::new(cfg).unwrap();
        let side = cfg.block_side as i64;
        for x in -blocks..blocks {
            for y in -blocks..blocks {
                for z in -blocks..blocks {
                    let mut block = Block::new(cfg.block_side);
                    for (i, v) in block.voxels.iter_mut().enumerate() {
                        let i = i as i64;
                        let g = [x as i64 * side + i % side, y as i64 * side + (i / side) % side, z as i64 * side + i / (side * side)];
                        let p = vol.voxel_center(g);
                        *v = Voxel { tsdf: (sdf(&p) / cfg.trunc_dist).clamp(-1.0, 1.0) as f32, weight: 1.0, color: [100, 150, 200] };
                    }
                    vol.blocks.insert(BlockKey::new(x, y, z), block);
                }
            }
        }
        vol
    }

    #[test]
    fn empty_volume_empty_mesh() {
        let vol = TsdfVolume::new(VolumeConfig::with_voxel_size(0.1)).unwrap();
        assert!(vol.extract_mesh().is_empty());
    }

    #[test]
    fn interior_block_without_observed_neighbours() {
        let cfg = VolumeConfig::with_voxel_size(0.1);
        let mut vol = TsdfVolume::new(cfg).unwrap();
        let mut block = Block::new(cfg.block_side);
        block.voxels.iter_mut().for_each(|v| *v = Voxel { tsdf: -0.5, weight: 1.0, color: [0; 3] });
        vol.blocks.insert(BlockKey::new(0, 0, 0), block);
        assert!(vol.extract_mesh().is_empty());
    }

    #[test]
    fn plane_vertices_lie_on_plane() {
        let k = Intrinsics::new(40.0, 40.0, 19.5, 14.5, 0.5, 40, 30).unwrap();
        let cfg = VolumeConfig::with_voxel_size(0.02);
        let mut vol = TsdfVolume::new(cfg).unwrap();
        let d = DepthMap::from_values(40, 30, vec![2.0; 1200]).unwrap();
        vol.integrate(&d, &RgbImage::filled(40, 30, [10, 20, 30]), &k, &Pose::identity()).unwrap();
        let mesh = vol.extract_mesh();
        assert!(mesh.faces.len() > 100);
        for p in &mesh.vertices {
            assert!((p.z - 2.0).abs() < cfg.voxel_size, "{p}");
        }
        assert!(mesh.colors.iter().all(|c| *c == [10, 20, 30]));
    }

    #[test]
    fn sphere_is_closed_and_accurate() {
        let r = 0.3;
        let vol = volume_from_sdf(0.02, 3, |p| p.norm() - r);
        let mesh = vol.extract_mesh();
        assert!(!mesh.is_empty());
        for p in &mesh.vertices {
            assert!((p.norm() - r).abs() < 0.02 * 0.25, "{}", p.norm());
        }
        // every undirected edge is shared by exactly two faces
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for f in &mesh.faces {
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(edges.values().all(|&n| n == 2));
        // Euler characteristic of a sphere
        let chi = mesh.vertices.len() as i64 - edges.len() as i64 + mesh.faces.len() as i64;
        assert_eq!(chi, 2);
    }
}
