use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{read_string, write_bytes, IoError};
use crate::tsdf::TriangleMesh;

/// ASCII PLY text: `x y z red green blue` per vertex, `3 i j k` per face.
pub fn write_ply_to(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(64 * mesh.vertices.len() + 32 * mesh.faces.len() + 256);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertices.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    let _ = writeln!(out, "element face {}", mesh.faces.len());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for (p, c) in mesh.vertices.iter().zip(&mesh.colors) {
        let _ = writeln!(out, "{:.6} {:.6} {:.6} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

pub fn write_ply(path: &Path, mesh: &TriangleMesh) -> Result<(), IoError> {
    write_bytes(path, write_ply_to(mesh).as_bytes())
}

pub fn read_ply(path: &Path) -> Result<TriangleMesh, IoError> {
    parse_ply(&read_string(path)?, path)
}

/// Reads the layout produced by [`write_ply_to`].
pub fn parse_ply(text: &str, path: &Path) -> Result<TriangleMesh, IoError> {
    let err = |line: usize, message: String| IoError::Parse { path: path.to_path_buf(), location: format!("line {}", line + 1), message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        other => {
            return Err(IoError::BadMagic {
                path: path.to_path_buf(),
                found: other.map(|(_, l)| l.chars().take(8).collect()).unwrap_or_default(),
                expected: "ply",
            })
        }
    }

    let mut n_vertices = None;
    let mut n_faces = None;
    loop {
        let Some((i, line)) = lines.next() else {
            return Err(err(text.lines().count(), "missing end_header".into()));
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", "1.0"] | ["comment", ..] | ["property", ..] => {}
            ["format", ..] => return Err(err(i, format!("unsupported format '{line}'"))),
            ["element", name, count] => {
                let n: usize = count.parse().map_err(|_| err(i, format!("bad element count '{count}'")))?;
                match *name {
                    "vertex" => n_vertices = Some(n),
                    "face" => n_faces = Some(n),
                    _ => return Err(err(i, format!("unexpected element '{name}'"))),
                }
            }
            _ => return Err(err(i, format!("unexpected header line '{line}'"))),
        }
    }

    let mut mesh = TriangleMesh::default();
    for _ in 0..n_vertices.unwrap_or(0) {
        let (i, line) = lines.next().ok_or_else(|| err(text.lines().count(), "missing vertex lines".into()))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 6 {
            return Err(err(i, format!("expected 6 vertex fields, found {}", t.len())));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| err(i, format!("bad coordinate '{s}'")));
        let c = |s: &str| s.parse::<u8>().map_err(|_| err(i, format!("bad color '{s}'")));
        mesh.vertices.push(Vector3::new(f(t[0])?, f(t[1])?, f(t[2])?));
        mesh.colors.push([c(t[3])?, c(t[4])?, c(t[5])?]);
    }
    let nv = mesh.vertices.len();
    for _ in 0..n_faces.unwrap_or(0) {
        let (i, line) = lines.next().ok_or_else(|| err(text.lines().count(), "missing face lines".into()))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 4 || t[0] != "3" {
            return Err(err(i, "faces must be triangles".into()));
        }
        let idx = |s: &str| match s.parse::<u32>() {
            Ok(v) if (v as usize) < nv => Ok(v),
            _ => Err(err(i, format!("bad vertex index '{s}'"))),
        };
        mesh.faces.push([idx(t[1])?, idx(t[2])?, idx(t[3])?]);
    }
    if let Some((i, line)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(i, format!("trailing data '{line}'")));
    }
    Ok(mesh)
}
