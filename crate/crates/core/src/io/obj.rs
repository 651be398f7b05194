use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{create, format_err, open, IoError};
use crate::geometry::{Mesh, Vec3};

/// Writes `v x y z [r g b]` and 1-based `f a b c` records.
pub fn write_obj(path: &Path, mesh: &Mesh) -> Result<(), IoError> {
    let mut out = BufWriter::new(create(path)?);
    for (k, v) in mesh.vertices.iter().enumerate() {
        match &mesh.vertex_colors {
            Some(c) => {
                let c = c[k];
                writeln!(out, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2])?
            }
            None => writeln!(out, "v {} {} {}", v.x, v.y, v.z)?,
        }
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads vertex positions, optional per-vertex colors and faces. Polygons are fan
/// triangulated and degenerate triangles dropped.
pub fn read_obj(path: &Path) -> Result<Mesh, IoError> {
    let input = BufReader::new(open(path)?);
    let mut vertices = Vec::new();
    let mut colors: Vec<[f32; 3]> = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let mut tok = line.split_whitespace();
        let err = |m: &str| format_err("obj", format!("line {}: {m}", lineno + 1));
        match tok.next() {
            Some("v") => {
                let vals: Vec<f64> = tok.map(|t| t.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| err("bad vertex"))?;
                if vals.len() < 3 {
                    return Err(err("vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                if vals.len() >= 6 {
                    colors.push([vals[3] as f32, vals[4] as f32, vals[5] as f32]);
                }
            }
            Some("f") => {
                let idx: Vec<u32> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or_default();
                        let i: i64 = first.parse().map_err(|_| err("bad face index"))?;
                        let n = vertices.len() as i64;
                        let abs = if i < 0 { n + i } else { i - 1 };
                        if abs < 0 || abs >= n {
                            return Err(err("face index out of range"));
                        }
                        Ok(abs as u32)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs three indices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let vertex_colors = if !colors.is_empty() && colors.len() == vertices.len() { Some(colors) } else { None };
    finish_mesh(vertices, faces, vertex_colors, "obj")
}

pub(super) fn finish_mesh(
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    vertex_colors: Option<Vec<[f32; 3]>>,
    format: &'static str,
) -> Result<Mesh, IoError> {
    let total = faces.len();
    let faces: Vec<[u32; 3]> = faces
        .into_iter()
        .filter(|f| {
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            (b - a).cross(&(c - a)).norm() > 0.0
        })
        .collect();
    if faces.len() < total {
        log::warn!("{format}: dropped {} degenerate faces", total - faces.len());
    }
    let mesh = Mesh { vertices, faces, vertex_colors, vertex_normals: None };
    mesh.validate().map_err(|e| format_err(format, e.to_string()))?;
    Ok(mesh)
}
