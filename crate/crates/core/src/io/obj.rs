//! Wavefront OBJ export (vertices, normals, faces) and a minimal reader.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::surface::TriangleMesh;

pub fn encode(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    let normals = mesh.vertex_normals();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:.9} {:.9} {:.9}", v.x, v.y, v.z);
    }
    for n in &normals {
        let _ = writeln!(out, "vn {:.9} {:.9} {:.9}", n.x, n.y, n.z);
    }
    for t in mesh.triangles() {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}");
    }
    out
}

pub fn decode(text: &str, origin: &str) -> Result<TriangleMesh> {
    let err = |line: usize, message: &str| Error::Parse {
        path: origin.to_string(),
        line,
        message: message.to_string(),
    };
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok.take(3).map(|t| t.parse().map_err(|_| err(i + 1, "bad vertex"))).collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(err(i + 1, "vertex needs 3 coordinates"));
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|s| s.parse::<usize>().ok())
                            .filter(|&k| k >= 1)
                            .map(|k| k - 1)
                            .ok_or_else(|| err(i + 1, "bad face index"))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(i + 1, "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn write(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    fs::write(path, encode(mesh))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<TriangleMesh> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode(&fs::read_to_string(path)?, &path.display().to_string())
}
