use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleInfo {
    pub centroid: Vector3<f64>,
    pub area: f64,
    pub inradius: f64,
    pub circumradius: f64,
    pub normal: Vector3<f64>,
}

impl TriangleInfo {
    pub fn compute(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Self {
        let cross = (b - a).cross(&(c - a));
        let area = 0.5 * cross.norm();
        let (la, lb, lc) = ((b - c).norm(), (c - a).norm(), (a - b).norm());
        let inradius = 2.0 * area / (la + lb + lc);
        let circumradius = la * lb * lc / (4.0 * area);
        TriangleInfo {
            centroid: (a + b + c) / 3.0,
            area,
            inradius,
            circumradius,
            normal: cross / (2.0 * area),
        }
    }
}

/// Indexed triangle mesh with per-triangle cached geometry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
    info: Vec<TriangleInfo>,
}

impl TriangleMesh {
    /// Validates indices and drops triangles with area below [`MIN_TRIANGLE_AREA`].
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::Data(format!("triangle {t:?} references a vertex out of range (have {n})")));
        }
        let mut kept = Vec::with_capacity(triangles.len());
        let mut info = Vec::with_capacity(triangles.len());
        for t in triangles {
            let [a, b, c] = t.map(|i| vertices[i]);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            if area >= MIN_TRIANGLE_AREA && area.is_finite() {
                kept.push(t);
                info.push(TriangleInfo::compute(&a, &b, &c));
            }
        }
        Ok(TriangleMesh {
            vertices,
            triangles: kept,
            info,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn info(&self, t: usize) -> &TriangleInfo {
        &self.info[t]
    }

    pub fn infos(&self) -> &[TriangleInfo] {
        &self.info
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vector3<f64>; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for (t, info) in self.triangles.iter().zip(&self.info) {
            for &i in t {
                normals[i] += info.normal * info.area;
            }
        }
        normals.iter().map(|n| n.try_normalize(1e-300).unwrap_or(Vector3::z())).collect()
    }

    /// Number of triangles incident to each undirected edge.
    pub fn edge_incidence(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// For each triangle, the triangles sharing an edge with it (sorted).
    pub fn triangle_adjacency(&self) -> Vec<Vec<usize>> {
        let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                by_edge.entry((a.min(b), a.max(b))).or_default().push(ti);
            }
        }
        let mut adj = vec![Vec::new(); self.triangles.len()];
        for tris in by_edge.values() {
            for &a in tris {
                for &b in tris {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    pub fn median_edge_length(&self) -> f64 {
        let mut lengths: Vec<f64> = self
            .edge_incidence()
            .keys()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .collect();
        if lengths.is_empty() {
            return 0.0;
        }
        lengths.sort_by(f64::total_cmp);
        lengths[lengths.len() / 2]
    }
}
