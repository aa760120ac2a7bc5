//! Marching cubes without lookup tables.
//!
//! Each cell face contributes directed segments between its iso crossings
//! (saddle faces are resolved with the asymptotic decider, so neighbouring
//! cells agree). The segments of a cell chain into closed loops that are fan
//! triangulated. Faces are traversed counter-clockwise as seen from outside
//! the cell and every segment runs from a positive-to-negative crossing to a
//! negative-to-positive one, which orients triangles towards positive values.

use std::collections::HashMap;

use super::grid::SdfGrid;
use crate::error::{Error, Result};
use crate::surface::TriangleMesh;

/// Corner index `dx + 2 dy + 4 dz`.
fn corner(d: [usize; 3]) -> usize {
    d[0] + 2 * d[1] + 4 * d[2]
}

/// The 6 cell faces as corner loops, counter-clockwise seen from outside.
fn faces() -> [[usize; 4]; 6] {
    let mut out = [[0; 4]; 6];
    for a in 0..3 {
        let (u, v) = ((a + 1) % 3, (a + 2) % 3);
        for side in 0..2 {
            let uv: [(usize, usize); 4] = if side == 1 {
                [(0, 0), (1, 0), (1, 1), (0, 1)]
            } else {
                [(0, 0), (0, 1), (1, 1), (1, 0)]
            };
            out[2 * a + side] = uv.map(|(pu, pv)| {
                let mut d = [0; 3];
                d[a] = side;
                d[u] = pu;
                d[v] = pv;
                corner(d)
            });
        }
    }
    out
}

pub fn marching_cubes(sdf: &SdfGrid, iso: f64) -> Result<TriangleMesh> {
    if let Some(i) = sdf.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("SDF node {i} is not finite")));
    }
    let spec = &sdf.spec;
    let [nx, ny, nz] = spec.resolution;
    let faces = faces();
    let mut vertices = Vec::new();
    let mut vertex_of_edge: HashMap<usize, usize> = HashMap::new();
    let mut triangles = Vec::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let node = |c: usize| spec.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                let vals: [f64; 8] = std::array::from_fn(|c| sdf.values[node(c)] - iso);
                let neg = vals.map(|v| v < 0.0);
                if neg.iter().all(|&n| n) || neg.iter().all(|&n| !n) {
                    continue;
                }
                // global id of the grid edge between two adjacent corners
                let edge_id = |a: usize, b: usize| {
                    let base = a.min(b);
                    let axis = (a ^ b).trailing_zeros() as usize;
                    3 * node(base) + axis
                };
                let mut next: Vec<(usize, usize, usize, usize)> = Vec::new();
                for f in &faces {
                    let mut enter = Vec::new();
                    let mut leave = Vec::new();
                    for e in 0..4 {
                        let (a, b) = (f[e], f[(e + 1) % 4]);
                        if neg[a] != neg[b] {
                            if neg[b] {
                                enter.push(e);
                            } else {
                                leave.push(e);
                            }
                        }
                    }
                    let pairs: Vec<(usize, usize)> = match enter.len() {
                        0 => vec![],
                        1 => vec![(enter[0], leave[0])],
                        _ => {
                            let v = f.map(|c| vals[c]);
                            let denom = v[0] + v[2] - v[1] - v[3];
                            let saddle = if denom.abs() > 1e-300 {
                                (v[0] * v[2] - v[1] * v[3]) / denom
                            } else {
                                0.25 * v.iter().sum::<f64>()
                            };
                            // negative corners joined through the face centre:
                            // segments cut off the positive corners
                            let join_negative = saddle < 0.0;
                            enter
                                .iter()
                                .map(|&en| {
                                    let lv = if join_negative {
                                        // crossing just before the positive corner preceding `en`
                                        (en + 3) % 4
                                    } else {
                                        (en + 1) % 4
                                    };
                                    (en, lv)
                                })
                                .collect()
                        }
                    };
                    for (en, lv) in pairs {
                        debug_assert!(leave.contains(&lv));
                        let (a0, b0) = (f[en], f[(en + 1) % 4]);
                        let (a1, b1) = (f[lv], f[(lv + 1) % 4]);
                        next.push((edge_id(a0, b0), edge_id(a1, b1), a0 * 8 + b0, a1 * 8 + b1));
                    }
                }
                let mut vertex = |id: usize, ab: usize| -> usize {
                    *vertex_of_edge.entry(id).or_insert_with(|| {
                        let (a, b) = (ab / 8, ab % 8);
                        let pos = |c: usize| spec.node_position(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                        let t = vals[a] / (vals[a] - vals[b]);
                        vertices.push(pos(a) + (pos(b) - pos(a)) * t);
                        vertices.len() - 1
                    })
                };
                let mut used = vec![false; next.len()];
                for s in 0..next.len() {
                    if used[s] {
                        continue;
                    }
                    let mut ring = Vec::new();
                    let mut cur = s;
                    loop {
                        used[cur] = true;
                        let (start, end, start_ab, _) = next[cur];
                        ring.push(vertex(start, start_ab));
                        match (0..next.len()).find(|&q| !used[q] && next[q].0 == end) {
                            Some(q) => cur = q,
                            None => break,
                        }
                    }
                    for t in 1..ring.len().saturating_sub(1) {
                        triangles.push([ring[0], ring[t], ring[t + 1]]);
                    }
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}
