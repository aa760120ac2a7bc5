//! Fixed k-nearest neighborhoods over the triangle-adjacency graph.

use std::collections::VecDeque;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::surface::{BindingMap, TriangleMesh};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub neighbors: Vec<Vec<usize>>,
    /// `weights[i][m]` belongs to the pair `(i, neighbors[i][m])`.
    pub weights: Vec<Vec<f64>>,
    pub r: usize,
    pub lambda_w: f64,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Up to `r` kernels closest to `i` in breadth-first hops over edge-sharing
/// triangles, ties broken by Euclidean distance and then index.
fn bfs_neighbors(
    i: usize,
    r: usize,
    rest: &[Vector3<f64>],
    kernel_tri: &[usize],
    tri_kernels: &[Vec<usize>],
    adjacency: &[Vec<usize>],
) -> Vec<usize> {
    let mut seen = vec![false; adjacency.len()];
    let mut out = Vec::with_capacity(r);
    let start = kernel_tri[i];
    seen[start] = true;
    let mut level = vec![start];
    let mut queue: VecDeque<usize> = VecDeque::new();
    while !level.is_empty() && out.len() < r {
        let mut candidates: Vec<usize> = level.iter().flat_map(|&t| tri_kernels[t].iter().copied()).filter(|&j| j != i).collect();
        candidates.sort_by(|&a, &b| {
            let (da, db) = ((rest[a] - rest[i]).norm_squared(), (rest[b] - rest[i]).norm_squared());
            da.total_cmp(&db).then(a.cmp(&b))
        });
        out.extend(candidates.into_iter().take(r - out.len()));
        queue.extend(level.drain(..));
        while let Some(t) = queue.pop_front() {
            for &n in &adjacency[t] {
                if !seen[n] {
                    seen[n] = true;
                    level.push(n);
                }
            }
        }
    }
    out
}

/// Median of the distances from every kernel to its neighbors.
fn median_neighbor_distance(rest: &[Vector3<f64>], neighbors: &[Vec<usize>]) -> f64 {
    let mut d: Vec<f64> = neighbors
        .iter()
        .enumerate()
        .flat_map(|(i, ns)| ns.iter().map(move |&j| (rest[j] - rest[i]).norm()))
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Builds the neighborhoods from the frame-0 positions `rest`. Without an
/// explicit `lambda_w` the bandwidth puts weight 0.5 at the median neighbor distance.
pub fn build_neighborhoods(
    rest: &[Vector3<f64>],
    binding: &BindingMap,
    mesh: &TriangleMesh,
    r: usize,
    lambda_w: Option<f64>,
) -> Result<NeighborGraph> {
    if binding.len() != rest.len() {
        return Err(Error::Data(format!("{} kernels but {} bindings", rest.len(), binding.len())));
    }
    if let Some(&t) = binding.triangle.iter().find(|&&t| t >= mesh.len()) {
        return Err(Error::Data(format!("binding refers to triangle {t} of {}", mesh.len())));
    }
    let adjacency = mesh.triangle_adjacency();
    let mut tri_kernels = vec![Vec::new(); mesh.len()];
    for (i, &t) in binding.triangle.iter().enumerate() {
        tri_kernels[t].push(i);
    }
    let neighbors: Vec<Vec<usize>> = (0..rest.len())
        .map(|i| bfs_neighbors(i, r, rest, &binding.triangle, &tri_kernels, &adjacency))
        .collect();
    let lambda_w = lambda_w.unwrap_or_else(|| {
        let m = median_neighbor_distance(rest, &neighbors);
        if m > 0.0 {
            std::f64::consts::LN_2 / (m * m)
        } else {
            1.0
        }
    });
    let weights = neighbors
        .iter()
        .enumerate()
        .map(|(i, ns)| ns.iter().map(|&j| (-lambda_w * (rest[j] - rest[i]).norm_squared()).exp()).collect())
        .collect();
    Ok(NeighborGraph {
        neighbors,
        weights,
        r,
        lambda_w,
    })
}
