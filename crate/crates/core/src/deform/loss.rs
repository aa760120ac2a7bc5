//! Local rigidity, rotation consistency and isometry regularizers with gradients.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::graph::NeighborGraph;
use super::rigid::estimate_rotation;
use crate::scene::rotation::{self, Quat};
use crate::tracks::{RegionAssignment, SparseTrackSet};

/// Residual magnitudes below this are treated as zero by the non-smooth
/// terms, so round-off does not produce unit-size subgradients.
const KINK: f64 = 1e-12;

pub const LAMBDA_DEPTH: f64 = 0.5;
pub const LAMBDA_ARAP: f64 = 0.1;
pub const LAMBDA_ROT: f64 = 0.05;
pub const LAMBDA_ISO: f64 = 0.02;

/// Normalized radial weights between in-region kernels and frame-0 keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ArapWeights {
    /// `entries[i]` lists `(track, w_ik)`; empty for kernels outside every region.
    pub entries: Vec<Vec<(usize, f64)>>,
    pub sigma: f64,
}

impl ArapWeights {
    /// `w_ik = exp(-|mu_i - mu_k|^2 / (2 sigma^2))` with `sigma = rho / 2`,
    /// normalized per kernel. Weights below `floor` after normalization are dropped.
    pub fn new(rest: &[Vector3<f64>], regions: &RegionAssignment, tracks: &SparseTrackSet, floor: f64) -> Self {
        let keys = tracks.points_at(0);
        let sigma = 0.5 * regions.rho;
        let entries = rest
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if !regions.in_region[i] || keys.is_empty() {
                    return Vec::new();
                }
                let logits: Vec<f64> = keys.iter().map(|(_, q)| -(p - q).norm_squared() / (2.0 * sigma * sigma)).collect();
                let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let raw: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let total: f64 = raw.iter().sum();
                keys.iter()
                    .zip(&raw)
                    .map(|(&(k, _), &w)| (k, w / total))
                    .filter(|&(_, w)| w >= floor && w > 0.0)
                    .collect()
            })
            .collect();
        ArapWeights { entries, sigma }
    }

    pub fn region_size(&self) -> usize {
        self.entries.iter().filter(|e| !e.is_empty()).count()
    }
}

/// Keypoint positions at `t` and `t - 1` for tracks observed in both frames, indexed by track.
pub fn anchors(tracks: &SparseTrackSet, t: usize) -> Vec<Option<(Vector3<f64>, Vector3<f64>)>> {
    tracks
        .tracks
        .iter()
        .map(|tr| match (tr.at(t), t.checked_sub(1).and_then(|p| tr.at(p))) {
            (Some(c), Some(p)) => Some((c.point, p.point)),
            _ => None,
        })
        .collect()
}

/// ARAP energy over the in-region kernels and its gradient with respect to
/// the current positions, with each best-fit rotation held constant.
pub fn arap_loss_grad(
    cur: &[Vector3<f64>],
    prev: &[Vector3<f64>],
    anchors: &[Option<(Vector3<f64>, Vector3<f64>)>],
    weights: &ArapWeights,
) -> (f64, Vec<Vector3<f64>>) {
    let n = anchors.iter().filter(|a| a.is_some()).count();
    let s = weights.region_size();
    let mut grads = vec![Vector3::zeros(); cur.len()];
    if n == 0 || s == 0 {
        return (0.0, grads);
    }
    let norm = 1.0 / (n * s) as f64;
    let terms: Vec<(f64, Vector3<f64>)> = weights
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entries)| {
            let mut a = Vec::with_capacity(entries.len());
            let mut b = Vec::with_capacity(entries.len());
            let mut w = Vec::with_capacity(entries.len());
            for &(k, wk) in entries {
                if let Some((kc, kp)) = anchors[k] {
                    a.push(prev[i] - kp);
                    b.push(cur[i] - kc);
                    w.push(wk);
                }
            }
            if w.is_empty() {
                return (0.0, Vector3::zeros());
            }
            let r = estimate_rotation(&a, &b, &w);
            let mut loss = 0.0;
            let mut g = Vector3::zeros();
            for ((ak, bk), wk) in a.iter().zip(&b).zip(&w) {
                let e = bk - r * ak;
                loss += wk * e.norm_squared();
                g += 2.0 * wk * e;
            }
            (loss * norm, g * norm)
        })
        .collect();
    let mut total = 0.0;
    for (i, (l, g)) in terms.into_iter().enumerate() {
        total += l;
        grads[i] = g;
    }
    (total, grads)
}

pub fn arap_loss(
    cur: &[Vector3<f64>],
    prev: &[Vector3<f64>],
    anchors: &[Option<(Vector3<f64>, Vector3<f64>)>],
    weights: &ArapWeights,
) -> f64 {
    arap_loss_grad(cur, prev, anchors, weights).0
}

/// Canonical `q_cur q_prev^-1` and the sign applied by canonicalization.
fn delta(cur: &Quat, prev: &Quat) -> (Quat, f64) {
    let (u, _) = rotation::normalize_array(cur);
    rotation::canonical_array(&rotation::mul(&u, &rotation::conjugate(prev)))
}

/// Mean over neighbor pairs of the distance between per-kernel delta
/// rotations; the gradient is with respect to the raw current quaternions.
pub fn rot_loss_grad(cur: &[Quat], prev: &[Quat], graph: &NeighborGraph) -> (f64, Vec<Quat>) {
    let n = cur.len();
    let deltas: Vec<(Quat, f64)> = cur.iter().zip(prev).map(|(c, p)| delta(c, p)).collect();
    let norm = 1.0 / (graph.r.max(1) * n.max(1)) as f64;
    let mut g_delta = vec![[0.0; 4]; n];
    let mut total = 0.0;
    for i in 0..n {
        for &j in &graph.neighbors[i] {
            let d: Quat = std::array::from_fn(|c| deltas[j].0[c] - deltas[i].0[c]);
            let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            total += len;
            if len > KINK {
                for c in 0..4 {
                    g_delta[j][c] += d[c] / len * norm;
                    g_delta[i][c] -= d[c] / len * norm;
                }
            }
        }
    }
    let grads = (0..n)
        .map(|i| {
            let s = deltas[i].1;
            // transpose of right-multiplication by conj(prev) is right-multiplication by prev
            let gu = rotation::mul(&g_delta[i], &prev[i]).map(|v| v * s);
            rotation::normalize_vjp(&cur[i], &gu)
        })
        .collect();
    (total * norm, grads)
}

pub fn rot_loss(cur: &[Quat], prev: &[Quat], graph: &NeighborGraph) -> f64 {
    rot_loss_grad(cur, prev, graph).0
}

/// Weighted mean deviation of neighbor distances from their frame-0 values.
pub fn iso_loss_grad(cur: &[Vector3<f64>], rest: &[Vector3<f64>], graph: &NeighborGraph) -> (f64, Vec<Vector3<f64>>) {
    let n = cur.len();
    let norm = 1.0 / (graph.r.max(1) * n.max(1)) as f64;
    let mut grads = vec![Vector3::zeros(); n];
    let mut total = 0.0;
    for i in 0..n {
        for (&j, &w) in graph.neighbors[i].iter().zip(&graph.weights[i]) {
            let d0 = (rest[j] - rest[i]).norm();
            let diff = cur[i] - cur[j];
            let dt = diff.norm();
            total += w * (d0 - dt).abs();
            if dt > 0.0 && (dt - d0).abs() > KINK {
                let g = diff * (w * (dt - d0).signum() / dt * norm);
                grads[i] += g;
                grads[j] -= g;
            }
        }
    }
    (total * norm, grads)
}

pub fn iso_loss(cur: &[Vector3<f64>], rest: &[Vector3<f64>], graph: &NeighborGraph) -> f64 {
    iso_loss_grad(cur, rest, graph).0
}

pub fn deform_total_loss(color: f64, depth: f64, arap: f64, rot: f64, iso: f64, lambdas: [f64; 4]) -> f64 {
    color + lambdas[0] * depth + lambdas[1] * arap + lambdas[2] * rot + lambdas[3] * iso
}
