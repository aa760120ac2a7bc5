use nalgebra::Vector3;

use super::chain::SparseTrackSet;
use crate::error::{Error, Result};

/// Nearest frame-0 keypoint of every kernel and whether it lies within `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAssignment {
    /// Track index of the nearest keypoint.
    pub nearest: Vec<usize>,
    pub in_region: Vec<bool>,
    pub rho: f64,
}

impl RegionAssignment {
    pub fn members(&self) -> Vec<usize> {
        (0..self.in_region.len()).filter(|&i| self.in_region[i]).collect()
    }
}

/// Assigns each position to its nearest keypoint observed at frame 0; ties go
/// to the lowest track index.
pub fn assign_regions(positions: &[Vector3<f64>], tracks: &SparseTrackSet, rho: f64) -> Result<RegionAssignment> {
    let keys = tracks.points_at(0);
    if keys.is_empty() {
        return Err(Error::Data("region assignment needs a track observed at frame 0".into()));
    }
    let mut nearest = Vec::with_capacity(positions.len());
    let mut in_region = Vec::with_capacity(positions.len());
    for p in positions {
        let mut best = (f64::INFINITY, keys[0].0);
        for &(k, q) in &keys {
            let d = (p - q).norm();
            if d < best.0 {
                best = (d, k);
            }
        }
        nearest.push(best.1);
        in_region.push(best.0 <= rho);
    }
    Ok(RegionAssignment {
        nearest,
        in_region,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracks::chain::{Observation, Track};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tracks_from(points: &[Vector3<f64>]) -> SparseTrackSet {
        SparseTrackSet {
            tracks: points
                .iter()
                .map(|p| {
                    let mut t = Track::default();
                    t.observations.insert(
                        0,
                        Observation {
                            pixel: Vector2::zeros(),
                            point: *p,
                        },
                    );
                    t
                })
                .collect(),
            frames: 1,
        }
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn extreme_radii() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let keys = random_points(&mut rng, 4);
        let pts = random_points(&mut rng, 50);
        let tracks = tracks_from(&keys);
        assert!(assign_regions(&pts, &tracks, f64::INFINITY).unwrap().in_region.iter().all(|&b| b));
        assert!(assign_regions(&pts, &tracks, 0.0).unwrap().in_region.iter().all(|&b| !b));
        let at = assign_regions(&keys, &tracks, 0.0).unwrap();
        assert!(at.in_region.iter().all(|&b| b));
        assert_eq!(at.nearest, vec![0, 1, 2, 3]);
    }

    #[test]
    fn matches_brute_force_and_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let keys = random_points(&mut rng, 7);
        let pts = random_points(&mut rng, 200);
        let a = assign_regions(&pts, &tracks_from(&keys), 0.3).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let d: Vec<f64> = keys.iter().map(|k| (p - k).norm()).collect();
            let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let k = d.iter().position(|&v| v == min).unwrap();
            assert_eq!(a.nearest[i], k);
            assert_eq!(a.in_region[i], min <= 0.3);
        }
        let rev: Vec<_> = pts.iter().rev().copied().collect();
        let b = assign_regions(&rev, &tracks_from(&keys), 0.3).unwrap();
        for i in 0..pts.len() {
            assert_eq!(a.nearest[i], b.nearest[pts.len() - 1 - i]);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let keys = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        let a = assign_regions(&[Vector3::zeros()], &tracks_from(&keys), 2.0).unwrap();
        assert_eq!(a.nearest, vec![0]);
        assert!(assign_regions(&[Vector3::zeros()], &SparseTrackSet::default(), 1.0).is_err());
    }
}
