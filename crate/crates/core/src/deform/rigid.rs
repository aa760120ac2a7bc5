use nalgebra::{Matrix3, Vector3};

/// Rotation `R` minimizing `sum_k w_k |cur_k - R prev_k|^2`, from the SVD of
/// the weighted cross-covariance. Returns the identity when the covariance vanishes.
pub fn estimate_rotation(prev: &[Vector3<f64>], cur: &[Vector3<f64>], weights: &[f64]) -> Matrix3<f64> {
    let mut h = Matrix3::zeros();
    for ((a, b), &w) in prev.iter().zip(cur).zip(weights) {
        h += w * a * b.transpose();
    }
    if h.norm() == 0.0 || !h.iter().all(|v| v.is_finite()) {
        return Matrix3::identity();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let smallest = (0..3).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap();
        let mut flip = Matrix3::identity();
        flip[(smallest, smallest)] = -1.0;
        r = v * flip * u.transpose();
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let q = nalgebra::Quaternion::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
    }

    fn assert_rotation(r: &Matrix3<f64>) {
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
        assert!((r.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identical_frames_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<_> = (0..6).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
        let r = estimate_rotation(&p, &p, &[1.0; 6]);
        assert!((r - Matrix3::identity()).norm() < 1e-10);
        assert_eq!(estimate_rotation(&[Vector3::zeros()], &[Vector3::zeros()], &[1.0]), Matrix3::identity());
    }

    #[test]
    fn recovers_known_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let r0 = random_rotation(&mut rng);
            let n = rng.random_range(3..10);
            let p: Vec<_> = (0..n).map(|_| Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let q: Vec<_> = p.iter().map(|v| r0 * v).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let r = estimate_rotation(&p, &q, &w);
            assert!((r - r0).norm() < 1e-8);
            assert_rotation(&r);
        }
    }

    #[test]
    fn colinear_data_is_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let r0 = random_rotation(&mut rng);
            let dir = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let p: Vec<_> = (1..5).map(|k| dir * k as f64 + Vector3::repeat(1e-13 * k as f64)).collect();
            let q: Vec<_> = p.iter().map(|v| r0 * v).collect();
            let r = estimate_rotation(&p, &q, &[1.0; 4]);
            assert_rotation(&r);
            for (a, b) in p.iter().zip(&q) {
                assert!((r * a - b).norm() < 1e-8);
            }
        }
        // planar data, rotation within the plane
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.7).into_inner();
        let p = [Vector3::x(), Vector3::y(), Vector3::new(1.0, 1.0, 0.0)];
        let q: Vec<_> = p.iter().map(|v| rz * v).collect();
        let r = estimate_rotation(&p, &q, &[1.0; 3]);
        assert!((r - rz).norm() < 1e-10);
    }

    #[test]
    fn reflection_is_never_returned() {
        let p = [Vector3::x(), Vector3::y(), Vector3::z()];
        let q = [Vector3::x(), Vector3::y(), -Vector3::z()];
        assert_rotation(&estimate_rotation(&p, &q, &[1.0; 3]));
    }
}
