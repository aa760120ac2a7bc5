//! Quaternion helpers in `[w, x, y, z]` order, including the derivative of
//! the rotation matrix with respect to quaternion components.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

pub type Quat = [f64; 4];

pub fn to_array(q: &UnitQuaternion<f64>) -> Quat {
    [q.w, q.i, q.j, q.k]
}

pub fn from_array(q: &Quat) -> Quaternion<f64> {
    Quaternion::new(q[0], q[1], q[2], q[3])
}

/// Sign-canonical unit quaternion: scalar part >= 0, and for a zero scalar
/// part the first non-zero vector component is positive.
pub fn canonical(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let a = to_array(q);
    let flip = a.iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0);
    if flip {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

pub fn canonical_array(q: &Quat) -> (Quat, f64) {
    let sign = if q.iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0) {
        -1.0
    } else {
        1.0
    };
    ([q[0] * sign, q[1] * sign, q[2] * sign, q[3] * sign], sign)
}

pub fn normalize_array(q: &Quat) -> (Quat, f64) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// Unit quaternion from raw components, normalized and sign-canonical.
pub fn unit_from_array(q: &Quat) -> UnitQuaternion<f64> {
    canonical(&UnitQuaternion::from_quaternion(from_array(q)))
}

/// Rotation matrix of a unit quaternion given as `[w, x, y, z]`.
pub fn matrix(q: &Quat) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to `dL/dq` for the polynomial map in [`matrix`],
/// treating `q` as unconstrained components.
pub fn matrix_vjp(q: &Quat, g: &Matrix3<f64>) -> Quat {
    let [w, x, y, z] = *q;
    let dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    [dw.dot(g), dx.dot(g), dy.dot(g), dz.dot(g)]
}

/// Chain rule through `q_hat = q / |q|`.
pub fn normalize_vjp(q_raw: &Quat, g_unit: &Quat) -> Quat {
    let (u, n) = normalize_array(q_raw);
    let d: f64 = u.iter().zip(g_unit).map(|(a, b)| a * b).sum();
    [
        (g_unit[0] - u[0] * d) / n,
        (g_unit[1] - u[1] * d) / n,
        (g_unit[2] - u[2] * d) / n,
        (g_unit[3] - u[3] * d) / n,
    ]
}

pub fn rotate(q: &UnitQuaternion<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    q * v
}

/// Hamilton product in `[w, x, y, z]` order.
pub fn mul(a: &Quat, b: &Quat) -> Quat {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn conjugate(q: &Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}
