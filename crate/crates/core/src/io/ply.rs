//! Gaussian checkpoints as binary little-endian PLY with per-vertex float
//! properties `x y z qw qx qy qz sx sy sz opacity r g b`.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::rotation;
use crate::scene::{GaussianKernel, GaussianSet};

const PROPERTIES: [&str; 14] = ["x", "y", "z", "qw", "qx", "qy", "qz", "sx", "sy", "sz", "opacity", "r", "g", "b"];

pub fn encode(set: &GaussianSet, comments: &[String]) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        header.push_str(&format!("comment {c}\n"));
    }
    header.push_str(&format!("element vertex {}\n", set.len()));
    for p in PROPERTIES {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for k in &set.kernels {
        let q = rotation::to_array(&k.rotation);
        let values = [
            k.position.x,
            k.position.y,
            k.position.z,
            q[0],
            q[1],
            q[2],
            q[3],
            k.scale.x,
            k.scale.y,
            k.scale.z,
            k.opacity,
            k.color.x,
            k.color.y,
            k.color.z,
        ];
        for v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Returns the kernels and the header comments.
pub fn decode(bytes: &[u8], origin: &str) -> Result<(GaussianSet, Vec<String>)> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| err(1, "missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| err(1, "header is not UTF-8".into()))?;
    let mut count = None;
    let mut props = Vec::new();
    let mut comments = Vec::new();
    for (i, line) in header.lines().enumerate() {
        let line_no = i + 1;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("ply") if i == 0 => {}
            Some("format") => {
                if tok.next() != Some("binary_little_endian") {
                    return Err(err(line_no, "only binary_little_endian is supported".into()));
                }
            }
            Some("comment") => comments.push(line["comment".len()..].trim().to_string()),
            Some("element") => {
                if tok.next() != Some("vertex") {
                    return Err(err(line_no, "only a vertex element is supported".into()));
                }
                count = Some(
                    tok.next()
                        .and_then(|n| n.parse::<usize>().ok())
                        .ok_or_else(|| err(line_no, "bad vertex count".into()))?,
                );
            }
            Some("property") => {
                if tok.next() != Some("float") {
                    return Err(err(line_no, "only float properties are supported".into()));
                }
                props.push(tok.next().unwrap_or_default().to_string());
            }
            _ => return Err(err(line_no, format!("unexpected header line `{line}`"))),
        }
    }
    if props != PROPERTIES {
        return Err(err(1, format!("expected properties {PROPERTIES:?}, found {props:?}")));
    }
    let count = count.ok_or_else(|| err(1, "missing vertex element".into()))?;
    let payload = &bytes[end + marker.len()..];
    let stride = PROPERTIES.len() * 4;
    if payload.len() != count * stride {
        return Err(err(1, format!("payload has {} bytes, expected {}", payload.len(), count * stride)));
    }
    let kernels = payload
        .chunks_exact(stride)
        .map(|rec| {
            let v: Vec<f64> = rec.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
            GaussianKernel::new(
                Vector3::new(v[0], v[1], v[2]),
                rotation::unit_from_array(&[v[3], v[4], v[5], v[6]]),
                Vector3::new(v[7], v[8], v[9]),
                v[10],
                Vector3::new(v[11], v[12], v[13]),
            )
        })
        .collect();
    Ok((GaussianSet::new(kernels), comments))
}

pub fn write(path: &Path, set: &GaussianSet, comments: &[String]) -> Result<()> {
    fs::write(path, encode(set, comments))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(GaussianSet, Vec<String>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode(&fs::read(path)?, &path.display().to_string())
}

/// Rounds every attribute through `f32`, the precision of a checkpoint.
pub fn quantize(set: &GaussianSet) -> GaussianSet {
    decode(&encode(set, &[]), "memory").expect("self-encoded PLY decodes").0
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn round_trip_within_f32() {
        let set = GaussianSet::new(vec![GaussianKernel::new(
            Vector3::new(0.1, -0.2, 3.0),
            UnitQuaternion::from_euler_angles(0.3, -0.1, 0.7),
            Vector3::new(0.01, 0.02, 0.003),
            0.7,
            Vector3::new(0.2, 0.5, 0.9),
        )]);
        let (back, comments) = decode(&encode(&set, &["frame 3".into()]), "mem").unwrap();
        assert_eq!(comments, vec!["frame 3".to_string()]);
        let (a, b) = (&set.kernels[0], &back.kernels[0]);
        assert!((a.position - b.position).norm() < 1e-6);
        assert!(a.rotation.angle_to(&b.rotation) < 1e-6);
        assert!(b.is_valid());
        // quantized sets are fixed points
        let q = quantize(&set);
        assert_eq!(encode(&quantize(&q), &[]), encode(&q, &[]));
    }

    #[test]
    fn rejects_wrong_properties() {
        let bad = b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n";
        assert!(decode(bad, "mem").is_err());
    }
}
