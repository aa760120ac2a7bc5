//! Portable float map: single channel, 32-bit little-endian (scale -1.0),
//! rows stored bottom to top.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::DepthMap;

pub fn encode(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = depth.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(depth[(x, y)] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<DepthMap> {
    let parse_err = |line: usize, message: &str| Error::Parse {
        path: origin.to_string(),
        line,
        message: message.to_string(),
    };
    // Header: three whitespace-terminated tokens lines.
    let mut pos = 0;
    let mut lines = Vec::new();
    while lines.len() < 3 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(lines.len() + 1, "truncated header"))?;
        lines.push(std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| parse_err(lines.len() + 1, "header is not UTF-8"))?.trim().to_string());
        pos += end + 1;
    }
    if lines[0] != "Pf" {
        return Err(parse_err(1, "expected single-channel `Pf` magic"));
    }
    let dims: Vec<usize> = lines[1]
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(2, "bad dimensions")))
        .collect::<Result<_>>()?;
    if dims.len() != 2 || dims[0] == 0 || dims[1] == 0 {
        return Err(parse_err(2, "bad dimensions"));
    }
    let scale: f64 = lines[2].parse().map_err(|_| parse_err(3, "bad scale"))?;
    let little = scale < 0.0;
    let (w, h) = (dims[0], dims[1]);
    let payload = &bytes[pos..];
    if payload.len() < w * h * 4 {
        return Err(parse_err(4, "truncated payload"));
    }
    let mut depth = DepthMap::filled(w, h, 0.0);
    for (i, chunk) in payload.chunks_exact(4).take(w * h).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (x, row) = (i % w, i / w);
        depth[(x, h - 1 - row)] = v as f64;
    }
    Ok(depth)
}

pub fn write(path: &Path, depth: &DepthMap) -> Result<()> {
    fs::write(path, encode(depth))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<DepthMap> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode(&fs::read(path)?, &path.display().to_string())
}
