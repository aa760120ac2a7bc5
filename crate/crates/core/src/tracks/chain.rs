//! Sparse tracks: chaining, depth lifting and the JSON-lines file format.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detect::{detect_keypoints, match_keypoints, Keypoint, TrackConfig};
use crate::error::{Error, Result};
use crate::scene::raster::bilinear;
use crate::scene::FrameData;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

/// One keypoint's observations, keyed by frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Track {
    pub observations: BTreeMap<usize, Observation>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn at(&self, frame: usize) -> Option<&Observation> {
        self.observations.get(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseTrackSet {
    pub tracks: Vec<Track>,
    /// Number of frames in the sequence the tracks refer to.
    pub frames: usize,
}

impl SparseTrackSet {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// `(track index, 3D point)` for every track observed at `frame`.
    pub fn points_at(&self, frame: usize) -> Vec<(usize, Vector3<f64>)> {
        self.tracks
            .iter()
            .enumerate()
            .filter_map(|(k, t)| t.at(frame).map(|o| (k, o.point)))
            .collect()
    }
}

/// Depth at a continuous pixel: bilinear when the four neighbors are valid,
/// nearest pixel otherwise.
fn depth_at(frame: &FrameData, px: &Vector2<f64>) -> Option<f64> {
    let (w, h) = (frame.width(), frame.height());
    if !frame.camera.in_image(px) {
        return None;
    }
    let (nx, ny) = (px.x as usize, px.y as usize);
    if !frame.mask[(nx, ny)] {
        return None;
    }
    let fx = (px.x - 0.5).max(0.0);
    let fy = (px.y - 0.5).max(0.0);
    let (x0, y0) = ((fx as usize).min(w - 1), (fy as usize).min(h - 1));
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let all = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].iter().all(|&p| frame.mask[p]);
    Some(if all { bilinear(&frame.depth, px.x, px.y) } else { frame.depth[(nx, ny)] })
}

/// Back-projects a pixel through the frame's depth and camera.
pub fn lift(frame: &FrameData, px: &Vector2<f64>) -> Option<Vector3<f64>> {
    depth_at(frame, px).map(|d| frame.camera.unproject(px, d))
}

/// Detects keypoints per frame, chains matches greedily (nearest frame gap
/// first) and lifts every observation to 3D.
pub fn build_tracks(frames: &[FrameData], config: &TrackConfig) -> Result<SparseTrackSet> {
    if frames.len() < 2 {
        return Err(Error::Data(format!("tracking needs at least 2 frames, got {}", frames.len())));
    }
    let keypoints: Vec<Vec<Keypoint>> = frames
        .par_iter()
        .map(|f| detect_keypoints(&f.image, &f.mask, config))
        .collect();
    let pairs: Vec<(usize, usize)> = (1..frames.len())
        .flat_map(|t| (1..=config.max_gap + 1).filter(move |&g| g <= t).map(move |g| (t - g, t)))
        .collect();
    let matches: BTreeMap<(usize, usize), Vec<(usize, usize)>> = pairs
        .par_iter()
        .map(|&(s, t)| ((s, t), match_keypoints(&keypoints[s], &keypoints[t], config)))
        .collect();

    // owner[t][j] = track holding keypoint j of frame t
    let mut owner: Vec<Vec<Option<usize>>> = keypoints.iter().map(|k| vec![None; k.len()]).collect();
    let mut chains: Vec<Vec<(usize, usize)>> = Vec::new();
    for j in 0..keypoints[0].len() {
        owner[0][j] = Some(chains.len());
        chains.push(vec![(0, j)]);
    }
    for t in 1..frames.len() {
        for g in 1..=(config.max_gap + 1).min(t) {
            for &(i, j) in &matches[&(t - g, t)] {
                if owner[t][j].is_some() {
                    continue;
                }
                if let Some(c) = owner[t - g][i] {
                    // the chain must end at t - g to be extended
                    if chains[c].last().map(|&(f, _)| f) == Some(t - g) {
                        owner[t][j] = Some(c);
                        chains[c].push((t, j));
                    }
                }
            }
        }
        for j in 0..keypoints[t].len() {
            if owner[t][j].is_none() {
                owner[t][j] = Some(chains.len());
                chains.push(vec![(t, j)]);
            }
        }
    }

    let mut tracks = Vec::new();
    for chain in chains {
        let mut track = Track::default();
        for (t, j) in chain {
            let px = keypoints[t][j].position;
            if let Some(point) = lift(&frames[t], &px) {
                track.observations.insert(t, Observation { pixel: px, point });
            }
        }
        if track.len() >= config.min_len.max(1) {
            tracks.push(track);
        }
    }
    if tracks.is_empty() {
        return Err(Error::NoTracks);
    }
    Ok(SparseTrackSet {
        tracks,
        frames: frames.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Record {
    track: usize,
    frame: usize,
    x: f64,
    y: f64,
    #[serde(rename = "X")]
    px: f64,
    #[serde(rename = "Y")]
    py: f64,
    #[serde(rename = "Z")]
    pz: f64,
}

pub fn encode_tracks(set: &SparseTrackSet) -> String {
    let mut out = String::new();
    for (k, track) in set.tracks.iter().enumerate() {
        for (&frame, o) in &track.observations {
            let r = Record {
                track: k,
                frame,
                x: o.pixel.x,
                y: o.pixel.y,
                px: o.point.x,
                py: o.point.y,
                pz: o.point.z,
            };
            out.push_str(&serde_json::to_string(&r).expect("records serialize"));
            out.push('\n');
        }
    }
    out
}

/// Parses JSON-lines tracks for a sequence of `frames` frames. Track ids are
/// renumbered densely in increasing order.
pub fn decode_tracks(text: &str, frames: usize, origin: &str) -> Result<SparseTrackSet> {
    let mut by_id: BTreeMap<usize, Track> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: n + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if r.frame >= frames {
            return Err(err(format!("frame {} out of range for {frames} frames", r.frame)));
        }
        let values = [r.x, r.y, r.px, r.py, r.pz];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite coordinate".into()));
        }
        let obs = Observation {
            pixel: Vector2::new(r.x, r.y),
            point: Vector3::new(r.px, r.py, r.pz),
        };
        if by_id.entry(r.track).or_default().observations.insert(r.frame, obs).is_some() {
            return Err(err(format!("track {} observed twice in frame {}", r.track, r.frame)));
        }
    }
    Ok(SparseTrackSet {
        tracks: by_id.into_values().collect(),
        frames,
    })
}

pub fn save_tracks(path: &Path, set: &SparseTrackSet) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(encode_tracks(set).as_bytes())?;
    Ok(())
}

pub fn load_tracks(path: &Path, frames: usize) -> Result<SparseTrackSet> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_tracks(&fs::read_to_string(path)?, frames, &path.display().to_string())
}
