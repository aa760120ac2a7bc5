//! Dataset directory layout shared by the generator, the pipeline and any
//! real-data adapter:
//!
//! ```text
//! frame_%04d.png   RGB, 8-bit
//! depth_%04d.pfm   32-bit float, little-endian
//! mask_%04d.png    8-bit, 0 = excluded
//! cameras.json     per-frame intrinsics, pose, near/far
//! ```
//!
//! Synthetic datasets may also carry a `gt/` subdirectory with noise-free
//! `frame_%04d.png` and `depth_%04d.pfm` used for evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Matrix3, Matrix4, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{pfm, png};
use crate::error::{Error, Result};
use crate::scene::{Camera, DepthMap, FrameData, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub frame: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major 3x3.
    pub intrinsics: [[f64; 3]; 3],
    /// Row-major 4x4 world-to-camera.
    pub pose: [[f64; 4]; 4],
    pub near: f64,
    pub far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamerasFile {
    pub frames: Vec<CameraRecord>,
}

impl CameraRecord {
    pub fn from_camera(frame: usize, cam: &Camera) -> Self {
        let k = cam.intrinsics();
        let p = cam.pose().to_homogeneous();
        CameraRecord {
            frame,
            width: cam.width(),
            height: cam.height(),
            intrinsics: std::array::from_fn(|r| std::array::from_fn(|c| k[(r, c)])),
            pose: std::array::from_fn(|r| std::array::from_fn(|c| p[(r, c)])),
            near: cam.near(),
            far: cam.far(),
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let k = Matrix3::from_fn(|r, c| self.intrinsics[r][c]);
        let p = Matrix4::from_fn(|r, c| self.pose[r][c]);
        let rot = p.fixed_view::<3, 3>(0, 0).into_owned();
        if (rot.transpose() * rot - Matrix3::identity()).norm() > 1e-6 || (rot.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("frame {}: pose rotation is not orthonormal", self.frame)));
        }
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        let t = Translation3::new(p[(0, 3)], p[(1, 3)], p[(2, 3)]);
        Camera::new(k, Isometry3::from_parts(t, q), self.near, self.far, self.width, self.height)
            .map_err(|e| Error::Data(format!("frame {}: {e}", self.frame)))
    }
}

pub fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frame_{i:04}.png"))
}

pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("depth_{i:04}.pfm"))
}

pub fn mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("mask_{i:04}.png"))
}

pub fn write_cameras(dir: &Path, cameras: &[Camera]) -> Result<()> {
    let file = CamerasFile {
        frames: cameras.iter().enumerate().map(|(i, c)| CameraRecord::from_camera(i, c)).collect(),
    };
    fs::write(dir.join("cameras.json"), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_cameras(dir: &Path) -> Result<Vec<Camera>> {
    let path = dir.join("cameras.json");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let file: CamerasFile = serde_json::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for (i, rec) in file.frames.iter().enumerate() {
        if rec.frame != i {
            return Err(Error::Data(format!("{}: record {i} has frame {}", path.display(), rec.frame)));
        }
    }
    file.frames.iter().map(CameraRecord::to_camera).collect()
}

pub fn write_frame(dir: &Path, frame: &FrameData) -> Result<()> {
    png::write_rgb(&frame_path(dir, frame.index), &frame.image)?;
    pfm::write(&depth_path(dir, frame.index), &frame.depth)?;
    png::write_mask(&mask_path(dir, frame.index), &frame.mask)?;
    Ok(())
}

pub fn write_dataset(dir: &Path, frames: &[FrameData]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in frames {
        write_frame(dir, f)?;
    }
    write_cameras(dir, &frames.iter().map(|f| f.camera.clone()).collect::<Vec<_>>())
}

/// Loads and validates every frame listed in `cameras.json`.
pub fn load_dataset(dir: &Path) -> Result<Vec<FrameData>> {
    let cameras = read_cameras(dir)?;
    if cameras.is_empty() {
        return Err(Error::Data(format!("{}: cameras.json lists no frames", dir.display())));
    }
    cameras
        .into_iter()
        .enumerate()
        .map(|(i, camera)| {
            let image = png::read_rgb(&frame_path(dir, i))?;
            let depth = pfm::read(&depth_path(dir, i))?;
            let mask = png::read_mask(&mask_path(dir, i))?;
            FrameData::new(image, depth, mask, camera, i)
        })
        .collect()
}

/// Noise-free reference images and depths, when the dataset provides them.
pub fn load_ground_truth(dir: &Path, frames: usize) -> Result<Option<Vec<(RgbImage, DepthMap)>>> {
    let gt = dir.join("gt");
    if !gt.is_dir() {
        return Ok(None);
    }
    (0..frames)
        .map(|i| Ok((png::read_rgb(&frame_path(&gt, i))?, pfm::read(&depth_path(&gt, i))?)))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn write_ground_truth(dir: &Path, refs: &[(RgbImage, DepthMap)]) -> Result<()> {
    let gt = dir.join("gt");
    fs::create_dir_all(&gt)?;
    for (i, (img, depth)) in refs.iter().enumerate() {
        png::write_rgb(&frame_path(&gt, i), img)?;
        pfm::write(&depth_path(&gt, i), depth)?;
    }
    Ok(())
}
