use super::camera::Camera;
use super::raster::{DepthMap, Mask, RgbImage};
use crate::error::{Error, Result};

/// One timestep of input: color, depth, validity mask and camera.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub image: RgbImage,
    pub depth: DepthMap,
    pub mask: Mask,
    pub camera: Camera,
    /// Zero-based timestep.
    pub index: usize,
}

impl FrameData {
    pub fn new(image: RgbImage, depth: DepthMap, mask: Mask, camera: Camera, index: usize) -> Result<Self> {
        let frame = FrameData {
            image,
            depth,
            mask,
            camera,
            index,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.image.same_dims(&self.depth) || !self.image.same_dims(&self.mask) {
            return Err(Error::Data(format!(
                "frame {}: image {:?}, depth {:?} and mask {:?} sizes differ",
                self.index,
                self.image.dims(),
                self.depth.dims(),
                self.mask.dims()
            )));
        }
        if self.camera.width() != self.width() || self.camera.height() != self.height() {
            return Err(Error::Data(format!("frame {}: camera size does not match image", self.index)));
        }
        for (i, (&m, &d)) in self.mask.as_slice().iter().zip(self.depth.as_slice()).enumerate() {
            if m && !(d > 0.0 && d.is_finite()) {
                return Err(Error::Data(format!(
                    "frame {}: pixel ({}, {}) is valid but has depth {d}",
                    self.index,
                    i % self.width(),
                    i / self.width()
                )));
            }
        }
        Ok(())
    }

    /// Pixel indices where the mask is true, in row-major order.
    pub fn valid_pixels(&self) -> Vec<(usize, usize)> {
        let w = self.width();
        self.mask
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i % w, i / w))
            .collect()
    }
}
