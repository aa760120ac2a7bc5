use super::rasterize::{OutputGrads, RenderOutput};
use crate::error::{Error, Result};
use crate::scene::FrameData;
use crate::sdf::loss::{huber, huber_grad};

/// Masked mean Huber color and depth losses of a render against a frame,
/// with `weight_depth` folded into the returned depth gradients.
pub fn image_losses(
    render: &RenderOutput,
    frame: &FrameData,
    color_delta: f64,
    depth_delta: f64,
    weight_depth: f64,
) -> Result<((f64, f64), OutputGrads)> {
    let (w, h) = (frame.width(), frame.height());
    let mut grads = OutputGrads::zeros(w, h);
    let m = frame.mask.count_true();
    if m == 0 {
        return Err(Error::EmptyMask("frame"));
    }
    let inv = 1.0 / m as f64;
    let (mut lc, mut ld) = (0.0, 0.0);
    for i in 0..w * h {
        if !frame.mask.as_slice()[i] {
            continue;
        }
        let (pc, tc) = (render.color.as_slice()[i], frame.image.as_slice()[i]);
        let g = &mut grads.color.as_mut_slice()[i];
        for c in 0..3 {
            lc += huber(pc[c], tc[c], color_delta);
            g[c] = huber_grad(pc[c], tc[c], color_delta) * inv;
        }
        let (pd, td) = (render.depth.as_slice()[i], frame.depth.as_slice()[i]);
        ld += huber(pd, td, depth_delta);
        grads.depth.as_mut_slice()[i] = weight_depth * huber_grad(pd, td, depth_delta) * inv;
    }
    Ok(((lc * inv, ld * inv), grads))
}
