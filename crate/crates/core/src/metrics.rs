//! Masked image and depth quality metrics.

use crate::error::{Error, Result};
use crate::scene::{DepthMap, Mask, RgbImage};

pub const PSNR_CAP: f64 = 100.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_dims(a: (usize, usize), b: (usize, usize), m: (usize, usize)) -> Result<()> {
    if a != b || a != m {
        return Err(Error::Data(format!("metric inputs differ in size: {a:?}, {b:?}, mask {m:?}")));
    }
    Ok(())
}

/// Peak 1.0, mean squared error over mask-true pixels and all channels.
pub fn psnr(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Result<f64> {
    check_dims(a.dims(), b.dims(), mask.dims())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((pa, pb), &m) in a.as_slice().iter().zip(b.as_slice()).zip(mask.as_slice()) {
        if m {
            sum += (0..3).map(|c| (pa[c] - pb[c]).powi(2)).sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("psnr"));
    }
    let mse = sum / n as f64;
    Ok(if mse < 1e-10 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

pub fn depth_rmse(a: &DepthMap, b: &DepthMap, mask: &Mask) -> Result<f64> {
    check_dims(a.dims(), b.dims(), mask.dims())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((da, db), &m) in a.as_slice().iter().zip(b.as_slice()).zip(mask.as_slice()) {
        if m {
            sum += (da - db).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("depth_rmse"));
    }
    Ok((sum / n as f64).sqrt())
}

fn gaussian_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = g.iter().sum::<f64>().powi(2);
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    for (y, row) in w.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = g[x] * g[y] / total;
        }
    }
    w
}

/// Single-scale SSIM averaged over channels and over the fully-inside
/// windows whose center pixel is mask-true.
pub fn ssim(a: &RgbImage, b: &RgbImage, mask: &Mask) -> Result<f64> {
    check_dims(a.dims(), b.dims(), mask.dims())?;
    let (w, h) = a.dims();
    let win = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in half..h.saturating_sub(half) {
        for cx in half..w.saturating_sub(half) {
            if !mask[(cx, cy)] {
                continue;
            }
            for c in 0..3 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, row) in win.iter().enumerate() {
                    for (dx, wt) in row.iter().enumerate() {
                        let (x, y) = (cx + dx - half, cy + dy - half);
                        let (va, vb) = (a[(x, y)][c], b[(x, y)][c]);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask("ssim"));
    }
    Ok(total / count as f64)
}
