//! Dense trilinear fields over an axis-aligned box.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub resolution: [usize; 3],
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

/// Trilinear interpolation weights of one query point.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
    /// Spatial derivative of each weight.
    pub weight_grads: [Vector3<f64>; 8],
    /// Euclidean distance from the query to the box (0 inside).
    pub outside_distance: f64,
}

impl Stencil {
    pub fn inside(&self) -> bool {
        self.outside_distance == 0.0
    }

    /// Gradient of the interpolant of `values`, written as weighted edge
    /// differences so a constant field gives exactly zero.
    pub fn gradient(&self, values: &[f64]) -> Vector3<f64> {
        let mut g = Vector3::zeros();
        for a in 0..3 {
            let bit = 1 << a;
            for c in (0..8).filter(|c| c & bit == 0) {
                g[a] += self.weight_grads[c | bit][a] * (values[self.nodes[c | bit]] - values[self.nodes[c]]);
            }
        }
        g
    }
}

impl GridSpec {
    pub fn new(resolution: [usize; 3], min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(Error::Config(format!("grid resolution must be >= 2 per axis, got {resolution:?}")));
        }
        if (0..3).any(|i| !(max[i] > min[i])) {
            return Err(Error::Config(format!("degenerate grid box {min:?} .. {max:?}")));
        }
        Ok(GridSpec { resolution, min, max })
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn cell_size(&self) -> Vector3<f64> {
        let r = self.resolution;
        (self.max - self.min).component_div(&Vector3::new((r[0] - 1) as f64, (r[1] - 1) as f64, (r[2] - 1) as f64))
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size().norm()
    }

    /// Linear index with `x` fastest, then `y`, then `z`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.min + self.cell_size().component_mul(&Vector3::new(i as f64, j as f64, k as f64))
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.max[a])
    }

    pub fn stencil(&self, x: &Vector3<f64>) -> Stencil {
        let cell = self.cell_size();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut outside = Vector3::zeros();
        for a in 0..3 {
            let clamped = x[a].clamp(self.min[a], self.max[a]);
            outside[a] = x[a] - clamped;
            let g = (clamped - self.min[a]) / cell[a];
            let i0 = (g.floor().max(0.0) as usize).min(self.resolution[a] - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let mut nodes = [0usize; 8];
        let mut weights = [0.0; 8];
        let mut weight_grads = [Vector3::zeros(); 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w1 = |d: usize, f: f64| if d == 1 { f } else { 1.0 - f };
            let dw1 = |d: usize| if d == 1 { 1.0 } else { -1.0 };
            let (wx, wy, wz) = (w1(dx, frac[0]), w1(dy, frac[1]), w1(dz, frac[2]));
            nodes[c] = self.index(base[0] + dx, base[1] + dy, base[2] + dz);
            weights[c] = wx * wy * wz;
            weight_grads[c] = Vector3::new(
                dw1(dx) * wy * wz / cell[0],
                wx * dw1(dy) * wz / cell[1],
                wx * wy * dw1(dz) / cell[2],
            );
        }
        Stencil {
            nodes,
            weights,
            weight_grads,
            outside_distance: outside.norm(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid<T> {
    pub spec: GridSpec,
    pub values: Vec<T>,
}

/// One signed distance per node.
pub type SdfGrid = DenseGrid<f64>;
/// One RGB radiance per node.
pub type ColorGrid = DenseGrid<[f64; 3]>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub value: f64,
    /// False when the query was outside the box and sampling was clamped.
    pub inside: bool,
}

impl<T: Clone> DenseGrid<T> {
    pub fn filled(spec: GridSpec, value: T) -> Self {
        DenseGrid {
            values: vec![value; spec.node_count()],
            spec,
        }
    }
}

impl SdfGrid {
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(&Vector3<f64>) -> f64) -> Self {
        let [nx, ny, nz] = spec.resolution;
        let mut values = Vec::with_capacity(spec.node_count());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f(&spec.node_position(i, j, k)));
                }
            }
        }
        DenseGrid { spec, values }
    }

    /// Trilinear value; outside the box, the clamped value plus the distance to the box.
    pub fn sample(&self, x: &Vector3<f64>) -> SdfSample {
        let s = self.spec.stencil(x);
        let v: f64 = s.nodes.iter().zip(&s.weights).map(|(&n, w)| self.values[n] * w).sum();
        SdfSample {
            value: v + s.outside_distance,
            inside: s.inside(),
        }
    }

    /// Analytic gradient of the trilinear interpolant (at the clamped point outside the box).
    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.spec.stencil(x).gradient(&self.values)
    }
}

impl ColorGrid {
    pub fn sample(&self, x: &Vector3<f64>) -> [f64; 3] {
        let s = self.spec.stencil(x);
        let mut c = [0.0; 3];
        for (&n, w) in s.nodes.iter().zip(&s.weights) {
            for (ch, v) in c.iter_mut().zip(&self.values[n]) {
                *ch += w * v;
            }
        }
        c
    }
}

const MAGIC: &[u8; 4] = b"SGRD";
const VERSION: u32 = 1;

/// Little-endian checkpoint: magic `SGRD`, u32 version, u32 channels,
/// u32 x3 resolution, f64 x6 box (min then max), then f64 values with `x`
/// fastest, then `y`, then `z`, channels interleaved.
pub fn encode_grid(spec: &GridSpec, channels: usize, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    for r in spec.resolution {
        out.extend_from_slice(&(r as u32).to_le_bytes());
    }
    for v in spec.min.iter().chain(spec.max.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(mut bytes: &[u8]) -> Result<(GridSpec, usize, Vec<f64>)> {
    let mut magic = [0u8; 4];
    bytes.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data("not a grid checkpoint".into()));
    }
    let mut u32s = [0u32; 5];
    for v in &mut u32s {
        let mut b = [0u8; 4];
        bytes.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    if u32s[0] != VERSION {
        return Err(Error::Data(format!("unsupported grid checkpoint version {}", u32s[0])));
    }
    let channels = u32s[1] as usize;
    let mut f = [0.0; 6];
    for v in &mut f {
        let mut b = [0u8; 8];
        bytes.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    let spec = GridSpec::new(
        [u32s[2] as usize, u32s[3] as usize, u32s[4] as usize],
        Vector3::new(f[0], f[1], f[2]),
        Vector3::new(f[3], f[4], f[5]),
    )?;
    let n = spec.node_count() * channels;
    if bytes.len() != n * 8 {
        return Err(Error::Data(format!("grid payload has {} bytes, expected {}", bytes.len(), n * 8)));
    }
    let values = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((spec, channels, values))
}

pub fn save_sdf(path: &Path, grid: &SdfGrid) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_grid(&grid.spec, 1, &grid.values))?;
    Ok(())
}

pub fn load_sdf(path: &Path) -> Result<SdfGrid> {
    let (spec, channels, values) = decode_grid(&fs::read(path)?)?;
    if channels != 1 {
        return Err(Error::Data(format!("{}: expected 1 channel, found {channels}", path.display())));
    }
    Ok(DenseGrid { spec, values })
}

pub fn save_color(path: &Path, grid: &ColorGrid) -> Result<()> {
    let flat: Vec<f64> = grid.values.iter().flatten().copied().collect();
    fs::File::create(path)?.write_all(&encode_grid(&grid.spec, 3, &flat))?;
    Ok(())
}

pub fn load_color(path: &Path) -> Result<ColorGrid> {
    let (spec, channels, values) = decode_grid(&fs::read(path)?)?;
    if channels != 3 {
        return Err(Error::Data(format!("{}: expected 3 channels, found {channels}", path.display())));
    }
    Ok(DenseGrid {
        spec,
        values: values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}
