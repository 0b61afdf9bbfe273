//! Smoothed occupancy field for sub-voxel boundary placement.
//!
//! The binary mask is blurred with a separable Gaussian whose width in mm is
//! half the coarsest spacing on every axis, then interpolated trilinearly;
//! the 0.5 level set follows the average of the voxel staircase instead of
//! its corners.

use super::BinaryMask;
use crate::volume::Geometry;

const SIGMA_COARSEST_FRACTION: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SmoothOccupancy {
    geometry: Geometry,
    lo: [usize; 3],
    size: [usize; 3],
    values: Vec<f32>,
}

/// Normalised Gaussian taps for a width of `sigma` voxels, radius 3σ.
fn kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

impl SmoothOccupancy {
    pub fn new(mask: &BinaryMask) -> Self {
        let g = mask.geometry;
        let d = g.dims.as_array();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for (i, _) in mask.voxels.iter().enumerate().filter(|(_, &v)| v) {
            let c = g.dims.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        if lo[0] == usize::MAX {
            return Self {
                geometry: g,
                lo: [0; 3],
                size: [0; 3],
                values: Vec::new(),
            };
        }
        let coarsest = g.spacing.iter().copied().fold(0.0, f64::max);
        let kernels = [0, 1, 2].map(|a| kernel(SIGMA_COARSEST_FRACTION * coarsest / g.spacing[a]));
        for a in 0..3 {
            let pad = kernels[a].len() / 2 + 1;
            lo[a] = lo[a].saturating_sub(pad);
            hi[a] = (hi[a] + pad).min(d[a] - 1);
        }
        let size = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
        let idx = |x: usize, y: usize, z: usize| (z * size[1] + y) * size[0] + x;
        let mut buf = vec![0.0f64; size[0] * size[1] * size[2]];
        for z in 0..size[2] {
            for y in 0..size[1] {
                for x in 0..size[0] {
                    if mask.voxels[g.dims.index(x + lo[0], y + lo[1], z + lo[2])] {
                        buf[idx(x, y, z)] = 1.0;
                    }
                }
            }
        }
        for axis in 0..3 {
            let k = &kernels[axis];
            let r = (k.len() / 2) as i64;
            let mut out = vec![0.0f64; buf.len()];
            for z in 0..size[2] {
                for y in 0..size[1] {
                    for x in 0..size[0] {
                        let c = [x, y, z];
                        let mut acc = 0.0;
                        for (j, w) in k.iter().enumerate() {
                            let n = c[axis] as i64 + j as i64 - r;
                            if n < 0 || n >= size[axis] as i64 {
                                continue;
                            }
                            let mut cc = c;
                            cc[axis] = n as usize;
                            acc += w * buf[idx(cc[0], cc[1], cc[2])];
                        }
                        out[idx(x, y, z)] = acc;
                    }
                }
            }
            buf = out;
        }
        Self {
            geometry: g,
            lo,
            size,
            values: buf.into_iter().map(|v| v as f32).collect(),
        }
    }

    fn at(&self, c: [i64; 3]) -> f64 {
        let mut local = [0usize; 3];
        for a in 0..3 {
            let l = c[a] - self.lo[a] as i64;
            if l < 0 || l >= self.size[a] as i64 {
                return 0.0;
            }
            local[a] = l as usize;
        }
        self.values[(local[2] * self.size[1] + local[1]) * self.size[0] + local[0]] as f64
    }

    /// Trilinearly interpolated smoothed occupancy at a world point.
    pub fn value(&self, p: [f64; 3]) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let g = &self.geometry;
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let c = (p[a] - g.origin[a]) / g.spacing[a];
            let f = c.floor();
            base[a] = f as i64;
            frac[a] = c - f;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if o[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w > 0.0 {
                acc += w * self.at([base[0] + o[0] as i64, base[1] + o[1] as i64, base[2] + o[2] as i64]);
            }
        }
        acc
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.value(p) >= 0.5
    }
}
