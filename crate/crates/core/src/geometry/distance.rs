//! Exact Euclidean distance transform on anisotropic grids.
//!
//! Separable lower-envelope-of-parabolas construction, one pass per axis.
//! Everything outside the grid counts as background.

use crate::volume::Dims;

/// Distance in mm from every foreground voxel centre to the nearest
/// background voxel centre (0 on background).
pub fn distance_transform(dims: Dims, mask: &[bool], spacing: [f64; 3]) -> Vec<f64> {
    assert_eq!(mask.len(), dims.len());
    let mut sq: Vec<f64> = mask.iter().map(|&m| if m { f64::INFINITY } else { 0.0 }).collect();
    let n = dims.as_array();
    let strides = [1, dims.nx, dims.nx * dims.ny];

    for axis in 0..3 {
        let len = n[axis];
        let stride = strides[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        let (a0, a1) = (others[0], others[1]);
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        let mut scratch = Envelope::with_capacity(len + 2);
        for i1 in 0..n[a1] {
            for i0 in 0..n[a0] {
                let base = i0 * strides[a0] + i1 * strides[a1];
                for (k, v) in line.iter_mut().enumerate() {
                    *v = sq[base + k * stride];
                }
                scratch.transform(&line, spacing[axis], &mut out);
                for (k, v) in out.iter().enumerate() {
                    sq[base + k * stride] = *v;
                }
            }
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

struct Envelope {
    sites: Vec<f64>,
    values: Vec<f64>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            sites: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    /// 1D squared distance transform of `f` sampled at `k * step`, with an
    /// implicit zero-valued site just beyond each end.
    fn transform(&mut self, f: &[f64], step: f64, out: &mut [f64]) {
        let len = f.len();
        self.sites.clear();
        self.values.clear();
        self.bounds.clear();

        let candidates = std::iter::once((-step, 0.0))
            .chain(f.iter().enumerate().map(|(k, &v)| (k as f64 * step, v)))
            .chain(std::iter::once((len as f64 * step, 0.0)));

        for (q, fq) in candidates {
            if !fq.is_finite() {
                continue;
            }
            loop {
                let Some(&v) = self.sites.last() else {
                    self.sites.push(q);
                    self.values.push(fq);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let fv = *self.values.last().unwrap();
                let s = ((fq + q * q) - (fv + v * v)) / (2.0 * (q - v));
                if s <= *self.bounds.last().unwrap() {
                    self.sites.pop();
                    self.values.pop();
                    self.bounds.pop();
                    continue;
                }
                self.sites.push(q);
                self.values.push(fq);
                self.bounds.push(s);
                break;
            }
        }

        let mut j = 0;
        for (k, o) in out.iter_mut().enumerate() {
            let x = k as f64 * step;
            while j + 1 < self.sites.len() && self.bounds[j + 1] < x {
                j += 1;
            }
            let d = x - self.sites[j];
            *o = d * d + self.values[j];
        }
    }
}
