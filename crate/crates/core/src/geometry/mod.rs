//! Geometry over label grids: components, distance transform, tube
//! centerlines and cross-sections, ellipse fitting, axis extents.

pub mod centerline;
pub mod components;
pub mod distance;
pub mod ellipse;
pub mod occupancy;
pub mod section;

use thiserror::Error;

use crate::volume::{Axis, Geometry, LabelMask};

pub use centerline::{extract_centerline, Centerline};
pub use components::{connected_components, label_2d_eight, BoundingBox, ComponentSet, Connectivity};
pub use distance::distance_transform;
pub use ellipse::{fit_ellipse, EllipseFit};
pub use occupancy::SmoothOccupancy;
pub use section::{cross_sections, section_count, CrossSection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("mask has no foreground")]
    EmptyMask,
    #[error("mask has {0} significant components, expected one tube")]
    MultipleComponents(usize),
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("degenerate conic: {0}")]
    DegenerateConic(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Foreground selection on a placed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub geometry: Geometry,
    pub voxels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: Geometry, voxels: Vec<bool>) -> Self {
        assert_eq!(voxels.len(), geometry.dims.len(), "voxel count does not match dims");
        Self { geometry, voxels }
    }

    pub fn from_labels(mask: &LabelMask, labels: &[u8]) -> Self {
        Self::new(mask.geometry, mask.select(labels))
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    /// Nearest-voxel membership of a world point.
    #[inline]
    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        self.geometry.nearest_voxel(p).is_some_and(|i| self.voxels[i])
    }
}

/// Extent along `axis` of voxels whose label is in `labels`:
/// `(max index - min index + 1) * spacing`, 0 for an empty selection.
/// With `slice = Some(z)` only that axial slice is considered.
pub fn axial_extent_mm(mask: &LabelMask, labels: &[u8], axis: Axis, slice: Option<usize>) -> f64 {
    let dims = mask.dims();
    let a = axis as usize;
    let mut lo = usize::MAX;
    let mut hi = 0usize;
    let z_range = match slice {
        Some(z) => z..z + 1,
        None => 0..dims.nz,
    };
    for z in z_range {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                if labels.contains(&mask.at(x, y, z)) {
                    let i = [x, y, z][a];
                    lo = lo.min(i);
                    hi = hi.max(i);
                }
            }
        }
    }
    if lo == usize::MAX {
        0.0
    } else {
        (hi - lo + 1) as f64 * mask.geometry.spacing[a]
    }
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[inline]
pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = norm(a);
    (n > 0.0).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, MaskSchema};

    #[test]
    fn extent_of_single_voxel_and_empty() {
        let g = Geometry::new(Dims::new(5, 5, 2), [0.7, 0.7, 2.0], [0.0; 3]).unwrap();
        let mut m = LabelMask::empty(g, MaskSchema::Aorta).unwrap();
        assert_eq!(axial_extent_mm(&m, &[1], Axis::X, None), 0.0);
        m.set(g.dims.index(2, 3, 1), 1).unwrap();
        assert!((axial_extent_mm(&m, &[1], Axis::X, None) - 0.7).abs() < 1e-12);
        assert_eq!(axial_extent_mm(&m, &[1], Axis::X, Some(0)), 0.0);
        assert_eq!(axial_extent_mm(&m, &[1], Axis::Z, None), 2.0);
    }
}
