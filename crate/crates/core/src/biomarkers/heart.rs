use serde::{Deserialize, Serialize};

use super::{check_mask, BiomarkerError, Measurement};
use crate::geometry::{axial_extent_mm, fit_ellipse};
use crate::volume::{labels, Axis, CtVolume, LabelMask, MaskSchema};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeartMorphology {
    pub chr: Measurement,
    pub cld: Measurement,
    pub csd: Measurement,
    pub ctr: Measurement,
}

pub fn heart_morphology(v: &CtVolume, heart: &LabelMask, lungs: &LabelMask) -> Result<HeartMorphology, BiomarkerError> {
    heart_morphology_opt(v, heart, Some(lungs))
}

/// Without a lung mask CTR is flagged failed; the other three are unaffected.
pub(crate) fn heart_morphology_opt(
    v: &CtVolume,
    heart: &LabelMask,
    lungs: Option<&LabelMask>,
) -> Result<HeartMorphology, BiomarkerError> {
    check_mask(v, heart, MaskSchema::Pericardium)?;
    if let Some(l) = lungs {
        check_mask(v, l, MaskSchema::Lungs)?;
    }
    let chambers = heart.count(labels::CHAMBERS);
    let pericardium = heart.count(labels::PERICARDIUM);
    let chr = match chambers + pericardium {
        0 => Measurement::empty(),
        total => Measurement::ok(chambers as f64 / total as f64),
    };
    let (cld, csd) = chamber_diameters(heart);
    let ctr = match lungs {
        Some(l) => cardiothoracic_ratio(heart, l),
        None => Measurement::failed(),
    };
    Ok(HeartMorphology { chr, cld, csd, ctr })
}

/// Axial slice with the most voxels carrying any of `wanted`; lowest index
/// wins ties. `None` when no slice has any.
pub fn max_area_slice(m: &LabelMask, wanted: &[u8]) -> Option<usize> {
    let d = m.dims();
    let plane = d.nx * d.ny;
    let mut best: Option<(usize, usize)> = None;
    for z in 0..d.nz {
        let area = m.data()[z * plane..(z + 1) * plane]
            .iter()
            .filter(|l| wanted.contains(l))
            .count();
        if area > 0 && best.is_none_or(|(_, a)| area > a) {
            best = Some((z, area));
        }
    }
    best.map(|(z, _)| z)
}

/// In-plane world coordinates of the crack midpoints between each chamber
/// pixel and its 4-neighbours outside the chambers.
fn boundary_points(m: &LabelMask, z: usize) -> Vec<[f64; 2]> {
    let d = m.dims();
    let g = &m.geometry;
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < d.nx && (y as usize) < d.ny && m.at(x as usize, y as usize, z) == labels::CHAMBERS
    };
    let mut out = Vec::new();
    for y in 0..d.ny as i64 {
        for x in 0..d.nx as i64 {
            if !inside(x, y) {
                continue;
            }
            for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                if !inside(x + dx, y + dy) {
                    out.push([
                        g.origin[0] + (x as f64 + 0.5 * dx as f64) * g.spacing[0],
                        g.origin[1] + (y as f64 + 0.5 * dy as f64) * g.spacing[1],
                    ]);
                }
            }
        }
    }
    out
}

fn chamber_diameters(heart: &LabelMask) -> (Measurement, Measurement) {
    let Some(z) = max_area_slice(heart, &[labels::CHAMBERS]) else {
        return (Measurement::empty(), Measurement::empty());
    };
    match fit_ellipse(&boundary_points(heart, z)) {
        Ok(fit) => (Measurement::ok(fit.semi_major_mm), Measurement::ok(fit.semi_minor_mm)),
        Err(e) => {
            log::warn!("chamber ellipse fit on slice {z} failed: {e}");
            (Measurement::failed(), Measurement::failed())
        }
    }
}

fn cardiothoracic_ratio(heart: &LabelMask, lungs: &LabelMask) -> Measurement {
    let whole_heart = [labels::PERICARDIUM, labels::CHAMBERS];
    let Some(z) = max_area_slice(heart, &whole_heart) else {
        return Measurement::empty();
    };
    let heart_width = axial_extent_mm(heart, &whole_heart, Axis::X, Some(z));
    let lung_width = axial_extent_mm(lungs, &[labels::LEFT_LUNG, labels::RIGHT_LUNG], Axis::X, Some(z));
    if lung_width == 0.0 {
        return Measurement::empty();
    }
    Measurement::ok(heart_width / lung_width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biomarkers::Status;
    use crate::volume::{Dims, Geometry};

    fn grid(dims: Dims) -> Geometry {
        Geometry::new(dims, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn chamber_ratio() {
        let dims = Dims::new(100, 100, 10);
        let g = grid(dims);
        let v = CtVolume::filled(g, 0).unwrap();
        let mut h = LabelMask::empty(g, MaskSchema::Pericardium).unwrap();
        for i in 0..60_000 {
            h.set(i, labels::CHAMBERS).unwrap();
        }
        for i in 60_000..100_000 {
            h.set(i, labels::PERICARDIUM).unwrap();
        }
        let out = heart_morphology_opt(&v, &h, None).unwrap();
        assert_eq!(out.chr.value, 0.6);
        assert_eq!(out.ctr.status, Status::Failed);
    }

    #[test]
    fn elliptic_chamber_axes() {
        let dims = Dims::new(110, 80, 3);
        let g = grid(dims);
        let v = CtVolume::filled(g, 0).unwrap();
        let mut h = LabelMask::empty(g, MaskSchema::Pericardium).unwrap();
        for y in 0..80 {
            for x in 0..110 {
                let (dx, dy) = ((x as f64 - 54.3) / 45.0, (y as f64 - 39.6) / 30.0);
                if dx * dx + dy * dy <= 1.0 {
                    h.set(dims.index(x, y, 1), labels::CHAMBERS).unwrap();
                }
            }
        }
        let out = heart_morphology_opt(&v, &h, None).unwrap();
        assert!((out.cld.value / 45.0 - 1.0).abs() < 0.02, "{out:?}");
        assert!((out.csd.value / 30.0 - 1.0).abs() < 0.02, "{out:?}");
    }

    #[test]
    fn ctr_uses_the_widest_heart_slice() {
        let dims = Dims::new(300, 4, 3);
        let g = grid(dims);
        let v = CtVolume::filled(g, 0).unwrap();
        let mut h = LabelMask::empty(g, MaskSchema::Pericardium).unwrap();
        let mut l = LabelMask::empty(g, MaskSchema::Lungs).unwrap();
        for x in 100..220 {
            for y in 0..4 {
                h.set(dims.index(x, y, 1), labels::PERICARDIUM).unwrap();
            }
        }
        for x in 130..150 {
            h.set(dims.index(x, 0, 2), labels::CHAMBERS).unwrap();
        }
        for x in 10..100 {
            l.set(dims.index(x, 0, 1), labels::RIGHT_LUNG).unwrap();
        }
        for x in 220..290 {
            l.set(dims.index(x, 0, 1), labels::LEFT_LUNG).unwrap();
        }
        let out = heart_morphology(&v, &h, &l).unwrap();
        assert!((out.ctr.value - 120.0 / 280.0).abs() < 1e-12);
    }

    #[test]
    fn missing_chambers_are_empty() {
        let g = grid(Dims::new(4, 4, 4));
        let v = CtVolume::filled(g, 0).unwrap();
        let h = LabelMask::empty(g, MaskSchema::Pericardium).unwrap();
        let l = LabelMask::empty(g, MaskSchema::Lungs).unwrap();
        let out = heart_morphology(&v, &h, &l).unwrap();
        for x in [out.chr, out.cld, out.csd, out.ctr] {
            assert_eq!(x.status, Status::EmptyInput);
        }
    }
}
