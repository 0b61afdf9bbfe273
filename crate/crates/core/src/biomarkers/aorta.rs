use serde::{Deserialize, Serialize};

use super::{check_schema, mean_std, BiomarkerError, Measurement};
use crate::geometry::{cross_sections, extract_centerline, BinaryMask, Centerline, GeometryError};
use crate::volume::{labels, LabelMask, MaskSchema};

pub const SECTION_INTERVAL_MM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AortaMorphology {
    pub ati: Measurement,
    pub amd: Measurement,
    pub amdstd: Measurement,
}

/// Centerline and per-station diameters behind the aorta measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AortaDetail {
    pub centerline: Centerline,
    pub diameters_mm: Vec<f64>,
}

impl AortaDetail {
    pub fn morphology(&self) -> AortaMorphology {
        let (max, std) = match mean_std(self.diameters_mm.iter().copied()) {
            Some((_, std)) => (self.diameters_mm.iter().cloned().fold(0.0, f64::max), std),
            None => (0.0, 0.0),
        };
        AortaMorphology {
            ati: Measurement::ok(self.centerline.tortuosity()),
            amd: Measurement::ok(max),
            amdstd: Measurement::ok(std),
        }
    }
}

pub fn aorta_morphology_detail(m: &LabelMask) -> Result<AortaDetail, GeometryError> {
    let tube = BinaryMask::from_labels(m, &[labels::AORTA]);
    let centerline = extract_centerline(&tube)?;
    let diameters_mm = cross_sections(&tube, &centerline, SECTION_INTERVAL_MM)?
        .into_iter()
        .map(|s| s.max_diameter_mm)
        .collect();
    Ok(AortaDetail { centerline, diameters_mm })
}

/// Geometry failures flag all three outputs rather than erroring.
pub fn aorta_morphology(m: &LabelMask) -> Result<AortaMorphology, BiomarkerError> {
    check_schema(m, MaskSchema::Aorta)?;
    Ok(match aorta_morphology_detail(m) {
        Ok(detail) => detail.morphology(),
        Err(e) => {
            log::warn!("aorta morphology failed: {e}");
            AortaMorphology {
                ati: Measurement::failed(),
                amd: Measurement::failed(),
                amdstd: Measurement::failed(),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biomarkers::Status;
    use crate::volume::{Dims, Geometry};

    #[test]
    fn empty_mask_fails_all_three() {
        let g = Geometry::new(Dims::new(8, 8, 8), [1.0; 3], [0.0; 3]).unwrap();
        let m = LabelMask::empty(g, MaskSchema::Aorta).unwrap();
        let a = aorta_morphology(&m).unwrap();
        for x in [a.ati, a.amd, a.amdstd] {
            assert_eq!(x.status, Status::Failed);
        }
    }

    #[test]
    fn straight_cylinder() {
        let dims = Dims::new(44, 44, 60);
        let g = Geometry::new(dims, [1.0; 3], [0.0; 3]).unwrap();
        let mut m = LabelMask::empty(g, MaskSchema::Aorta).unwrap();
        for z in 5..55 {
            for y in 0..44 {
                for x in 0..44 {
                    let (dx, dy) = (x as f64 - 21.5, y as f64 - 21.5);
                    if dx.hypot(dy) <= 15.0 {
                        m.set(dims.index(x, y, z), 1).unwrap();
                    }
                }
            }
        }
        let a = aorta_morphology(&m).unwrap();
        assert!(a.ati.status.is_ok());
        assert!((1.0..=1.02).contains(&a.ati.value), "{a:?}");
        assert!((a.amd.value - 30.0).abs() <= 1.0, "{a:?}");
        assert!(a.amdstd.value <= 0.5, "{a:?}");
    }
}
