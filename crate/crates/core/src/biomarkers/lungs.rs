use serde::{Deserialize, Serialize};

use super::{check_mask, BiomarkerError, Measurement};
use crate::volume::{labels, CtVolume, LabelMask, MaskSchema};

/// Voxels strictly above this count as high attenuation.
pub const HIGH_ATTENUATION_HU: i16 = -200;
/// Voxels strictly below this count as low attenuation.
pub const LOW_ATTENUATION_HU: i16 = -950;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LungTexture {
    pub llr: Measurement,
    pub rlr: Measurement,
    pub lhr: Measurement,
    pub rhr: Measurement,
}

/// Returns (low ratio, high ratio) for one lung label.
fn ratios(v: &CtVolume, m: &LabelMask, label: u8) -> (Measurement, Measurement) {
    let (mut total, mut low, mut high) = (0usize, 0usize, 0usize);
    for (&l, &hu) in m.data().iter().zip(v.data()) {
        if l == label {
            total += 1;
            low += (hu < LOW_ATTENUATION_HU) as usize;
            high += (hu > HIGH_ATTENUATION_HU) as usize;
        }
    }
    if total == 0 {
        return (Measurement::empty(), Measurement::empty());
    }
    let n = total as f64;
    (Measurement::ok(low as f64 / n), Measurement::ok(high as f64 / n))
}

pub fn lung_texture(v: &CtVolume, m: &LabelMask) -> Result<LungTexture, BiomarkerError> {
    check_mask(v, m, MaskSchema::Lungs)?;
    let (llr, lhr) = ratios(v, m, labels::LEFT_LUNG);
    let (rlr, rhr) = ratios(v, m, labels::RIGHT_LUNG);
    Ok(LungTexture { llr, rlr, lhr, rhr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biomarkers::Status;
    use crate::volume::{Dims, Geometry};

    fn scene(hus: &[i16], labels_: &[u8]) -> (CtVolume, LabelMask) {
        let g = Geometry::new(Dims::new(hus.len(), 1, 1), [1.0; 3], [0.0; 3]).unwrap();
        let (v, _) = CtVolume::new(g, hus.to_vec()).unwrap();
        let m = LabelMask::new(g, MaskSchema::Lungs, labels_.to_vec()).unwrap();
        (v, m)
    }

    #[test]
    fn mid_range_lung_has_zero_ratios() {
        let (v, m) = scene(&[-500; 4], &[1, 1, 2, 2]);
        let t = lung_texture(&v, &m).unwrap();
        assert_eq!(t.llr, Measurement::ok(0.0));
        assert_eq!(t.lhr, Measurement::ok(0.0));
    }

    #[test]
    fn half_high_half_low() {
        let (v, m) = scene(&[-100, -100, -980, -980, -500], &[1, 1, 1, 1, 2]);
        let t = lung_texture(&v, &m).unwrap();
        assert_eq!(t.lhr.value, 0.5);
        assert_eq!(t.llr.value, 0.5);
    }

    #[test]
    fn thresholds_are_strict() {
        let (v, m) = scene(&[-200, -950, -199, -951], &[1, 1, 1, 1]);
        let t = lung_texture(&v, &m).unwrap();
        assert_eq!(t.lhr.value, 0.25);
        assert_eq!(t.llr.value, 0.25);
    }

    #[test]
    fn absent_right_lung_is_flagged() {
        let (v, m) = scene(&[-500; 3], &[1, 1, 0]);
        let t = lung_texture(&v, &m).unwrap();
        assert_eq!(t.rhr.status, Status::EmptyInput);
        assert_eq!(t.rlr.status, Status::EmptyInput);
        assert!(t.lhr.status.is_ok());
    }
}
