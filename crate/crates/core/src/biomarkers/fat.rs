use serde::{Deserialize, Serialize};

use super::{check_mask, mean_std, BiomarkerError, Measurement};
use crate::volume::{labels, CtVolume, LabelMask, MaskSchema};

pub const FAT_HU_MIN: i16 = -190;
pub const FAT_HU_MAX: i16 = -30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PericardialFat {
    pub pfatv: Measurement,
    pub pfatm: Measurement,
    pub pfatstd: Measurement,
}

/// Fat is pericardium-labelled tissue within the adipose HU window.
pub fn pericardial_fat(v: &CtVolume, m: &LabelMask) -> Result<PericardialFat, BiomarkerError> {
    check_mask(v, m, MaskSchema::Pericardium)?;
    let fat: Vec<f64> = m
        .data()
        .iter()
        .zip(v.data())
        .filter(|(&l, &hu)| l == labels::PERICARDIUM && (FAT_HU_MIN..=FAT_HU_MAX).contains(&hu))
        .map(|(_, &hu)| hu as f64)
        .collect();
    let pfatv = Measurement::ok(fat.len() as f64 * v.geometry.voxel_volume_mm3());
    Ok(match mean_std(fat.into_iter()) {
        Some((mean, std)) => PericardialFat {
            pfatv,
            pfatm: Measurement::ok(mean),
            pfatstd: Measurement::ok(std),
        },
        None => PericardialFat {
            pfatv,
            pfatm: Measurement::empty(),
            pfatstd: Measurement::empty(),
        },
    })
}
