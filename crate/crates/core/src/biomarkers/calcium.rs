use serde::{Deserialize, Serialize};

use super::{check_mask, BiomarkerError, Measurement};
use crate::geometry::label_2d_eight;
use crate::volume::{labels, CtVolume, LabelMask, MaskSchema};

pub const CALCIUM_MIN_HU: i16 = 130;
pub const SLAB_THICKNESS_MM: f64 = 3.0;
pub const AGATSTON_MIN_LESION_MM2: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalciumScores {
    pub cacs: Measurement,
    pub cacv: Measurement,
    pub acs: Measurement,
    pub acv: Measurement,
}

/// Density weight for a lesion's peak HU; `None` below the calcium threshold.
pub fn agatston_weight(peak_hu: i16) -> Option<u8> {
    match peak_hu {
        i16::MIN..=129 => None,
        130..=199 => Some(1),
        200..=299 => Some(2),
        300..=399 => Some(3),
        _ => Some(4),
    }
}

/// Slab a slice falls into when the stack is regrouped at 3 mm, by the
/// position of the slice centre.
pub fn slab_index(z: usize, z_spacing_mm: f64) -> usize {
    ((z as f64 + 0.5) * z_spacing_mm / SLAB_THICKNESS_MM).floor() as usize
}

/// Per-slab projection of one label's refined voxels: membership and peak HU.
fn slabs(v: &CtVolume, m: &LabelMask, label: u8) -> Vec<(Vec<bool>, Vec<i16>)> {
    let d = v.dims();
    let plane = d.nx * d.ny;
    let n_slabs = if d.nz == 0 { 0 } else { slab_index(d.nz - 1, v.spacing()[2]) + 1 };
    let mut out = vec![(vec![false; plane], vec![i16::MIN; plane]); n_slabs];
    for z in 0..d.nz {
        let (hit, peak) = &mut out[slab_index(z, v.spacing()[2])];
        for p in 0..plane {
            let i = z * plane + p;
            let hu = v.data()[i];
            if m.data()[i] == label && hu >= CALCIUM_MIN_HU {
                hit[p] = true;
                peak[p] = peak[p].max(hu);
            }
        }
    }
    out
}

/// Returns (score, refined volume in mm³) for one calcium label.
fn score_label(v: &CtVolume, m: &LabelMask, label: u8) -> (f64, f64) {
    let refined = m
        .data()
        .iter()
        .zip(v.data())
        .filter(|(&l, &hu)| l == label && hu >= CALCIUM_MIN_HU)
        .count();
    let volume = refined as f64 * v.geometry.voxel_volume_mm3();

    let d = v.dims();
    let pixel_area = v.spacing()[0] * v.spacing()[1];
    // Weighted pixel counts stay integral so the sum is order independent.
    let mut weighted_pixels: u64 = 0;
    for (hit, peak) in slabs(v, m, label) {
        let (ids, n) = label_2d_eight(d.nx, d.ny, &hit);
        let mut count = vec![0u64; n];
        let mut top = vec![i16::MIN; n];
        for (p, &id) in ids.iter().enumerate() {
            if id > 0 {
                let k = id as usize - 1;
                count[k] += 1;
                top[k] = top[k].max(peak[p]);
            }
        }
        for (c, t) in count.into_iter().zip(top) {
            if (c as f64) * pixel_area < AGATSTON_MIN_LESION_MM2 {
                continue;
            }
            if let Some(w) = agatston_weight(t) {
                weighted_pixels += c * w as u64;
            }
        }
    }
    (weighted_pixels as f64 * pixel_area, volume)
}

pub fn calcium_scores(v: &CtVolume, m: &LabelMask) -> Result<CalciumScores, BiomarkerError> {
    check_mask(v, m, MaskSchema::Calcium)?;
    let (cacs, cacv) = score_label(v, m, labels::CORONARY);
    let (acs, acv) = score_label(v, m, labels::AORTIC_CALCIUM);
    Ok(CalciumScores {
        cacs: Measurement::ok(cacs),
        cacv: Measurement::ok(cacv),
        acs: Measurement::ok(acs),
        acv: Measurement::ok(acv),
    })
}
