//! The 18 discrete CT biomarkers.
//!
//! Every operation returns per-field [`Measurement`]s: geometry failures and
//! empty inputs are recorded as a status on the affected fields, while only
//! schema or grid-alignment problems abort with an error.

mod aorta;
mod calcium;
mod fat;
mod heart;
pub mod io;
mod lungs;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{CtVolume, LabelMask, MaskSchema};

pub use aorta::{aorta_morphology, aorta_morphology_detail, AortaDetail, AortaMorphology, SECTION_INTERVAL_MM};
pub use calcium::{
    agatston_weight, calcium_scores, slab_index, CalciumScores, AGATSTON_MIN_LESION_MM2, CALCIUM_MIN_HU, SLAB_THICKNESS_MM,
};
pub use fat::{pericardial_fat, PericardialFat, FAT_HU_MAX, FAT_HU_MIN};
pub use heart::{heart_morphology, max_area_slice, HeartMorphology};
pub use lungs::{lung_texture, LungTexture, HIGH_ATTENUATION_HU, LOW_ATTENUATION_HU};

pub const BIOMARKER_COUNT: usize = 18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiomarkerError {
    #[error("expected a {expected:?} mask, got {found:?}")]
    SchemaMismatch { expected: MaskSchema, found: MaskSchema },
    #[error("{what} grid does not match the CT volume (dims {mask_dims:?} vs {volume_dims:?})")]
    DimsMismatch {
        what: &'static str,
        mask_dims: [usize; 3],
        volume_dims: [usize; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Biomarker {
    #[serde(rename = "PFATV")]
    Pfatv,
    #[serde(rename = "PFATM")]
    Pfatm,
    #[serde(rename = "PFATSTD")]
    Pfatstd,
    #[serde(rename = "CACS")]
    Cacs,
    #[serde(rename = "CACV")]
    Cacv,
    #[serde(rename = "ACS")]
    Acs,
    #[serde(rename = "ACV")]
    Acv,
    #[serde(rename = "ATI")]
    Ati,
    #[serde(rename = "AMD")]
    Amd,
    #[serde(rename = "AMDSTD")]
    Amdstd,
    #[serde(rename = "CHR")]
    Chr,
    #[serde(rename = "CLD")]
    Cld,
    #[serde(rename = "CSD")]
    Csd,
    #[serde(rename = "CTR")]
    Ctr,
    #[serde(rename = "LLR")]
    Llr,
    #[serde(rename = "RLR")]
    Rlr,
    #[serde(rename = "LHR")]
    Lhr,
    #[serde(rename = "RHR")]
    Rhr,
}

impl Biomarker {
    pub const ALL: [Biomarker; BIOMARKER_COUNT] = [
        Biomarker::Pfatv,
        Biomarker::Pfatm,
        Biomarker::Pfatstd,
        Biomarker::Cacs,
        Biomarker::Cacv,
        Biomarker::Acs,
        Biomarker::Acv,
        Biomarker::Ati,
        Biomarker::Amd,
        Biomarker::Amdstd,
        Biomarker::Chr,
        Biomarker::Cld,
        Biomarker::Csd,
        Biomarker::Ctr,
        Biomarker::Llr,
        Biomarker::Rlr,
        Biomarker::Lhr,
        Biomarker::Rhr,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Biomarker::Pfatv => "PFATV",
            Biomarker::Pfatm => "PFATM",
            Biomarker::Pfatstd => "PFATSTD",
            Biomarker::Cacs => "CACS",
            Biomarker::Cacv => "CACV",
            Biomarker::Acs => "ACS",
            Biomarker::Acv => "ACV",
            Biomarker::Ati => "ATI",
            Biomarker::Amd => "AMD",
            Biomarker::Amdstd => "AMDSTD",
            Biomarker::Chr => "CHR",
            Biomarker::Cld => "CLD",
            Biomarker::Csd => "CSD",
            Biomarker::Ctr => "CTR",
            Biomarker::Llr => "LLR",
            Biomarker::Rlr => "RLR",
            Biomarker::Lhr => "LHR",
            Biomarker::Rhr => "RHR",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Biomarker::Pfatv | Biomarker::Cacv | Biomarker::Acv => "mm3",
            Biomarker::Pfatm | Biomarker::Pfatstd => "HU",
            Biomarker::Amd | Biomarker::Amdstd | Biomarker::Cld | Biomarker::Csd => "mm",
            _ => "",
        }
    }

    pub fn is_ratio(self) -> bool {
        matches!(
            self,
            Biomarker::Chr | Biomarker::Ctr | Biomarker::Llr | Biomarker::Rlr | Biomarker::Lhr | Biomarker::Rhr
        )
    }
}

impl fmt::Display for Biomarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Biomarker {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Biomarker::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown biomarker {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    #[default]
    Ok,
    EmptyInput,
    Failed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::EmptyInput => "empty-input",
            Status::Failed => "failed",
        }
    }

    pub fn is_ok(self) -> bool {
        self == Status::Ok
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(Status::Ok),
            "empty-input" => Ok(Status::EmptyInput),
            "failed" => Ok(Status::Failed),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

/// One biomarker value; flagged values are stored as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub status: Status,
}

impl Measurement {
    pub fn ok(value: f64) -> Self {
        Self { value, status: Status::Ok }
    }

    pub fn empty() -> Self {
        Self {
            value: 0.0,
            status: Status::EmptyInput,
        }
    }

    pub fn failed() -> Self {
        Self {
            value: 0.0,
            status: Status::Failed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "io::NamedBiomarkers", try_from = "io::NamedBiomarkers")]
pub struct BiomarkerVector {
    values: [f64; BIOMARKER_COUNT],
    status: [Status; BIOMARKER_COUNT],
}

impl Default for BiomarkerVector {
    fn default() -> Self {
        Self {
            values: [0.0; BIOMARKER_COUNT],
            status: [Status::Ok; BIOMARKER_COUNT],
        }
    }
}

impl BiomarkerVector {
    pub fn all_failed() -> Self {
        Self {
            values: [0.0; BIOMARKER_COUNT],
            status: [Status::Failed; BIOMARKER_COUNT],
        }
    }

    pub fn from_parts(values: [f64; BIOMARKER_COUNT], status: [Status; BIOMARKER_COUNT]) -> Self {
        Self { values, status }
    }

    pub fn get(&self, b: Biomarker) -> Measurement {
        Measurement {
            value: self.values[b.index()],
            status: self.status[b.index()],
        }
    }

    pub fn value(&self, b: Biomarker) -> f64 {
        self.values[b.index()]
    }

    pub fn status(&self, b: Biomarker) -> Status {
        self.status[b.index()]
    }

    pub fn set(&mut self, b: Biomarker, m: Measurement) {
        self.values[b.index()] = m.value;
        self.status[b.index()] = m.status;
    }

    pub fn values(&self) -> &[f64; BIOMARKER_COUNT] {
        &self.values
    }

    pub fn statuses(&self) -> &[Status; BIOMARKER_COUNT] {
        &self.status
    }

    pub fn all_ok(&self) -> bool {
        self.status.iter().all(|s| s.is_ok())
    }

    /// Range checks on `ok` fields: non-negative volumes and scores, ratios
    /// in [0, 1], ATI ≥ 1, CLD ≥ CSD.
    pub fn invariant_violations(&self) -> Vec<(Biomarker, String)> {
        let mut out = Vec::new();
        for b in Biomarker::ALL {
            let m = self.get(b);
            if !m.status.is_ok() {
                continue;
            }
            if !m.value.is_finite() {
                out.push((b, format!("non-finite value {}", m.value)));
                continue;
            }
            if b.is_ratio() && !(0.0..=1.0).contains(&m.value) {
                out.push((b, format!("ratio {} outside [0, 1]", m.value)));
            }
            if !matches!(b, Biomarker::Pfatm) && m.value < 0.0 {
                out.push((b, format!("negative value {}", m.value)));
            }
        }
        let ati = self.get(Biomarker::Ati);
        if ati.status.is_ok() && ati.value < 1.0 - 1e-9 {
            out.push((Biomarker::Ati, format!("tortuosity {} below 1", ati.value)));
        }
        let (cld, csd) = (self.get(Biomarker::Cld), self.get(Biomarker::Csd));
        if cld.status.is_ok() && csd.status.is_ok() && cld.value < csd.value {
            out.push((Biomarker::Cld, format!("CLD {} below CSD {}", cld.value, csd.value)));
        }
        out
    }
}

/// The segmentation masks available for one scan.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScanMasks<'a> {
    pub pericardium: Option<&'a LabelMask>,
    pub calcium: Option<&'a LabelMask>,
    pub aorta: Option<&'a LabelMask>,
    pub lungs: Option<&'a LabelMask>,
}

pub(crate) fn check_mask(
    v: &CtVolume,
    m: &LabelMask,
    expected: MaskSchema,
) -> Result<(), BiomarkerError> {
    if m.schema != expected {
        return Err(BiomarkerError::SchemaMismatch {
            expected,
            found: m.schema,
        });
    }
    if !v.geometry.aligned_with(&m.geometry) {
        return Err(BiomarkerError::DimsMismatch {
            what: expected.name(),
            mask_dims: m.dims().as_array(),
            volume_dims: v.dims().as_array(),
        });
    }
    Ok(())
}

pub(crate) fn check_schema(m: &LabelMask, expected: MaskSchema) -> Result<(), BiomarkerError> {
    if m.schema != expected {
        return Err(BiomarkerError::SchemaMismatch {
            expected,
            found: m.schema,
        });
    }
    Ok(())
}

/// Mean and population standard deviation.
pub(crate) fn mean_std(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Runs all five biomarker groups. Missing masks flag their fields as
/// failed; only schema or alignment problems return an error.
pub fn extract_all(v: &CtVolume, masks: ScanMasks<'_>) -> Result<BiomarkerVector, BiomarkerError> {
    let checks = [
        (masks.pericardium, MaskSchema::Pericardium),
        (masks.calcium, MaskSchema::Calcium),
        (masks.aorta, MaskSchema::Aorta),
        (masks.lungs, MaskSchema::Lungs),
    ];
    for (m, schema) in checks {
        if let Some(m) = m {
            check_mask(v, m, schema)?;
        }
    }

    let (aorta, rest) = rayon::join(
        || masks.aorta.map(aorta_morphology).transpose(),
        || -> Result<_, BiomarkerError> {
            let fat = masks.pericardium.map(|m| pericardial_fat(v, m)).transpose()?;
            let calcium = masks.calcium.map(|m| calcium_scores(v, m)).transpose()?;
            let heart = masks
                .pericardium
                .map(|h| heart::heart_morphology_opt(v, h, masks.lungs))
                .transpose()?;
            let lungs = masks.lungs.map(|m| lung_texture(v, m)).transpose()?;
            Ok((fat, calcium, heart, lungs))
        },
    );
    let aorta = aorta?;
    let (fat, calcium, heart, lungs) = rest?;

    let mut out = BiomarkerVector::all_failed();
    if let Some(f) = fat {
        out.set(Biomarker::Pfatv, f.pfatv);
        out.set(Biomarker::Pfatm, f.pfatm);
        out.set(Biomarker::Pfatstd, f.pfatstd);
    }
    if let Some(c) = calcium {
        out.set(Biomarker::Cacs, c.cacs);
        out.set(Biomarker::Cacv, c.cacv);
        out.set(Biomarker::Acs, c.acs);
        out.set(Biomarker::Acv, c.acv);
    }
    if let Some(a) = aorta {
        out.set(Biomarker::Ati, a.ati);
        out.set(Biomarker::Amd, a.amd);
        out.set(Biomarker::Amdstd, a.amdstd);
    }
    if let Some(h) = heart {
        out.set(Biomarker::Chr, h.chr);
        out.set(Biomarker::Cld, h.cld);
        out.set(Biomarker::Csd, h.csd);
        out.set(Biomarker::Ctr, h.ctr);
    }
    if let Some(l) = lungs {
        out.set(Biomarker::Llr, l.llr);
        out.set(Biomarker::Rlr, l.rlr);
        out.set(Biomarker::Lhr, l.lhr);
        out.set(Biomarker::Rhr, l.rhr);
    }
    for (b, why) in out.invariant_violations() {
        log::warn!("{b}: {why}; flagging as failed");
        out.set(b, Measurement::failed());
    }
    Ok(out)
}
