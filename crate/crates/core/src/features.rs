//! Deep-feature ingestion, the deterministic stub featurizer, feature tables
//! and z-score normalization.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarkers::io::{biomarker_cells, parse_biomarker_cells, TableError};
use crate::biomarkers::{Biomarker, BiomarkerVector, Measurement, BIOMARKER_COUNT};
use crate::volume::{labels, CtVolume, LabelMask, MaskSchema, HU_MAX, HU_MIN};

pub const DEEP_FEATURE_DIM: usize = 512;
pub const HISTOGRAM_BINS: usize = 256;
/// Pooling cells along x, y, z.
pub const POOL_GRID: [usize; 3] = [8, 8, 4];
pub const STD_FLOOR: f64 = 1e-8;

const HU_BIN_WIDTH: i32 = (HU_MAX as i32 - HU_MIN as i32 + 1) / HISTOGRAM_BINS as i32;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("heart mask has no foreground")]
    EmptyMask,
    #[error("mask must use the pericardium schema, found {0:?}")]
    SchemaMismatch(MaskSchema),
    #[error("mask grid does not match the volume grid")]
    DimsMismatch,
    #[error("line {line}: expected {expected} columns, found {found}")]
    ArityMismatch { line: u64, expected: usize, found: usize },
    #[error("scan {scan_id}: non-finite value in {column}")]
    NonFiniteValue { scan_id: String, column: String },
    #[error("duplicate scan id {0}")]
    DuplicateScanId(String),
    #[error("need at least {needed} records, got {found}")]
    TooFewRecords { needed: usize, found: usize },
    #[error(transparent)]
    Table(#[from] TableError),
}

impl From<csv::Error> for FeatureError {
    fn from(e: csv::Error) -> Self {
        FeatureError::Table(e.into())
    }
}

impl From<serde_json::Error> for FeatureError {
    fn from(e: serde_json::Error) -> Self {
        FeatureError::Table(e.into())
    }
}

/// Fusion input for one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub scan_id: String,
    pub x1: Vec<f64>,
    pub biomarkers: BiomarkerVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

impl FeatureRecord {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.x1.len() != DEEP_FEATURE_DIM {
            return Err(FeatureError::ArityMismatch {
                line: 0,
                expected: DEEP_FEATURE_DIM,
                found: self.x1.len(),
            });
        }
        let non_finite = |column: String| FeatureError::NonFiniteValue {
            scan_id: self.scan_id.clone(),
            column,
        };
        if let Some(k) = self.x1.iter().position(|v| !v.is_finite()) {
            return Err(non_finite(format!("x1_{k}")));
        }
        if let Some(b) = Biomarker::ALL.iter().find(|&&b| !self.biomarkers.value(b).is_finite()) {
            return Err(non_finite(b.name().to_string()));
        }
        Ok(())
    }
}

/// Histogram of HU over the heart bounding box followed by box-pooled means.
///
/// The crop is the axis-aligned bounding box of pericardium and chamber
/// labels. Histogram bins are 20 HU wide over the clamp range and hold raw
/// voxel counts. Pooling splits the crop into 8×8×4 cells (x-fastest order);
/// a crop thinner than the cell grid reuses its nearest slab.
pub fn stub_featurize(v: &CtVolume, heart: &LabelMask) -> Result<Vec<f64>, FeatureError> {
    if heart.schema != MaskSchema::Pericardium {
        return Err(FeatureError::SchemaMismatch(heart.schema));
    }
    if !heart.geometry.aligned_with(&v.geometry) {
        return Err(FeatureError::DimsMismatch);
    }
    let dims = v.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (i, &l) in heart.data().iter().enumerate() {
        if l == labels::PERICARDIUM || l == labels::CHAMBERS {
            let c = dims.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(FeatureError::EmptyMask);
    }
    let size = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);

    let mut out = vec![0.0; DEEP_FEATURE_DIM];
    let mut hist = [0u64; HISTOGRAM_BINS];
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                hist[hu_bin(v.at(x, y, z))] += 1;
            }
        }
    }
    for (o, h) in out.iter_mut().zip(hist) {
        *o = h as f64;
    }

    let pooled = &mut out[HISTOGRAM_BINS..];
    let mut k = 0;
    for cz in 0..POOL_GRID[2] {
        let rz = cell_range(cz, POOL_GRID[2], size[2]);
        for cy in 0..POOL_GRID[1] {
            let ry = cell_range(cy, POOL_GRID[1], size[1]);
            for cx in 0..POOL_GRID[0] {
                let rx = cell_range(cx, POOL_GRID[0], size[0]);
                let mut sum = 0i64;
                let mut n = 0i64;
                for z in rz.clone() {
                    for y in ry.clone() {
                        for x in rx.clone() {
                            sum += v.at(lo[0] + x, lo[1] + y, lo[2] + z) as i64;
                            n += 1;
                        }
                    }
                }
                pooled[k] = sum as f64 / n as f64;
                k += 1;
            }
        }
    }
    Ok(out)
}

fn hu_bin(hu: i16) -> usize {
    let b = (hu as i32 - HU_MIN as i32) / HU_BIN_WIDTH;
    b.clamp(0, HISTOGRAM_BINS as i32 - 1) as usize
}

/// Voxel range of cell `i` of `cells` along an axis of length `n`; never empty.
fn cell_range(i: usize, cells: usize, n: usize) -> std::ops::Range<usize> {
    let start = (i * n / cells).min(n - 1);
    let end = ((i + 1) * n / cells).max(start + 1);
    start..end
}

pub fn feature_csv_header(with_label: bool) -> Vec<String> {
    let mut h = vec!["scan_id".to_string()];
    h.extend((0..DEEP_FEATURE_DIM).map(|k| format!("x1_{k}")));
    h.extend(Biomarker::ALL.iter().map(|b| b.name().to_string()));
    h.extend(Biomarker::ALL.iter().map(|b| format!("{}_status", b.name())));
    if with_label {
        h.push("label".into());
    }
    h
}

pub fn write_features_csv<W: Write>(w: W, records: &[FeatureRecord]) -> Result<(), FeatureError> {
    let with_label = records.iter().any(|r| r.label.is_some());
    let mut out = csv::Writer::from_writer(w);
    out.write_record(feature_csv_header(with_label))?;
    for r in records {
        let mut rec = vec![r.scan_id.clone()];
        rec.extend(r.x1.iter().map(|v| v.to_string()));
        rec.extend(biomarker_cells(&r.biomarkers));
        if with_label {
            rec.push(match r.label {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            });
        }
        out.write_record(&rec)?;
    }
    out.flush().map_err(TableError::from)?;
    Ok(())
}

pub fn read_features_csv<R: Read>(r: R) -> Result<Vec<FeatureRecord>, FeatureError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let with_label = header.last().is_some_and(|h| h == "label");
    let expected = feature_csv_header(with_label);
    if header.len() != expected.len() {
        return Err(FeatureError::ArityMismatch {
            line: 1,
            expected: expected.len(),
            found: header.len(),
        });
    }
    if header != expected {
        return Err(TableError::Format {
            line: 1,
            reason: "unexpected feature table header".into(),
        }
        .into());
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected.len() {
            return Err(FeatureError::ArityMismatch {
                line,
                expected: expected.len(),
                found: rec.len(),
            });
        }
        let cells: Vec<&str> = rec.iter().collect();
        let x1 = cells[1..=DEEP_FEATURE_DIM]
            .iter()
            .enumerate()
            .map(|(k, c)| {
                c.trim().parse::<f64>().map_err(|_| TableError::Format {
                    line,
                    reason: format!("x1_{k}: not a number: {c:?}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bio_end = 1 + DEEP_FEATURE_DIM + 2 * BIOMARKER_COUNT;
        let biomarkers = parse_biomarker_cells(&cells[1 + DEEP_FEATURE_DIM..bio_end], line)?;
        let label = if with_label {
            match cells[bio_end].trim() {
                "" => None,
                "1" => Some(true),
                "0" => Some(false),
                other => {
                    return Err(TableError::Format {
                        line,
                        reason: format!("label must be 0, 1 or empty, got {other:?}"),
                    }
                    .into())
                }
            }
        } else {
            None
        };
        records.push(FeatureRecord {
            scan_id: cells[0].to_string(),
            x1,
            biomarkers,
            label,
        });
    }
    check_records(&records)?;
    Ok(records)
}

pub fn write_features_json<W: Write>(w: W, records: &[FeatureRecord]) -> Result<(), FeatureError> {
    serde_json::to_writer_pretty(w, records)?;
    Ok(())
}

pub fn read_features_json<R: Read>(r: R) -> Result<Vec<FeatureRecord>, FeatureError> {
    let records: Vec<FeatureRecord> = serde_json::from_reader(r)?;
    check_records(&records)?;
    Ok(records)
}

/// Reads a feature table, choosing JSON for `.json` paths and CSV otherwise.
pub fn import_features(path: &std::path::Path) -> Result<Vec<FeatureRecord>, FeatureError> {
    let file = std::fs::File::open(path).map_err(TableError::from)?;
    let reader = std::io::BufReader::new(file);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        read_features_json(reader)
    } else {
        read_features_csv(reader)
    }
}

fn check_records(records: &[FeatureRecord]) -> Result<(), FeatureError> {
    let mut seen = HashSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert(r.scan_id.as_str()) {
            return Err(FeatureError::DuplicateScanId(r.scan_id.clone()));
        }
    }
    Ok(())
}

/// Per-column mean and population standard deviation from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub biomarker_mean: Vec<f64>,
    pub biomarker_std: Vec<f64>,
    pub x1_mean: Vec<f64>,
    pub x1_std: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt().max(STD_FLOOR))
}

/// Fits z-score statistics. Flagged biomarker entries are left out of their
/// column's statistics.
pub fn fit_normalizer(records: &[FeatureRecord]) -> Result<NormalizationStats, FeatureError> {
    if records.len() < 2 {
        return Err(FeatureError::TooFewRecords {
            needed: 2,
            found: records.len(),
        });
    }
    let mut stats = NormalizationStats {
        biomarker_mean: Vec::with_capacity(BIOMARKER_COUNT),
        biomarker_std: Vec::with_capacity(BIOMARKER_COUNT),
        x1_mean: Vec::with_capacity(DEEP_FEATURE_DIM),
        x1_std: Vec::with_capacity(DEEP_FEATURE_DIM),
    };
    for b in Biomarker::ALL {
        let col = records
            .iter()
            .filter(|r| r.biomarkers.status(b).is_ok())
            .map(move |r| r.biomarkers.value(b));
        let (m, s) = mean_std(col);
        stats.biomarker_mean.push(m);
        stats.biomarker_std.push(s);
    }
    let width = records[0].x1.len();
    for k in 0..width {
        let (m, s) = mean_std(records.iter().map(move |r| r.x1[k]));
        stats.x1_mean.push(m);
        stats.x1_std.push(s);
    }
    Ok(stats)
}

impl NormalizationStats {
    /// z-scores every value; flagged biomarkers become 0 and keep their flag.
    pub fn apply(&self, r: &FeatureRecord) -> FeatureRecord {
        let mut biomarkers = r.biomarkers;
        for b in Biomarker::ALL {
            let k = b.index();
            let m = r.biomarkers.get(b);
            let value = if m.status.is_ok() {
                (m.value - self.biomarker_mean[k]) / self.biomarker_std[k]
            } else {
                0.0
            };
            biomarkers.set(b, Measurement { value, ..m });
        }
        let x1 = r
            .x1
            .iter()
            .zip(self.x1_mean.iter().zip(&self.x1_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        FeatureRecord {
            scan_id: r.scan_id.clone(),
            x1,
            biomarkers,
            label: r.label,
        }
    }

    /// Inverse of [`apply`](Self::apply) for unflagged values.
    pub fn invert(&self, r: &FeatureRecord) -> FeatureRecord {
        let mut biomarkers = r.biomarkers;
        for b in Biomarker::ALL {
            let k = b.index();
            let m = r.biomarkers.get(b);
            if m.status.is_ok() {
                let value = m.value * self.biomarker_std[k] + self.biomarker_mean[k];
                biomarkers.set(b, Measurement { value, ..m });
            }
        }
        let x1 = r
            .x1
            .iter()
            .zip(self.x1_mean.iter().zip(&self.x1_std))
            .map(|(z, (m, s))| z * s + m)
            .collect();
        FeatureRecord {
            scan_id: r.scan_id.clone(),
            x1,
            biomarkers,
            label: r.label,
        }
    }
}

pub fn apply_normalizer(stats: &NormalizationStats, record: &FeatureRecord) -> FeatureRecord {
    stats.apply(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biomarkers::Status;
    use crate::volume::{Dims, Geometry};

    fn scene(hu: impl Fn(usize, usize, usize) -> i16) -> (CtVolume, LabelMask) {
        let dims = Dims::new(20, 18, 10);
        let g = Geometry::new(dims, [1.0; 3], [0.0; 3]).unwrap();
        let data = (0..dims.len())
            .map(|i| {
                let [x, y, z] = dims.coords(i);
                hu(x, y, z)
            })
            .collect();
        let (v, _) = CtVolume::new(g, data).unwrap();
        let mut m = LabelMask::empty(g, MaskSchema::Pericardium).unwrap();
        for i in 0..dims.len() {
            let [x, y, z] = dims.coords(i);
            if (2..18).contains(&x) && (1..17).contains(&y) && (1..9).contains(&z) {
                m.set(i, if x < 10 { 1 } else { 2 }).unwrap();
            }
        }
        (v, m)
    }

    #[test]
    fn constant_crop_gives_one_hot_histogram() {
        let (v, m) = scene(|_, _, _| 40);
        let f = stub_featurize(&v, &m).unwrap();
        assert_eq!(f.len(), DEEP_FEATURE_DIM);
        let crop = (16 * 16 * 8) as f64;
        let bin = hu_bin(40);
        for (k, &h) in f[..HISTOGRAM_BINS].iter().enumerate() {
            assert_eq!(h, if k == bin { crop } else { 0.0 });
        }
        assert!(f[HISTOGRAM_BINS..].iter().all(|&p| p == 40.0));
    }

    #[test]
    fn pooling_ignores_order_within_a_cell() {
        // Crop is 16×16×8, so cells are 2×2×2 voxels starting at (2, 1, 1).
        let (v, m) = scene(|x, y, z| ((x * 7 + y * 13 + z * 29) % 200) as i16);
        let a = stub_featurize(&v, &m).unwrap();
        let (mut v2, _) = scene(|x, y, z| ((x * 7 + y * 13 + z * 29) % 200) as i16);
        let d = v2.dims();
        let (i, j) = (d.index(2, 1, 1), d.index(3, 2, 2));
        let (hi, hj) = (v2.data()[i], v2.data()[j]);
        v2.set(i, hj);
        v2.set(j, hi);
        assert_eq!(a, stub_featurize(&v2, &m).unwrap());
    }

    #[test]
    fn hu_bins_cover_clamp_range() {
        assert_eq!(hu_bin(HU_MIN), 0);
        assert_eq!(hu_bin(HU_MIN + 19), 0);
        assert_eq!(hu_bin(HU_MIN + 20), 1);
        assert_eq!(hu_bin(HU_MAX), HISTOGRAM_BINS - 1);
    }

    #[test]
    fn cells_are_never_empty() {
        for n in 1..12 {
            let mut covered = vec![false; n];
            for i in 0..8 {
                let r = cell_range(i, 8, n);
                assert!(!r.is_empty() && r.end <= n);
                for k in r {
                    covered[k] = true;
                }
            }
            assert!(covered.iter().all(|&c| c));
        }
    }

    #[test]
    fn empty_heart_is_an_error() {
        let (v, m) = scene(|_, _, _| 0);
        let empty = LabelMask::empty(m.geometry, MaskSchema::Pericardium).unwrap();
        assert!(matches!(stub_featurize(&v, &empty), Err(FeatureError::EmptyMask)));
    }

    fn record(id: &str, x: f64, flag: bool) -> FeatureRecord {
        let mut b = BiomarkerVector::default();
        for bm in Biomarker::ALL {
            b.set(bm, Measurement::ok(x * (bm.index() as f64 + 1.0)));
        }
        b.set(Biomarker::Pfatv, Measurement::ok(7.0));
        if flag {
            b.set(Biomarker::Ati, Measurement::failed());
        }
        FeatureRecord {
            scan_id: id.into(),
            x1: (0..DEEP_FEATURE_DIM).map(|k| x + k as f64).collect(),
            biomarkers: b,
            label: Some(x > 1.0),
        }
    }

    #[test]
    fn normalizer_centres_and_inverts() {
        let recs: Vec<_> = (0..5).map(|i| record(&format!("s{i}"), i as f64 * 0.7, i == 3)).collect();
        let stats = fit_normalizer(&recs).unwrap();
        assert_eq!(stats.biomarker_std[Biomarker::Pfatv.index()], STD_FLOOR);
        let z: Vec<_> = recs.iter().map(|r| stats.apply(r)).collect();
        for b in Biomarker::ALL {
            let mean: f64 = z.iter().map(|r| r.biomarkers.value(b)).sum::<f64>() / z.len() as f64;
            if b != Biomarker::Ati {
                assert!(mean.abs() < 1e-9, "{b}: {mean}");
            }
        }
        assert_eq!(z[3].biomarkers.get(Biomarker::Ati), Measurement { value: 0.0, status: Status::Failed });
        assert!(z.iter().all(|r| r.biomarkers.value(Biomarker::Pfatv) == 0.0));
        for (r, zr) in recs.iter().zip(&z) {
            let back = stats.invert(zr);
            for b in Biomarker::ALL {
                if r.biomarkers.status(b).is_ok() {
                    assert!((back.biomarkers.value(b) - r.biomarkers.value(b)).abs() < 1e-9);
                }
            }
            for (a, c) in back.x1.iter().zip(&r.x1) {
                assert!((a - c).abs() < 1e-9);
            }
        }
        assert!(matches!(
            fit_normalizer(&recs[..1]),
            Err(FeatureError::TooFewRecords { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let mut recs: Vec<_> = (0..3).map(|i| record(&format!("s{i}"), 0.1 + i as f64 / 3.0, i == 1)).collect();
        recs[2].label = None;
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &recs).unwrap();
        assert_eq!(read_features_csv(buf.as_slice()).unwrap(), recs);
        let mut buf = Vec::new();
        write_features_json(&mut buf, &recs).unwrap();
        assert_eq!(read_features_json(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn short_row_and_duplicates_are_rejected() {
        let recs = vec![record("a", 1.0, false), record("a", 2.0, false)];
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &recs).unwrap();
        assert!(matches!(
            read_features_csv(buf.as_slice()),
            Err(FeatureError::DuplicateScanId(id)) if id == "a"
        ));

        let mut short = recs[0].clone();
        short.x1.pop();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        let mut row = vec![short.scan_id.clone()];
        row.extend(short.x1.iter().map(|v| v.to_string()));
        row.extend(biomarker_cells(&short.biomarkers));
        row.push("1".into());
        let doc = format!("{header}\n{}\n", row.join(","));
        assert!(matches!(
            read_features_csv(doc.as_bytes()),
            Err(FeatureError::ArityMismatch { line: 2, .. })
        ));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut r = record("a", 1.0, false);
        r.x1[5] = f64::NAN;
        assert!(matches!(r.validate(), Err(FeatureError::NonFiniteValue { column, .. }) if column == "x1_5"));
    }
}
