//! Biomarker tables: CSV with a parallel status column group, and JSON with
//! named fields.

use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Biomarker, BiomarkerVector, Measurement, Status, BIOMARKER_COUNT};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Format { line: u64, reason: String },
}

/// One scan's biomarkers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerRow {
    pub scan_id: String,
    pub biomarkers: BiomarkerVector,
}

/// Name-keyed form used for JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedBiomarkers(IndexMap<Biomarker, Measurement>);

impl From<BiomarkerVector> for NamedBiomarkers {
    fn from(v: BiomarkerVector) -> Self {
        NamedBiomarkers(Biomarker::ALL.iter().map(|&b| (b, v.get(b))).collect())
    }
}

impl TryFrom<NamedBiomarkers> for BiomarkerVector {
    type Error = String;

    fn try_from(n: NamedBiomarkers) -> Result<Self, Self::Error> {
        let mut out = BiomarkerVector::default();
        for b in Biomarker::ALL {
            let m = n.0.get(&b).ok_or_else(|| format!("missing biomarker {b}"))?;
            out.set(b, *m);
        }
        if n.0.len() != BIOMARKER_COUNT {
            return Err(format!("expected {BIOMARKER_COUNT} biomarkers, got {}", n.0.len()));
        }
        Ok(out)
    }
}

pub fn csv_header() -> Vec<String> {
    let mut h = vec!["scan_id".to_string()];
    h.extend(Biomarker::ALL.iter().map(|b| b.name().to_string()));
    h.extend(Biomarker::ALL.iter().map(|b| format!("{}_status", b.name())));
    h
}

/// Value then status cells for one vector, in column order.
pub(crate) fn biomarker_cells(v: &BiomarkerVector) -> Vec<String> {
    let mut cells: Vec<String> = v.values().iter().map(|x| x.to_string()).collect();
    cells.extend(v.statuses().iter().map(|s| s.as_str().to_string()));
    cells
}

/// Parses 18 value cells followed by 18 status cells.
pub(crate) fn parse_biomarker_cells(cells: &[&str], line: u64) -> Result<BiomarkerVector, TableError> {
    let bad = |reason: String| TableError::Format { line, reason };
    if cells.len() != 2 * BIOMARKER_COUNT {
        return Err(bad(format!("expected {} biomarker cells, got {}", 2 * BIOMARKER_COUNT, cells.len())));
    }
    let mut out = BiomarkerVector::default();
    for (k, b) in Biomarker::ALL.iter().enumerate() {
        let value: f64 = cells[k]
            .trim()
            .parse()
            .map_err(|_| bad(format!("{b}: not a number: {:?}", cells[k])))?;
        let status: Status = cells[BIOMARKER_COUNT + k].trim().parse().map_err(bad)?;
        out.set(*b, Measurement { value, status });
    }
    Ok(out)
}

pub fn write_csv<W: Write>(w: W, rows: &[BiomarkerRow]) -> Result<(), TableError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header())?;
    for r in rows {
        let mut rec = vec![r.scan_id.clone()];
        rec.extend(biomarker_cells(&r.biomarkers));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<BiomarkerRow>, TableError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != csv_header() {
        return Err(TableError::Format {
            line: 1,
            reason: "unexpected biomarker header".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let cells: Vec<&str> = rec.iter().collect();
        rows.push(BiomarkerRow {
            scan_id: cells[0].to_string(),
            biomarkers: parse_biomarker_cells(&cells[1..], line)?,
        });
    }
    Ok(rows)
}

pub fn write_json<W: Write>(w: W, rows: &[BiomarkerRow]) -> Result<(), TableError> {
    serde_json::to_writer_pretty(w, rows)?;
    Ok(())
}

pub fn read_json<R: Read>(r: R) -> Result<Vec<BiomarkerRow>, TableError> {
    Ok(serde_json::from_reader(r)?)
}
