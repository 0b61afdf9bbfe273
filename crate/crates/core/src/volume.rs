//! Volumetric data model and the `.ctqh` volume/mask file format.
//!
//! A volume on disk is a small JSON header plus a raw little-endian payload
//! stored next to it. Voxels are linearised x-fastest:
//! `index = x + nx * (y + ny * z)`. Every module goes through [`Dims`] for
//! indexing so the ordering is defined in exactly one place.
//!
//! Axes follow patient orientation: x runs left-right, y anterior-posterior
//! and z inferior-superior.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HU_MIN: i16 = -1024;
pub const HU_MAX: i16 = 4095;

const MAGIC: &str = "CTQV";
const FORMAT_VERSION: u32 = 1;
const ORDER: &str = "x-fastest";
const ENDIANNESS: &str = "little";

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("malformed header {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("checksum mismatch: header says {expected:08x}, payload hashes to {actual:08x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("illegal label {value} at voxel {index} for {schema:?} schema")]
    IllegalLabel {
        index: usize,
        value: u8,
        schema: MaskSchema,
    },
    #[error("invalid volume geometry: {0}")]
    InvalidGeometry(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Grid extent `(nx, ny, nz)` and the single x-fastest index mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.nx;
        let rest = index / self.nx;
        [x, rest % self.ny, rest / self.ny]
    }

    /// Index of a signed coordinate, or `None` outside the grid.
    #[inline]
    pub fn checked_index(&self, x: i64, y: i64, z: i64) -> Option<usize> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.nx || y >= self.ny || z >= self.nz {
            return None;
        }
        Some(self.index(x, y, z))
    }

    pub fn axis_len(&self, axis: Axis) -> usize {
        self.as_array()[axis as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

/// Grid placement shared by volumes and masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: Dims, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        let geometry = Self {
            dims,
            spacing,
            origin,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    fn validate(&self) -> Result<(), VolumeError> {
        if self.dims.nx == 0 || self.dims.ny == 0 || self.dims.nz == 0 {
            return Err(VolumeError::InvalidGeometry(format!(
                "dims must be >= 1, got {:?}",
                self.dims.as_array()
            )));
        }
        if self.spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(VolumeError::InvalidGeometry(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::InvalidGeometry("origin must be finite".into()));
        }
        Ok(())
    }

    /// World position (mm) of a voxel centre.
    #[inline]
    pub fn world(&self, voxel: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + voxel[0] as f64 * self.spacing[0],
            self.origin[1] + voxel[1] as f64 * self.spacing[1],
            self.origin[2] + voxel[2] as f64 * self.spacing[2],
        ]
    }

    /// Voxel whose box contains the world point, if inside the grid.
    #[inline]
    pub fn nearest_voxel(&self, p: [f64; 3]) -> Option<usize> {
        let i = ((p[0] - self.origin[0]) / self.spacing[0]).round() as i64;
        let j = ((p[1] - self.origin[1]) / self.spacing[1]).round() as i64;
        let k = ((p[2] - self.origin[2]) / self.spacing[2]).round() as i64;
        self.dims.checked_index(i, j, k)
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Same dims and spacing, bit for bit.
    pub fn aligned_with(&self, other: &Geometry) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }
}

/// CT volume of Hounsfield-unit samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    pub geometry: Geometry,
    data: Vec<i16>,
}

impl CtVolume {
    /// Builds a volume, clamping HU into `[HU_MIN, HU_MAX]`.
    /// Returns the volume and the number of clamped samples.
    pub fn new(geometry: Geometry, mut data: Vec<i16>) -> Result<(Self, usize), VolumeError> {
        geometry.validate()?;
        if data.len() != geometry.dims.len() {
            return Err(VolumeError::SizeMismatch {
                expected: geometry.dims.len(),
                found: data.len(),
            });
        }
        let mut clamped = 0usize;
        for v in data.iter_mut() {
            let c = (*v).clamp(HU_MIN, HU_MAX);
            if c != *v {
                *v = c;
                clamped += 1;
            }
        }
        Ok((Self { geometry, data }, clamped))
    }

    pub fn filled(geometry: Geometry, hu: i16) -> Result<Self, VolumeError> {
        let n = geometry.dims.len();
        Self::new(geometry, vec![hu; n]).map(|(v, _)| v)
    }

    pub fn dims(&self) -> Dims {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> i16 {
        self.data[self.geometry.dims.index(x, y, z)]
    }

    /// Writes one sample, clamped to the HU range.
    pub fn set(&mut self, index: usize, hu: i16) {
        self.data[index] = hu.clamp(HU_MIN, HU_MAX);
    }
}

pub fn voxel_volume_mm3(v: &CtVolume) -> f64 {
    v.geometry.voxel_volume_mm3()
}

/// Label vocabulary of one segmentation output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSchema {
    /// background=0, pericardium=1, chambers=2
    Pericardium,
    /// background=0, coronary=1, aortic calcium=2
    Calcium,
    /// background=0, aorta=1
    Aorta,
    /// background=0, left=1, right=2
    Lungs,
}

impl MaskSchema {
    pub fn max_label(self) -> u8 {
        match self {
            MaskSchema::Aorta => 1,
            MaskSchema::Pericardium | MaskSchema::Calcium | MaskSchema::Lungs => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskSchema::Pericardium => "pericardium",
            MaskSchema::Calcium => "calcium",
            MaskSchema::Aorta => "aorta",
            MaskSchema::Lungs => "lungs",
        }
    }
}

pub mod labels {
    pub const BACKGROUND: u8 = 0;
    pub const PERICARDIUM: u8 = 1;
    pub const CHAMBERS: u8 = 2;
    pub const CORONARY: u8 = 1;
    pub const AORTIC_CALCIUM: u8 = 2;
    pub const AORTA: u8 = 1;
    pub const LEFT_LUNG: u8 = 1;
    pub const RIGHT_LUNG: u8 = 2;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub geometry: Geometry,
    pub schema: MaskSchema,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(geometry: Geometry, schema: MaskSchema, data: Vec<u8>) -> Result<Self, VolumeError> {
        geometry.validate()?;
        if data.len() != geometry.dims.len() {
            return Err(VolumeError::SizeMismatch {
                expected: geometry.dims.len(),
                found: data.len(),
            });
        }
        check_labels(&data, schema)?;
        Ok(Self {
            geometry,
            schema,
            data,
        })
    }

    pub fn empty(geometry: Geometry, schema: MaskSchema) -> Result<Self, VolumeError> {
        let n = geometry.dims.len();
        Self::new(geometry, schema, vec![labels::BACKGROUND; n])
    }

    pub fn dims(&self) -> Dims {
        self.geometry.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.geometry.dims.index(x, y, z)]
    }

    pub fn set(&mut self, index: usize, label: u8) -> Result<(), VolumeError> {
        if label > self.schema.max_label() {
            return Err(VolumeError::IllegalLabel {
                index,
                value: label,
                schema: self.schema,
            });
        }
        self.data[index] = label;
        Ok(())
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    /// Binary selection of the given labels.
    pub fn select(&self, wanted: &[u8]) -> Vec<bool> {
        self.data.iter().map(|l| wanted.contains(l)).collect()
    }
}

fn check_labels(data: &[u8], schema: MaskSchema) -> Result<(), VolumeError> {
    let max = schema.max_label();
    match data.iter().position(|&l| l > max) {
        Some(index) => Err(VolumeError::IllegalLabel {
            index,
            value: data[index],
            schema,
        }),
        None => Ok(()),
    }
}

/// On-disk `.ctqh` header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub magic: String,
    pub version: u32,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: ElementType,
    pub order: String,
    pub endianness: String,
    pub data_file: String,
    pub crc32: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementType {
    #[serde(rename = "i16")]
    I16,
    #[serde(rename = "u8")]
    U8,
}

impl ElementType {
    fn size(self) -> usize {
        match self {
            ElementType::I16 => 2,
            ElementType::U8 => 1,
        }
    }
}

impl VolumeHeader {
    fn geometry(&self) -> Result<Geometry, String> {
        let [nx, ny, nz] = self.dims;
        Geometry::new(Dims::new(nx, ny, nz), self.spacing_mm, self.origin_mm).map_err(|e| e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> VolumeError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            VolumeError::MissingFile(path.to_path_buf())
        } else {
            VolumeError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> VolumeError {
    VolumeError::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn data_file_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

fn read_payload(
    header_path: &Path,
    expected_type: ElementType,
) -> Result<(VolumeHeader, Geometry, Vec<u8>), VolumeError> {
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| malformed(header_path, e.to_string()))?;
    if header.magic != MAGIC {
        return Err(malformed(header_path, format!("bad magic {:?}", header.magic)));
    }
    if header.version != FORMAT_VERSION {
        return Err(malformed(header_path, format!("unsupported version {}", header.version)));
    }
    if header.order != ORDER || header.endianness != ENDIANNESS {
        return Err(malformed(
            header_path,
            format!("unsupported layout {}/{}", header.order, header.endianness),
        ));
    }
    if header.dtype != expected_type {
        return Err(malformed(header_path, format!("expected dtype {expected_type:?}, found {:?}", header.dtype)));
    }
    let geometry = header.geometry().map_err(|e| malformed(header_path, e))?;
    let expected_crc = u32::from_str_radix(&header.crc32, 16)
        .map_err(|_| malformed(header_path, format!("bad crc32 field {:?}", header.crc32)))?;

    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let data_path = dir.join(&header.data_file);
    let payload = fs::read(&data_path).map_err(io_err(&data_path))?;
    let expected = geometry.dims.len() * header.dtype.size();
    if payload.len() != expected {
        return Err(VolumeError::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let actual = crc32fast::hash(&payload);
    if actual != expected_crc {
        return Err(VolumeError::ChecksumMismatch {
            expected: expected_crc,
            actual,
        });
    }
    Ok((header, geometry, payload))
}

fn write_payload(
    header_path: &Path,
    geometry: &Geometry,
    dtype: ElementType,
    payload: &[u8],
) -> Result<(), VolumeError> {
    let data_path = data_file_for(header_path);
    let data_file = data_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| malformed(header_path, "header path has no usable file name"))?
        .to_string();
    let header = VolumeHeader {
        magic: MAGIC.to_string(),
        version: FORMAT_VERSION,
        dims: geometry.dims.as_array(),
        spacing_mm: geometry.spacing,
        origin_mm: geometry.origin,
        dtype,
        order: ORDER.to_string(),
        endianness: ENDIANNESS.to_string(),
        data_file,
        crc32: format!("{:08x}", crc32fast::hash(payload)),
    };
    let mut text = serde_json::to_string_pretty(&header).expect("header serialises");
    text.push('\n');
    fs::write(&data_path, payload).map_err(|source| VolumeError::Io {
        path: data_path.clone(),
        source,
    })?;
    fs::write(header_path, text).map_err(|source| VolumeError::Io {
        path: header_path.to_path_buf(),
        source,
    })
}

/// Loads a CT volume and reports how many samples were clamped.
pub fn load_volume_report(header_path: &Path) -> Result<(CtVolume, usize), VolumeError> {
    let (_, geometry, payload) = read_payload(header_path, ElementType::I16)?;
    let data = payload
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    let (volume, clamped) = CtVolume::new(geometry, data)?;
    if clamped > 0 {
        log::warn!(
            "{}: clamped {clamped} samples into [{HU_MIN}, {HU_MAX}] HU",
            header_path.display()
        );
    }
    Ok((volume, clamped))
}

pub fn load_volume(header_path: &Path) -> Result<CtVolume, VolumeError> {
    load_volume_report(header_path).map(|(v, _)| v)
}

/// Writes `<header_path>` and its payload `<stem>.raw` alongside it.
pub fn save_volume(v: &CtVolume, header_path: &Path) -> Result<(), VolumeError> {
    let payload: Vec<u8> = v.data.iter().flat_map(|s| s.to_le_bytes()).collect();
    write_payload(header_path, &v.geometry, ElementType::I16, &payload)
}

pub fn load_mask(header_path: &Path, schema: MaskSchema) -> Result<LabelMask, VolumeError> {
    let (_, geometry, payload) = read_payload(header_path, ElementType::U8)?;
    LabelMask::new(geometry, schema, payload)
}

pub fn save_mask(m: &LabelMask, header_path: &Path) -> Result<(), VolumeError> {
    write_payload(header_path, &m.geometry, ElementType::U8, &m.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(dims: [usize; 3], spacing: [f64; 3]) -> Geometry {
        Geometry::new(Dims::new(dims[0], dims[1], dims[2]), spacing, [0.0; 3]).unwrap()
    }

    #[test]
    fn voxel_volume_arithmetic() {
        let g = |s| CtVolume::filled(geom([1, 1, 1], s), 0).unwrap();
        assert_eq!(voxel_volume_mm3(&g([1.0, 1.0, 1.0])), 1.0);
        assert_eq!(voxel_volume_mm3(&g([0.5, 0.5, 2.0])), 0.5);
        assert!((voxel_volume_mm3(&g([0.7, 0.7, 3.0])) - 1.47).abs() < 1e-12);
    }

    #[test]
    fn index_is_x_fastest() {
        let d = Dims::new(4, 3, 2);
        assert_eq!(d.index(1, 0, 0), 1);
        assert_eq!(d.index(0, 1, 0), 4);
        assert_eq!(d.index(0, 0, 1), 12);
        assert_eq!(d.coords(d.index(3, 2, 1)), [3, 2, 1]);
        assert_eq!(d.checked_index(-1, 0, 0), None);
        assert_eq!(d.checked_index(4, 0, 0), None);
    }

    #[test]
    fn header_declaring_4x4x2_gives_32_voxels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ctqh");
        let v = CtVolume::filled(geom([4, 4, 2], [1.0; 3]), 40).unwrap();
        save_volume(&v, &path).unwrap();
        assert_eq!(fs::metadata(dir.path().join("v.raw")).unwrap().len(), 64);
        let back = load_volume(&path).unwrap();
        assert_eq!(back.data().len(), 32);
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ctqh");
        save_volume(&CtVolume::filled(geom([4, 4, 2], [1.0; 3]), 7).unwrap(), &path).unwrap();
        let raw = dir.path().join("v.raw");
        let mut bytes = fs::read(&raw).unwrap();
        bytes.pop();
        fs::write(&raw, bytes).unwrap();
        assert!(matches!(
            load_volume(&path),
            Err(VolumeError::SizeMismatch { expected: 64, found: 63 })
        ));
    }

    #[test]
    fn single_voxel_payload_is_two_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.ctqh");
        save_volume(&CtVolume::filled(geom([1, 1, 1], [1.0; 3]), 0).unwrap(), &path).unwrap();
        assert_eq!(fs::read(dir.path().join("one.raw")).unwrap(), vec![0, 0]);
    }

    #[test]
    fn spacing_survives_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ctqh");
        let mut g = geom([2, 2, 2], [0.7, 0.7, 3.0]);
        g.origin = [-123.456789012345, 0.1, 1e-7];
        save_volume(&CtVolume::filled(g, -5).unwrap(), &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back.geometry, g);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ctqh");
        save_volume(&CtVolume::filled(geom([3, 3, 3], [1.0; 3]), 100).unwrap(), &path).unwrap();
        let raw = dir.path().join("c.raw");
        let mut bytes = fs::read(&raw).unwrap();
        bytes[10] ^= 0x40;
        fs::write(&raw, bytes).unwrap();
        assert!(matches!(load_volume(&path), Err(VolumeError::ChecksumMismatch { .. })));
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("absent.ctqh");
        assert!(matches!(load_volume(&path), Err(VolumeError::MissingFile(_))));
        save_volume(&CtVolume::filled(geom([1, 1, 1], [1.0; 3]), 0).unwrap(), &path).unwrap();
        fs::remove_file(dir.path().join("absent.raw")).unwrap();
        assert!(matches!(load_volume(&path), Err(VolumeError::MissingFile(_))));
    }

    #[test]
    fn malformed_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ctqh");
        fs::write(&path, "{\"magic\": \"CTQV\"").unwrap();
        assert!(matches!(load_volume(&path), Err(VolumeError::MalformedHeader { .. })));
    }

    #[test]
    fn out_of_range_hu_is_clamped_and_counted() {
        let g = geom([3, 1, 1], [1.0; 3]);
        let (v, clamped) = CtVolume::new(g, vec![-2000, 0, 5000]).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(v.data(), &[HU_MIN, 0, HU_MAX]);
    }

    #[test]
    fn lungs_mask_with_label_3_is_illegal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lungs.ctqh");
        let g = geom([2, 2, 1], [1.0; 3]);
        // Saved under a permissive schema, then read back as lungs.
        let mut m = LabelMask::empty(g, MaskSchema::Lungs).unwrap();
        m.data[3] = 3;
        save_mask(&m, &path).unwrap();
        assert!(matches!(
            load_mask(&path, MaskSchema::Lungs),
            Err(VolumeError::IllegalLabel { index: 3, value: 3, .. })
        ));
    }

    #[test]
    fn background_mask_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bg.ctqh");
        let m = LabelMask::empty(geom([5, 4, 3], [0.8, 0.8, 2.5]), MaskSchema::Aorta).unwrap();
        save_mask(&m, &path).unwrap();
        assert_eq!(load_mask(&path, MaskSchema::Aorta).unwrap(), m);
    }

    #[test]
    fn mask_dtype_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ctqh");
        save_volume(&CtVolume::filled(geom([2, 2, 2], [1.0; 3]), 0).unwrap(), &path).unwrap();
        assert!(matches!(
            load_mask(&path, MaskSchema::Aorta),
            Err(VolumeError::MalformedHeader { .. })
        ));
    }
}
