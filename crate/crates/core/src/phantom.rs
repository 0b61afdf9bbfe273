//! Synthetic scenes with analytically known biomarkers.
//!
//! A [`PhantomSpec`] describes a heart ellipsoid with a fat shell and a
//! chamber, an aorta tube along a path, box-shaped calcium inserts and two
//! lung ellipsoids. [`generate`] voxelizes it into a CT volume plus the four
//! label masks, and derives [`GroundTruth`] from the continuous geometry.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarkers::{Biomarker, BiomarkerVector, Measurement, Status};
use crate::volume::{labels, CtVolume, Dims, Geometry, LabelMask, MaskSchema, VolumeError, HU_MAX, HU_MIN};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("{0} does not fit inside the grid")]
    OutOfBounds(String),
    #[error("{0} overlap")]
    Overlap(String),
    #[error("invalid phantom: {0}")]
    Invalid(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Phantom specs shipped with the library, by name.
pub const BUNDLED: [(&str, &str); 5] = [
    ("baseline", include_str!("../phantoms/baseline.json")),
    ("anisotropic_arch", include_str!("../phantoms/anisotropic_arch.json")),
    ("coarse_slices", include_str!("../phantoms/coarse_slices.json")),
    ("noisy_oblique", include_str!("../phantoms/noisy_oblique.json")),
    ("tortuous", include_str!("../phantoms/tortuous.json")),
];

pub fn bundled(name: &str) -> Option<PhantomSpec> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| PhantomSpec::from_json(text).expect("bundled phantom specs parse"))
}

fn default_background() -> i16 {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    #[serde(default)]
    pub origin_mm: [f64; 3],
    #[serde(default = "default_background")]
    pub background_hu: i16,
    #[serde(default)]
    pub noise_sigma_hu: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub heart: Option<HeartSpec>,
    #[serde(default)]
    pub aorta: Option<AortaSpec>,
    #[serde(default)]
    pub calcium: Vec<InsertSpec>,
    #[serde(default)]
    pub lungs: Vec<LungSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeartSpec {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    /// In-plane rotation about z, applied to the heart and the chamber.
    #[serde(default)]
    pub rotation_deg: f64,
    pub fat_shell_mm: f64,
    pub fat_hu: i16,
    pub myocardium_hu: i16,
    pub chamber: ChamberSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChamberSpec {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    pub hu: i16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathSpec {
    Polyline(Vec<[f64; 3]>),
    /// Circular arc around `center_mm` in the plane spanned by `axis_u` and
    /// `axis_v` (orthonormal), from `start_deg` to `end_deg`.
    Arc {
        center_mm: [f64; 3],
        radius_mm: f64,
        axis_u: [f64; 3],
        axis_v: [f64; 3],
        start_deg: f64,
        end_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AortaSpec {
    pub path: PathSpec,
    pub radius_mm: f64,
    pub hu: i16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalciumKind {
    Coronary,
    Aortic,
}

impl CalciumKind {
    pub fn label(self) -> u8 {
        match self {
            CalciumKind::Coronary => labels::CORONARY,
            CalciumKind::Aortic => labels::AORTIC_CALCIUM,
        }
    }
}

fn default_halo_hu() -> i16 {
    90
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsertSpec {
    pub kind: CalciumKind,
    pub min_mm: [f64; 3],
    pub max_mm: [f64; 3],
    pub hu: i16,
    /// Width of a sub-threshold rim carrying the same label.
    #[serde(default)]
    pub halo_mm: f64,
    #[serde(default = "default_halo_hu")]
    pub halo_hu: i16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LungSide {
    Left,
    Right,
}

impl LungSide {
    pub fn label(self) -> u8 {
        match self {
            LungSide::Left => labels::LEFT_LUNG,
            LungSide::Right => labels::RIGHT_LUNG,
        }
    }
}

fn default_high_hu() -> i16 {
    -100
}
fn default_low_hu() -> i16 {
    -980
}
fn default_mid_hu() -> i16 {
    -750
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LungSpec {
    pub side: LungSide,
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    pub high_fraction: f64,
    pub low_fraction: f64,
    #[serde(default = "default_high_hu")]
    pub high_hu: i16,
    #[serde(default = "default_low_hu")]
    pub low_hu: i16,
    #[serde(default = "default_mid_hu")]
    pub mid_hu: i16,
}

impl PhantomSpec {
    /// Background-only scene.
    pub fn empty(dims: [usize; 3], spacing_mm: [f64; 3]) -> Self {
        Self {
            dims,
            spacing_mm,
            origin_mm: [0.0; 3],
            background_hu: default_background(),
            noise_sigma_hu: 0.0,
            seed: 0,
            heart: None,
            aorta: None,
            calcium: Vec::new(),
            lungs: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn geometry(&self) -> Result<Geometry, VolumeError> {
        Geometry::new(
            Dims::new(self.dims[0], self.dims[1], self.dims[2]),
            self.spacing_mm,
            self.origin_mm,
        )
    }

    /// Agatston weight bands reached by the calcium inserts.
    pub fn covered_weight_bands(&self) -> BTreeSet<u8> {
        self.calcium.iter().filter_map(|c| band_of(c.hu)).collect()
    }
}

/// Weight band of a peak HU, written out independently of the scorer.
fn band_of(hu: i16) -> Option<u8> {
    if hu >= 400 {
        Some(4)
    } else if hu >= 300 {
        Some(3)
    } else if hu >= 200 {
        Some(2)
    } else if hu >= 130 {
        Some(1)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Tolerance {
    Exact,
    Absolute(f64),
    Relative(f64),
}

impl Tolerance {
    pub fn accepts(self, expected: f64, actual: f64) -> bool {
        match self {
            Tolerance::Exact => expected == actual,
            Tolerance::Absolute(t) => (actual - expected).abs() <= t,
            Tolerance::Relative(r) => (actual - expected).abs() <= r * expected.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub value: f64,
    pub status: Status,
    pub tolerance: Tolerance,
}

impl Expectation {
    fn ok(value: f64, tolerance: Tolerance) -> Self {
        Self {
            value,
            status: Status::Ok,
            tolerance,
        }
    }

    fn flagged(status: Status) -> Self {
        Self {
            value: 0.0,
            status,
            tolerance: Tolerance::Exact,
        }
    }

    pub fn accepts(&self, m: Measurement) -> bool {
        if m.status != self.status {
            return false;
        }
        self.status != Status::Ok || self.tolerance.accepts(self.value, m.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub biomarker: Biomarker,
    pub expected: Expectation,
    pub actual: Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub biomarkers: IndexMap<Biomarker, Expectation>,
}

impl GroundTruth {
    pub fn get(&self, b: Biomarker) -> Expectation {
        self.biomarkers[&b]
    }

    pub fn deviations(&self, v: &BiomarkerVector) -> Vec<Deviation> {
        Biomarker::ALL
            .iter()
            .filter_map(|&b| {
                let e = self.get(b);
                let m = v.get(b);
                (!e.accepts(m)).then_some(Deviation {
                    biomarker: b,
                    expected: e,
                    actual: m,
                })
            })
            .collect()
    }
}

/// Generated scene.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: CtVolume,
    pub pericardium: LabelMask,
    pub calcium: LabelMask,
    pub aorta: LabelMask,
    pub lungs: LabelMask,
    pub truth: GroundTruth,
}

const ARC_SEGMENT_DEG: f64 = 1.0;
const VOLUME_TOLERANCE: f64 = 0.05;
const DIAMETER_TOLERANCE_MM: f64 = 1.0;
const AXIS_TOLERANCE: f64 = 0.02;
const RATIO_TOLERANCE: f64 = 0.02;
const TORTUOSITY_TOLERANCE: f64 = 0.03;
const HU_TOLERANCE: f64 = 1.0;

fn ellipsoid_volume(ax: [f64; 3]) -> f64 {
    4.0 / 3.0 * PI * ax[0] * ax[1] * ax[2]
}

/// Point expressed in an ellipsoid's frame (rotation about z), scaled by the
/// semi-axes; inside when the squared norm is ≤ 1.
fn ellipsoid_level(p: [f64; 3], center: [f64; 3], axes: [f64; 3], rot: f64) -> f64 {
    let (dx, dy, dz) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
    let (s, c) = rot.sin_cos();
    let x = c * dx + s * dy;
    let y = -s * dx + c * dy;
    (x / axes[0]).powi(2) + (y / axes[1]).powi(2) + (dz / axes[2]).powi(2)
}

/// Half-extents of the axis-aligned box around a z-rotated ellipsoid.
fn ellipsoid_half_extent(axes: [f64; 3], rot: f64) -> [f64; 3] {
    let (s, c) = rot.sin_cos();
    [
        (axes[0] * axes[0] * c * c + axes[1] * axes[1] * s * s).sqrt(),
        (axes[0] * axes[0] * s * s + axes[1] * axes[1] * c * c).sqrt(),
        axes[2],
    ]
}

impl PathSpec {
    pub fn points(&self) -> Vec<[f64; 3]> {
        match self {
            PathSpec::Polyline(p) => p.clone(),
            PathSpec::Arc {
                center_mm,
                radius_mm,
                axis_u,
                axis_v,
                start_deg,
                end_deg,
            } => {
                let n = ((end_deg - start_deg).abs() / ARC_SEGMENT_DEG).ceil().max(1.0) as usize;
                (0..=n)
                    .map(|k| {
                        let t = (start_deg + (end_deg - start_deg) * k as f64 / n as f64).to_radians();
                        let (s, c) = t.sin_cos();
                        [0, 1, 2].map(|a| center_mm[a] + radius_mm * (c * axis_u[a] + s * axis_v[a]))
                    })
                    .collect()
            }
        }
    }

    pub fn arc_length_mm(&self) -> f64 {
        match self {
            PathSpec::Polyline(p) => p.windows(2).map(|w| dist(w[0], w[1])).sum(),
            PathSpec::Arc {
                radius_mm,
                start_deg,
                end_deg,
                ..
            } => radius_mm * (end_deg - start_deg).abs().to_radians(),
        }
    }

    pub fn chord_mm(&self) -> f64 {
        let p = self.points();
        dist(p[0], *p.last().unwrap())
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Tube membership with flat caps: within `r` of the path, unless the
/// closest path point is an end and lies behind the point's projection.
fn in_tube(p: [f64; 3], path: &[[f64; 3]], r: f64) -> bool {
    let last = path.len() - 2;
    let mut best: Option<(f64, usize, f64)> = None;
    for (k, w) in path.windows(2).enumerate() {
        let d = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
        let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if len2 == 0.0 {
            continue;
        }
        let t = ((p[0] - w[0][0]) * d[0] + (p[1] - w[0][1]) * d[1] + (p[2] - w[0][2]) * d[2]) / len2;
        let tc = t.clamp(0.0, 1.0);
        let q = [w[0][0] + tc * d[0], w[0][1] + tc * d[1], w[0][2] + tc * d[2]];
        let dq = dist(p, q);
        if best.is_none_or(|(bd, _, _)| dq < bd) {
            best = Some((dq, k, t));
        }
    }
    match best {
        Some((dq, k, t)) => dq <= r && !((k == 0 && t < 0.0) || (k == last && t > 1.0)),
        None => false,
    }
}

struct Bounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Bounds {
    fn of(g: &Geometry) -> Self {
        let d = g.dims.as_array();
        Self {
            lo: [0, 1, 2].map(|a| g.origin[a] - 0.5 * g.spacing[a]),
            hi: [0, 1, 2].map(|a| g.origin[a] + (d[a] as f64 - 0.5) * g.spacing[a]),
        }
    }

    fn contains_box(&self, lo: [f64; 3], hi: [f64; 3]) -> bool {
        (0..3).all(|a| lo[a] >= self.lo[a] && hi[a] <= self.hi[a])
    }
}

/// Indices of voxels whose centres fall in the world box `[lo, hi]`, padded
/// by one voxel so callers can apply their exact test.
fn voxels_in_box(g: &Geometry, lo: [f64; 3], hi: [f64; 3]) -> Vec<usize> {
    let d = g.dims.as_array();
    let range = |a: usize| {
        let first = ((lo[a] - g.origin[a]) / g.spacing[a]).ceil() - 1.0;
        let first = first.max(0.0) as usize;
        let last = ((hi[a] - g.origin[a]) / g.spacing[a]).floor() + 1.0;
        if last < 0.0 {
            return 0..0;
        }
        first..(last as usize + 1).min(d[a])
    };
    let (rx, ry, rz) = (range(0), range(1), range(2));
    let mut out = Vec::with_capacity(rx.len() * ry.len() * rz.len());
    for z in rz {
        for y in ry.clone() {
            for x in rx.clone() {
                out.push(g.dims.index(x, y, z));
            }
        }
    }
    out
}

fn validate(spec: &PhantomSpec, g: &Geometry) -> Result<(), PhantomError> {
    let bounds = Bounds::of(g);
    if !(spec.noise_sigma_hu >= 0.0 && spec.noise_sigma_hu.is_finite()) {
        return Err(PhantomError::Invalid(format!("noise sigma {}", spec.noise_sigma_hu)));
    }
    if let Some(h) = &spec.heart {
        let rot = h.rotation_deg.to_radians();
        let e = ellipsoid_half_extent(h.semi_axes_mm, rot);
        if !bounds.contains_box([0, 1, 2].map(|a| h.center_mm[a] - e[a]), [0, 1, 2].map(|a| h.center_mm[a] + e[a])) {
            return Err(PhantomError::OutOfBounds("heart".into()));
        }
        let min_axis = h.semi_axes_mm.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(h.fat_shell_mm >= 0.0 && h.fat_shell_mm < min_axis) {
            return Err(PhantomError::Invalid(format!("fat shell {} mm", h.fat_shell_mm)));
        }
        // The chamber must sit inside the non-fat core of the heart.
        let inner = h.semi_axes_mm.map(|a| a - h.fat_shell_mm);
        let c = &h.chamber;
        let inside = (0..40).all(|i| {
            let theta = PI * (i as f64 + 0.5) / 40.0;
            (0..80).all(|j| {
                let phi = 2.0 * PI * j as f64 / 80.0;
                let local = [
                    c.semi_axes_mm[0] * theta.sin() * phi.cos(),
                    c.semi_axes_mm[1] * theta.sin() * phi.sin(),
                    c.semi_axes_mm[2] * theta.cos(),
                ];
                let (s, co) = rot.sin_cos();
                let p = [
                    c.center_mm[0] + co * local[0] - s * local[1],
                    c.center_mm[1] + s * local[0] + co * local[1],
                    c.center_mm[2] + local[2],
                ];
                ellipsoid_level(p, h.center_mm, inner, rot) <= 1.0
            })
        });
        if !inside {
            return Err(PhantomError::Invalid("chamber extends into the fat shell".into()));
        }
    }
    if let Some(a) = &spec.aorta {
        let pts = a.path.points();
        if pts.len() < 2 || !(a.radius_mm > 0.0) {
            return Err(PhantomError::Invalid("aorta needs a path of two points and a positive radius".into()));
        }
        // Flat caps only reach sideways; interior joints are rounded.
        let last = pts.len() - 1;
        for (k, p) in pts.iter().enumerate() {
            let inside = if k == 0 || k == last {
                let (a0, a1) = if k == 0 { (pts[0], pts[1]) } else { (pts[last - 1], pts[last]) };
                let t = [a1[0] - a0[0], a1[1] - a0[1], a1[2] - a0[2]];
                let half = (0..3).map(|ax| {
                    let n = dist(t, [0.0; 3]);
                    a.radius_mm * (1.0 - (t[ax] / n).powi(2)).max(0.0).sqrt()
                });
                let half: Vec<f64> = half.collect();
                bounds.contains_box([0, 1, 2].map(|ax| p[ax] - half[ax]), [0, 1, 2].map(|ax| p[ax] + half[ax]))
            } else {
                bounds.contains_box(p.map(|x| x - a.radius_mm), p.map(|x| x + a.radius_mm))
            };
            if !inside {
                return Err(PhantomError::OutOfBounds("aorta".into()));
            }
        }
    }
    for (k, c) in spec.calcium.iter().enumerate() {
        if (0..3).any(|a| c.min_mm[a] > c.max_mm[a]) || c.halo_mm < 0.0 {
            return Err(PhantomError::Invalid(format!("calcium insert {k} has an inverted box")));
        }
        if c.halo_mm > 0.0 && c.halo_hu >= 130 {
            return Err(PhantomError::Invalid(format!("calcium insert {k} halo must stay below 130 HU")));
        }
        let lo = c.min_mm.map(|x| x - c.halo_mm);
        let hi = c.max_mm.map(|x| x + c.halo_mm);
        if !bounds.contains_box(lo, hi) {
            return Err(PhantomError::OutOfBounds(format!("calcium insert {k}")));
        }
    }
    let mut sides = BTreeSet::new();
    for l in &spec.lungs {
        if !sides.insert(l.side as u8) {
            return Err(PhantomError::Invalid(format!("{:?} lung declared twice", l.side)));
        }
        let e = l.semi_axes_mm;
        if !bounds.contains_box([0, 1, 2].map(|a| l.center_mm[a] - e[a]), [0, 1, 2].map(|a| l.center_mm[a] + e[a])) {
            return Err(PhantomError::OutOfBounds(format!("{:?} lung", l.side)));
        }
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(l.high_fraction) || !ok(l.low_fraction) || l.high_fraction + l.low_fraction > 1.0 {
            return Err(PhantomError::Invalid(format!("{:?} lung fractions", l.side)));
        }
        if l.high_hu <= -200 || l.low_hu >= -950 || !(-950..=-200).contains(&l.mid_hu) {
            return Err(PhantomError::Invalid(format!("{:?} lung HU levels straddle the wrong thresholds", l.side)));
        }
    }
    Ok(())
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    let g = spec.geometry()?;
    validate(spec, &g)?;
    let dims = g.dims;
    let n = dims.len();
    let mut hu = vec![spec.background_hu; n];
    let mut heart = vec![0u8; n];
    let mut aorta = vec![0u8; n];
    let mut calcium = vec![0u8; n];
    let mut lungs = vec![0u8; n];
    let centre = |i: usize| g.world(dims.coords(i));

    if let Some(h) = &spec.heart {
        let rot = h.rotation_deg.to_radians();
        let inner = h.semi_axes_mm.map(|a| a - h.fat_shell_mm);
        let e = ellipsoid_half_extent(h.semi_axes_mm, rot);
        let lo = [0, 1, 2].map(|a| h.center_mm[a] - e[a]);
        let hi = [0, 1, 2].map(|a| h.center_mm[a] + e[a]);
        for i in voxels_in_box(&g, lo, hi) {
            let p = centre(i);
            if ellipsoid_level(p, h.center_mm, h.semi_axes_mm, rot) > 1.0 {
                continue;
            }
            if ellipsoid_level(p, h.chamber.center_mm, h.chamber.semi_axes_mm, rot) <= 1.0 {
                heart[i] = labels::CHAMBERS;
                hu[i] = h.chamber.hu;
            } else {
                heart[i] = labels::PERICARDIUM;
                hu[i] = if ellipsoid_level(p, h.center_mm, inner, rot) <= 1.0 {
                    h.myocardium_hu
                } else {
                    h.fat_hu
                };
            }
        }
    }

    if let Some(a) = &spec.aorta {
        let path = a.path.points();
        let lo = [0, 1, 2].map(|ax| path.iter().map(|p| p[ax]).fold(f64::INFINITY, f64::min) - a.radius_mm);
        let hi = [0, 1, 2].map(|ax| path.iter().map(|p| p[ax]).fold(f64::NEG_INFINITY, f64::max) + a.radius_mm);
        for i in voxels_in_box(&g, lo, hi) {
            if in_tube(centre(i), &path, a.radius_mm) {
                if heart[i] != 0 {
                    return Err(PhantomError::Overlap("aorta and heart".into()));
                }
                aorta[i] = labels::AORTA;
                hu[i] = a.hu;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut realized: HashMap<u8, (f64, f64)> = HashMap::new();
    for l in &spec.lungs {
        let label = l.side.label();
        let mut members = Vec::new();
        let lo = [0, 1, 2].map(|a| l.center_mm[a] - l.semi_axes_mm[a]);
        let hi = [0, 1, 2].map(|a| l.center_mm[a] + l.semi_axes_mm[a]);
        for i in voxels_in_box(&g, lo, hi) {
            if heart[i] != 0 || aorta[i] != 0 {
                continue;
            }
            if ellipsoid_level(centre(i), l.center_mm, l.semi_axes_mm, 0.0) <= 1.0 {
                if lungs[i] != 0 {
                    return Err(PhantomError::Overlap("left and right lung".into()));
                }
                lungs[i] = label;
                members.push(i);
            }
        }
        members.shuffle(&mut rng);
        let total = members.len();
        let n_high = (l.high_fraction * total as f64).round() as usize;
        let n_low = ((l.low_fraction * total as f64).round() as usize).min(total - n_high);
        for (k, &i) in members.iter().enumerate() {
            hu[i] = if k < n_high {
                l.high_hu
            } else if k < n_high + n_low {
                l.low_hu
            } else {
                l.mid_hu
            };
        }
        if total > 0 {
            realized.insert(label, (n_high as f64 / total as f64, n_low as f64 / total as f64));
        }
    }

    let mut insert_counts = [0usize; 3];
    for (k, c) in spec.calcium.iter().enumerate() {
        let lo = c.min_mm.map(|x| x - c.halo_mm);
        let hi = c.max_mm.map(|x| x + c.halo_mm);
        let within = |p: [f64; 3], lo: [f64; 3], hi: [f64; 3]| (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]);
        for i in voxels_in_box(&g, lo, hi) {
            let p = centre(i);
            if !within(p, lo, hi) {
                continue;
            }
            if heart[i] != 0 || lungs[i] != 0 {
                return Err(PhantomError::Overlap(format!("calcium insert {k} and heart or lungs")));
            }
            if calcium[i] != 0 {
                return Err(PhantomError::Overlap(format!("calcium insert {k} and another insert")));
            }
            calcium[i] = c.kind.label();
            if within(p, c.min_mm, c.max_mm) {
                hu[i] = c.hu;
                if c.hu >= 130 {
                    insert_counts[c.kind.label() as usize] += 1;
                }
            } else {
                hu[i] = c.halo_hu;
            }
        }
    }

    let mut data = hu;
    if spec.noise_sigma_hu > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma_hu).expect("validated sigma");
        for v in data.iter_mut() {
            let x = *v as f64 + normal.sample(&mut rng);
            *v = x.round().clamp(HU_MIN as f64, HU_MAX as f64) as i16;
        }
    }

    let (volume, _) = CtVolume::new(g, data)?;
    let pericardium = LabelMask::new(g, MaskSchema::Pericardium, heart)?;
    let calcium = LabelMask::new(g, MaskSchema::Calcium, calcium)?;
    let aorta = LabelMask::new(g, MaskSchema::Aorta, aorta)?;
    let lungs = LabelMask::new(g, MaskSchema::Lungs, lungs)?;
    let (cacs, acs) = brute_force_agatston(&volume, &calcium);
    let truth = ground_truth(spec, &g, insert_counts, (cacs, acs), &realized);
    Ok(Phantom {
        volume,
        pericardium,
        calcium,
        aorta,
        lungs,
        truth,
    })
}

fn ground_truth(
    spec: &PhantomSpec,
    g: &Geometry,
    insert_counts: [usize; 3],
    agatston: (f64, f64),
    realized: &HashMap<u8, (f64, f64)>,
) -> GroundTruth {
    use Biomarker::*;
    let mut t: IndexMap<Biomarker, Expectation> = IndexMap::new();
    let vv = g.voxel_volume_mm3();
    let rel = Tolerance::Relative;
    let abs = Tolerance::Absolute;

    match &spec.heart {
        Some(h) if h.fat_shell_mm > 0.0 => {
            let inner = h.semi_axes_mm.map(|a| a - h.fat_shell_mm);
            t.insert(Pfatv, Expectation::ok(ellipsoid_volume(h.semi_axes_mm) - ellipsoid_volume(inner), rel(VOLUME_TOLERANCE)));
            t.insert(Pfatm, Expectation::ok(h.fat_hu as f64, abs(HU_TOLERANCE)));
            t.insert(Pfatstd, Expectation::ok(spec.noise_sigma_hu, abs(HU_TOLERANCE)));
        }
        _ => {
            t.insert(Pfatv, Expectation::ok(0.0, Tolerance::Exact));
            t.insert(Pfatm, Expectation::flagged(Status::EmptyInput));
            t.insert(Pfatstd, Expectation::flagged(Status::EmptyInput));
        }
    }

    let volume_truth = |count: usize| {
        if count == 0 {
            Expectation::ok(0.0, Tolerance::Exact)
        } else {
            Expectation::ok(count as f64 * vv, rel(VOLUME_TOLERANCE))
        }
    };
    t.insert(Cacs, Expectation::ok(agatston.0, Tolerance::Exact));
    t.insert(Cacv, volume_truth(insert_counts[labels::CORONARY as usize]));
    t.insert(Acs, Expectation::ok(agatston.1, Tolerance::Exact));
    t.insert(Acv, volume_truth(insert_counts[labels::AORTIC_CALCIUM as usize]));

    match &spec.aorta {
        Some(a) => {
            t.insert(Ati, Expectation::ok(a.path.arc_length_mm() / a.path.chord_mm(), rel(TORTUOSITY_TOLERANCE)));
            t.insert(Amd, Expectation::ok(2.0 * a.radius_mm, abs(DIAMETER_TOLERANCE_MM)));
            t.insert(Amdstd, Expectation::ok(0.0, abs(DIAMETER_TOLERANCE_MM)));
        }
        None => {
            for b in [Ati, Amd, Amdstd] {
                t.insert(b, Expectation::flagged(Status::Failed));
            }
        }
    }

    match &spec.heart {
        Some(h) => {
            let c = &h.chamber;
            let chr = ellipsoid_volume(c.semi_axes_mm) / ellipsoid_volume(h.semi_axes_mm);
            t.insert(Chr, Expectation::ok(chr, abs(RATIO_TOLERANCE)));
            let (a, b) = (c.semi_axes_mm[0], c.semi_axes_mm[1]);
            t.insert(Cld, Expectation::ok(a.max(b), rel(AXIS_TOLERANCE)));
            t.insert(Csd, Expectation::ok(a.min(b), rel(AXIS_TOLERANCE)));
            let heart_width = 2.0 * ellipsoid_half_extent(h.semi_axes_mm, h.rotation_deg.to_radians())[0];
            let z = h.center_mm[2];
            let spans: Vec<(f64, f64)> = spec
                .lungs
                .iter()
                .filter_map(|l| {
                    let dz = (z - l.center_mm[2]) / l.semi_axes_mm[2];
                    (dz.abs() < 1.0).then(|| {
                        let hw = l.semi_axes_mm[0] * (1.0 - dz * dz).sqrt();
                        (l.center_mm[0] - hw, l.center_mm[0] + hw)
                    })
                })
                .collect();
            if spans.is_empty() {
                t.insert(Ctr, Expectation::flagged(Status::EmptyInput));
            } else {
                let lo = spans.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
                let hi = spans.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
                t.insert(Ctr, Expectation::ok(heart_width / (hi - lo), abs(RATIO_TOLERANCE)));
            }
        }
        None => {
            for b in [Chr, Cld, Csd, Ctr] {
                t.insert(b, Expectation::flagged(Status::EmptyInput));
            }
        }
    }

    for (low, high, side) in [(Llr, Lhr, LungSide::Left), (Rlr, Rhr, LungSide::Right)] {
        let declared = spec.lungs.iter().find(|l| l.side == side);
        match (declared, realized.get(&side.label())) {
            (Some(l), Some(_)) => {
                t.insert(low, Expectation::ok(l.low_fraction, abs(RATIO_TOLERANCE)));
                t.insert(high, Expectation::ok(l.high_fraction, abs(RATIO_TOLERANCE)));
            }
            _ => {
                t.insert(low, Expectation::flagged(Status::EmptyInput));
                t.insert(high, Expectation::flagged(Status::EmptyInput));
            }
        }
    }

    t.sort_by(|a, _, b, _| a.cmp(b));
    GroundTruth { biomarkers: t }
}

/// Agatston scores (coronary, aortic) by exhaustive enumeration: every
/// qualifying voxel is projected into its 3 mm slab, pixels are merged with
/// 8-neighbour union-find, and each lesion is weighted by its peak HU.
pub fn brute_force_agatston(v: &CtVolume, m: &LabelMask) -> (f64, f64) {
    let dims = v.geometry.dims;
    let [sx, sy, sz] = v.geometry.spacing;
    let mut out = [0.0f64; 2];
    for (slot, label) in [labels::CORONARY, labels::AORTIC_CALCIUM].into_iter().enumerate() {
        // (slab, x, y) -> peak HU
        let mut pixels: HashMap<(usize, usize, usize), i16> = HashMap::new();
        for z in 0..dims.nz {
            let slab = ((z as f64 + 0.5) * sz / 3.0).floor() as usize;
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let hu = v.at(x, y, z);
                    if m.at(x, y, z) == label && hu >= 130 {
                        let e = pixels.entry((slab, x, y)).or_insert(hu);
                        *e = (*e).max(hu);
                    }
                }
            }
        }
        let keys: Vec<(usize, usize, usize)> = {
            let mut k: Vec<_> = pixels.keys().copied().collect();
            k.sort_unstable();
            k
        };
        let index: HashMap<(usize, usize, usize), usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut parent: Vec<usize> = (0..keys.len()).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for (i, &(s, x, y)) in keys.iter().enumerate() {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 {
                        continue;
                    }
                    if let Some(&j) = index.get(&(s, nx as usize, ny as usize)) {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        if a != b {
                            parent[a] = b;
                        }
                    }
                }
            }
        }
        let mut lesions: HashMap<usize, (u64, i16)> = HashMap::new();
        for (i, k) in keys.iter().enumerate() {
            let root = find(&mut parent, i);
            let e = lesions.entry(root).or_insert((0, i16::MIN));
            e.0 += 1;
            e.1 = e.1.max(pixels[k]);
        }
        let mut weighted: u64 = 0;
        for (count, peak) in lesions.values() {
            if (*count as f64) * sx * sy < 1.0 {
                continue;
            }
            weighted += count * band_of(*peak).unwrap_or(0) as u64;
        }
        out[slot] = weighted as f64 * sx * sy;
    }
    (out[0], out[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biomarkers::{calcium_scores, extract_all, ScanMasks};

    fn masks(p: &Phantom) -> ScanMasks<'_> {
        ScanMasks {
            pericardium: Some(&p.pericardium),
            calcium: Some(&p.calcium),
            aorta: Some(&p.aorta),
            lungs: Some(&p.lungs),
        }
    }

    #[test]
    fn empty_spec_is_background_only() {
        let p = generate(&PhantomSpec::empty([12, 10, 8], [1.0; 3])).unwrap();
        assert!(p.volume.data().iter().all(|&h| h == 40));
        let v = extract_all(&p.volume, masks(&p)).unwrap();
        assert!(p.truth.deviations(&v).is_empty(), "{:?}", p.truth.deviations(&v));
        assert_eq!(v.status(Biomarker::Ati), Status::Failed);
        assert_eq!(v.value(Biomarker::Cacs), 0.0);
    }

    #[test]
    fn straight_tube_truth_is_unit_tortuosity() {
        let mut s = PhantomSpec::empty([40, 40, 50], [1.0; 3]);
        s.aorta = Some(AortaSpec {
            path: PathSpec::Polyline(vec![[19.5, 19.5, 4.5], [19.5, 19.5, 44.5]]),
            radius_mm: 8.0,
            hu: 200,
        });
        let p = generate(&s).unwrap();
        assert_eq!(p.truth.get(Biomarker::Ati).value, 1.0);
        assert_eq!(p.truth.get(Biomarker::Amd).value, 16.0);
    }

    #[test]
    fn fat_shell_volume_matches_continuous_shell() {
        let mut s = PhantomSpec::empty([80, 70, 60], [1.0; 3]);
        s.heart = Some(HeartSpec {
            center_mm: [40.0, 35.0, 30.0],
            semi_axes_mm: [35.0, 30.0, 25.0],
            rotation_deg: 0.0,
            fat_shell_mm: 4.0,
            fat_hu: -100,
            myocardium_hu: 40,
            chamber: ChamberSpec {
                center_mm: [40.0, 35.0, 30.0],
                semi_axes_mm: [20.0, 15.0, 12.0],
                hu: 60,
            },
        });
        let p = generate(&s).unwrap();
        let fat = p.volume.data().iter().filter(|&&h| h == -100).count() as f64;
        let truth = p.truth.get(Biomarker::Pfatv).value;
        assert!((fat / truth - 1.0).abs() < 0.05, "{fat} vs {truth}");
    }

    #[test]
    fn out_of_bounds_and_overlap_are_rejected() {
        let mut s = PhantomSpec::empty([20, 20, 20], [1.0; 3]);
        s.calcium.push(InsertSpec {
            kind: CalciumKind::Coronary,
            min_mm: [15.0, 15.0, 15.0],
            max_mm: [25.0, 18.0, 18.0],
            hu: 300,
            halo_mm: 0.0,
            halo_hu: 90,
        });
        assert!(matches!(generate(&s), Err(PhantomError::OutOfBounds(_))));
        s.calcium[0].max_mm = [18.0, 18.0, 18.0];
        s.calcium.push(s.calcium[0].clone());
        assert!(matches!(generate(&s), Err(PhantomError::Overlap(_))));
    }

    #[test]
    fn oracle_agrees_with_scorer_and_weights() {
        let mut s = PhantomSpec::empty([40, 30, 12], [0.5, 0.5, 1.0]);
        for (k, hu) in [150i16, 250, 350, 450].into_iter().enumerate() {
            let x0 = 1.0 + 5.0 * k as f64;
            s.calcium.push(InsertSpec {
                kind: if k % 2 == 0 { CalciumKind::Coronary } else { CalciumKind::Aortic },
                min_mm: [x0, 2.0, 0.0],
                max_mm: [x0 + 2.0, 4.0, 2.0],
                hu,
                halo_mm: 0.5,
                halo_hu: 100,
            });
        }
        assert_eq!(s.covered_weight_bands(), BTreeSet::from([1, 2, 3, 4]));
        let p = generate(&s).unwrap();
        let scored = calcium_scores(&p.volume, &p.calcium).unwrap();
        let (cacs, acs) = brute_force_agatston(&p.volume, &p.calcium);
        assert_eq!(scored.cacs.value, cacs);
        assert_eq!(scored.acs.value, acs);
        // 5×5 pixels of 0.25 mm², all three slices in the first slab.
        assert_eq!(cacs, 6.25 * (1.0 + 3.0));
        assert_eq!(acs, 6.25 * (2.0 + 4.0));
    }

    #[test]
    fn single_small_pixel_is_below_the_floor() {
        let g = Geometry::new(Dims::new(5, 5, 1), [0.5, 0.5, 3.0], [0.0; 3]).unwrap();
        let mut v = CtVolume::filled(g, 0).unwrap();
        let mut m = LabelMask::empty(g, MaskSchema::Calcium).unwrap();
        v.set(12, 900);
        m.set(12, 1).unwrap();
        assert_eq!(brute_force_agatston(&v, &m), (0.0, 0.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let mut s = PhantomSpec::empty([30, 30, 20], [1.0; 3]);
        s.noise_sigma_hu = 5.0;
        s.seed = 11;
        s.lungs.push(LungSpec {
            side: LungSide::Left,
            center_mm: [15.0, 15.0, 10.0],
            semi_axes_mm: [10.0, 10.0, 8.0],
            high_fraction: 0.2,
            low_fraction: 0.3,
            high_hu: -100,
            low_hu: -980,
            mid_hu: -700,
        });
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.volume, b.volume);
        s.seed = 12;
        assert_ne!(generate(&s).unwrap().volume, a.volume);
    }
}
