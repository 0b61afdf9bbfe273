use serde::{Deserialize, Serialize};

use super::centerline::Centerline;
use super::components::label_2d_eight;
use super::occupancy::SmoothOccupancy;
use super::{cross, normalize, sub, BinaryMask, GeometryError};

pub const SECTION_PITCH_MM: f64 = 0.5;
pub const SECTION_WINDOW_MM: f64 = 100.0;
const TANGENT_HALF_SPAN_MM: f64 = 2.0;

/// Mask sampled on the plane orthogonal to the centerline at one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub center: [f64; 3],
    pub tangent: [f64; 3],
    /// Samples per side; the grid is `side × side`, row-major along `v`.
    pub side: usize,
    pub pitch_mm: f64,
    pub samples: Vec<bool>,
    pub max_diameter_mm: f64,
}

/// Number of stations for a given arc length: `floor(length / interval) + 1`.
pub fn section_count(arc_length_mm: f64, interval_mm: f64) -> usize {
    (arc_length_mm / interval_mm + 1e-9).floor() as usize + 1
}

pub fn cross_sections(
    mask: &BinaryMask,
    centerline: &Centerline,
    interval_mm: f64,
) -> Result<Vec<CrossSection>, GeometryError> {
    if !(interval_mm > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("interval must be positive, got {interval_mm}")));
    }
    let k = section_count(centerline.arc_length_mm, interval_mm);
    let occupancy = SmoothOccupancy::new(mask);
    let l = centerline.arc_length_mm;
    // End stations sit on the cap surface; pull them half a voxel inside.
    let inset = (0.5 * mask.geometry.spacing.iter().copied().fold(0.0, f64::max)).min(0.5 * l);
    let sections = (0..k)
        .map(|i| {
            let s = (i as f64 * interval_mm).clamp(inset, l - inset);
            section_at(&occupancy, centerline, s)
        })
        .collect();
    Ok(sections)
}

fn tangent_at(centerline: &Centerline, s: f64) -> [f64; 3] {
    let l = centerline.arc_length_mm;
    let a = centerline.point_at((s - TANGENT_HALF_SPAN_MM).max(0.0));
    let b = centerline.point_at((s + TANGENT_HALF_SPAN_MM).min(l));
    normalize(sub(b, a)).unwrap_or([0.0, 0.0, 1.0])
}

/// Orthonormal in-plane basis for a unit normal.
pub fn plane_basis(t: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if t[0].abs() <= t[1].abs() && t[0].abs() <= t[2].abs() {
        [1.0, 0.0, 0.0]
    } else if t[1].abs() <= t[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let u = normalize(cross(t, helper)).expect("helper axis is never parallel to t");
    let v = cross(t, u);
    (u, v)
}

/// Samples the mask on a square grid centred at `center` in the plane with
/// normal `tangent`. Returns the samples (row-major along `v`), grid side and
/// the in-plane basis.
pub(crate) fn sample_plane(
    occupancy: &SmoothOccupancy,
    center: [f64; 3],
    tangent: [f64; 3],
    half_width_mm: f64,
    pitch: f64,
) -> (Vec<bool>, usize, [f64; 3], [f64; 3]) {
    let (u, v) = plane_basis(tangent);
    let half = (half_width_mm / pitch).round() as usize;
    let side = 2 * half + 1;
    let mut samples = vec![false; side * side];
    for j in 0..side {
        let b = (j as f64 - half as f64) * pitch;
        for i in 0..side {
            let a = (i as f64 - half as f64) * pitch;
            let p = [
                center[0] + a * u[0] + b * v[0],
                center[1] + a * u[1] + b * v[1],
                center[2] + a * u[2] + b * v[2],
            ];
            samples[j * side + i] = occupancy.contains(p);
        }
    }
    (samples, side, u, v)
}

fn section_at(occupancy: &SmoothOccupancy, centerline: &Centerline, s: f64) -> CrossSection {
    let center = centerline.point_at(s);
    let tangent = tangent_at(centerline, s);
    let (samples, side, _, _) = sample_plane(occupancy, center, tangent, 0.5 * SECTION_WINDOW_MM, SECTION_PITCH_MM);
    let max_diameter_mm = component_diameter(&samples, side, SECTION_PITCH_MM);
    CrossSection {
        center,
        tangent,
        side,
        pitch_mm: SECTION_PITCH_MM,
        samples,
        max_diameter_mm,
    }
}

/// Largest distance between boundary samples of the component under the
/// grid centre; 0 when the centre sample is outside the mask.
pub fn component_diameter(samples: &[bool], side: usize, pitch: f64) -> f64 {
    let centre = (side / 2) * side + side / 2;
    if !samples[centre] {
        return 0.0;
    }
    let (ids, _) = label_2d_eight(side, side, samples);
    let id = ids[centre];
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < side && (y as usize) < side && ids[y as usize * side + x as usize] == id
    };
    let mut boundary = Vec::new();
    for y in 0..side as i64 {
        for x in 0..side as i64 {
            if !inside(x, y) {
                continue;
            }
            if !(inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1)) {
                boundary.push([x as f64 * pitch, y as f64 * pitch]);
            }
        }
    }
    let hull = convex_hull(&mut boundary);
    let mut best = 0.0f64;
    for (i, a) in hull.iter().enumerate() {
        for b in &hull[i + 1..] {
            best = best.max((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    best
}

/// Andrew's monotone chain; returns hull vertices (collinear points dropped).
fn convex_hull(points: &mut [[f64; 2]]) -> Vec<[f64; 2]> {
    points.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    if points.len() <= 2 {
        return points.to_vec();
    }
    let turn = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(points.len() * 2);
    for &p in points.iter() {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in points.iter().rev().skip(1) {
        while hull.len() >= lower && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}
