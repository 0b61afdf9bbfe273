//! Single-tube centerline extraction.
//!
//! 1. keep the dominant 26-connected component;
//! 2. endpoints are the geodesically most distant pair (double Dijkstra sweep);
//! 3. the path between them follows distance-transform maxima (Dijkstra with
//!    a cost that grows toward the wall);
//! 4. the rim-to-axis detours near each end are trimmed and the path is
//!    smoothed with a 5-point moving average;
//! 5. each point is repeatedly moved to the centroid of its orthogonal
//!    section, then smoothed and resampled at 1 mm;
//! 6. shallow stations by the caps are trimmed, then each end is grown in
//!    recentred 1 mm steps and finally extended along its tangent to the
//!    tube surface.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::components::{connected_components, label_2d_eight, Connectivity};
use super::distance::distance_transform;
use super::occupancy::SmoothOccupancy;
use super::section::sample_plane;
use super::{norm, normalize, sub, BinaryMask, GeometryError};
use crate::volume::Geometry;

pub const MIN_TUBE_VOXELS: usize = 50;
const MULTI_COMPONENT_FRACTION: f64 = 0.05;
const RIDGE_PENALTY_POWER: i32 = 4;
const TRIM_DEPTH_FRACTION: f64 = 0.75;
const EXTEND_STEP_MM: f64 = 0.1;
const MAX_MARCH_SHIFT_MM: f64 = 0.25;
const REFINE_ITERATIONS: usize = 6;
pub const RESAMPLE_STEP_MM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline {
    /// Ordered points in world mm; first is R, last is E.
    pub points: Vec<[f64; 3]>,
    pub arc_length_mm: f64,
}

impl Centerline {
    pub fn from_points(points: Vec<[f64; 3]>) -> Self {
        let arc_length_mm = polyline_length(&points);
        Self { points, arc_length_mm }
    }

    pub fn start(&self) -> [f64; 3] {
        self.points[0]
    }

    pub fn end(&self) -> [f64; 3] {
        *self.points.last().unwrap()
    }

    pub fn chord_mm(&self) -> f64 {
        norm(sub(self.end(), self.start()))
    }

    /// Arc length over straight endpoint distance.
    pub fn tortuosity(&self) -> f64 {
        self.arc_length_mm / self.chord_mm()
    }

    /// Point at arc length `s`, clamped to the curve.
    pub fn point_at(&self, s: f64) -> [f64; 3] {
        point_at(&self.points, s)
    }
}

pub fn polyline_length(points: &[[f64; 3]]) -> f64 {
    points.windows(2).map(|w| norm(sub(w[1], w[0]))).sum()
}

fn point_at(points: &[[f64; 3]], s: f64) -> [f64; 3] {
    if s <= 0.0 {
        return points[0];
    }
    let mut acc = 0.0;
    for w in points.windows(2) {
        let seg = norm(sub(w[1], w[0]));
        if acc + seg >= s && seg > 0.0 {
            let t = (s - acc) / seg;
            return [
                w[0][0] + t * (w[1][0] - w[0][0]),
                w[0][1] + t * (w[1][1] - w[0][1]),
                w[0][2] + t * (w[1][2] - w[0][2]),
            ];
        }
        acc += seg;
    }
    *points.last().unwrap()
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    cost: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over 26-connected foreground voxels. `weight(len_mm, to)` gives
/// the cost of stepping into voxel `to`. Returns distances and predecessors.
fn dijkstra(
    geometry: &Geometry,
    inside: &[bool],
    source: usize,
    weight: impl Fn(f64, usize) -> f64,
) -> (Vec<f64>, Vec<usize>) {
    let dims = geometry.dims;
    let mut dist = vec![f64::INFINITY; inside.len()];
    let mut prev = vec![usize::MAX; inside.len()];
    let mut heap = BinaryHeap::new();
    let s = geometry.spacing;
    let offsets = Connectivity::TwentySix.offsets();
    let lengths: Vec<f64> = offsets
        .iter()
        .map(|o| {
            let d = [o[0] as f64 * s[0], o[1] as f64 * s[1], o[2] as f64 * s[2]];
            norm(d)
        })
        .collect();

    dist[source] = 0.0;
    heap.push(Entry { cost: 0.0, node: source });
    while let Some(Entry { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        let c = dims.coords(node);
        for (o, len) in offsets.iter().zip(&lengths) {
            let Some(n) = dims.checked_index(c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]) else {
                continue;
            };
            if !inside[n] {
                continue;
            }
            let nc = cost + weight(*len, n);
            if nc < dist[n] {
                dist[n] = nc;
                prev[n] = node;
                heap.push(Entry { cost: nc, node: n });
            }
        }
    }
    (dist, prev)
}

fn farthest(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, d) in dist.iter().enumerate() {
        if d.is_finite() && (*d > dist[best] || !dist[best].is_finite()) {
            best = i;
        }
    }
    best
}

/// Picks the tube component, rejecting masks with competing components.
pub(crate) fn dominant_component(mask: &BinaryMask) -> Result<Vec<bool>, GeometryError> {
    let total = mask.voxels.iter().filter(|&&v| v).count();
    if total == 0 {
        return Err(GeometryError::EmptyMask);
    }
    let cs = connected_components(mask.geometry.dims, &mask.voxels, Connectivity::TwentySix);
    let significant = cs
        .sizes
        .iter()
        .filter(|&&s| s as f64 > MULTI_COMPONENT_FRACTION * total as f64)
        .count();
    if significant > 1 {
        return Err(GeometryError::MultipleComponents(significant));
    }
    let id = cs.largest().expect("non-empty mask has a component");
    if cs.size(id) < MIN_TUBE_VOXELS {
        return Err(GeometryError::DegenerateShape(format!(
            "tube has {} voxels, need at least {MIN_TUBE_VOXELS}",
            cs.size(id)
        )));
    }
    Ok(cs.voxels_of(id))
}

pub fn extract_centerline(mask: &BinaryMask) -> Result<Centerline, GeometryError> {
    let geometry = &mask.geometry;
    let dims = geometry.dims;
    let tube = dominant_component(mask)?;
    let dt = distance_transform(dims, &tube, geometry.spacing);
    let dt_max = dt.iter().cloned().fold(0.0, f64::max);
    let min_spacing = geometry.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    // Surface distance is the centre distance minus half a voxel; below one
    // voxel everywhere means the shape has no interior.
    if dt_max < 1.5 * min_spacing {
        return Err(GeometryError::DegenerateShape(format!(
            "maximum wall distance {dt_max:.3} mm is below one voxel"
        )));
    }

    let first = tube.iter().position(|&v| v).unwrap();
    let (d0, _) = dijkstra(geometry, &tube, first, |len, _| len);
    let root = farthest(&d0);
    let (d1, _) = dijkstra(geometry, &tube, root, |len, _| len);
    let end = farthest(&d1);

    let (_, prev) = dijkstra(geometry, &tube, root, |len, to| {
        len * (dt_max / dt[to]).powi(RIDGE_PENALTY_POWER)
    });
    let mut path = vec![end];
    while *path.last().unwrap() != root {
        let p = prev[*path.last().unwrap()];
        debug_assert_ne!(p, usize::MAX);
        path.push(p);
    }
    path.reverse();

    let mut depths: Vec<f64> = path.iter().map(|&i| dt[i]).collect();
    let depth_ref = median(&mut depths);
    let deep = |i: &usize| dt[*i] >= TRIM_DEPTH_FRACTION * depth_ref;
    let lo = path.iter().position(deep).unwrap_or(0);
    let hi = path.iter().rposition(deep).unwrap_or(path.len() - 1);
    let core: Vec<[f64; 3]> = path[lo..=hi]
        .iter()
        .map(|&i| geometry.world(dims.coords(i)))
        .collect();

    let occupancy = SmoothOccupancy::new(&BinaryMask::new(*geometry, tube));
    let half_width = 2.0 * dt_max + 2.0 * min_spacing;
    let pitch = 0.5 * min_spacing;
    let span = (0.5 * depth_ref).max(2.0 * min_spacing);
    let plane = PlaneSampler {
        occupancy: &occupancy,
        half_width,
        pitch,
    };
    let mut points = resample(&moving_average(&core, 2), RESAMPLE_STEP_MM);
    for _ in 0..REFINE_ITERATIONS {
        if points.len() < 2 {
            break;
        }
        points = recenter(&plane, &points, span);
        points = resample(&moving_average(&points, 2), RESAMPLE_STEP_MM);
    }

    // Stations near the caps see truncated sections; drop them and march
    // back out toward the caps one recentred step at a time.
    let depth_at = |p: &[f64; 3]| geometry.nearest_voxel(*p).map_or(0.0, |i| dt[i]);
    let mut depths: Vec<f64> = points.iter().map(depth_at).collect();
    let depth_ref = median(&mut depths);
    let deep = |p: &[f64; 3]| depth_at(p) >= TRIM_DEPTH_FRACTION * depth_ref;
    let lo = points.iter().position(deep).unwrap_or(0);
    let hi = points.iter().rposition(deep).unwrap_or(points.len().saturating_sub(1));
    let mut points = points[lo..=hi].to_vec();

    let march_span = 2.0 * min_spacing.max(RESAMPLE_STEP_MM);
    for _ in 0..2 {
        march_to_cap(&mut points, &plane, march_span, 1.5 * dt_max);
        extend_to_wall(&mut points, &occupancy, march_span);
        points.reverse();
    }

    let resampled = resample(&points, RESAMPLE_STEP_MM);
    if resampled.len() < 2 {
        return Err(GeometryError::DegenerateShape("centerline collapsed to a point".into()));
    }
    Ok(Centerline::from_points(resampled))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.get(values.len() / 2).copied().unwrap_or(0.0)
}

struct PlaneSampler<'a> {
    occupancy: &'a SmoothOccupancy,
    half_width: f64,
    pitch: f64,
}

impl PlaneSampler<'_> {
    /// Centroid of the tube section through `p` orthogonal to `t`.
    fn centroid(&self, p: [f64; 3], t: [f64; 3]) -> Option<[f64; 3]> {
        let (samples, side, u, v) = sample_plane(self.occupancy, p, t, self.half_width, self.pitch);
        let (da, db) = section_centroid(&samples, side)?;
        let (da, db) = (da * self.pitch, db * self.pitch);
        Some([0, 1, 2].map(|k| p[k] + da * u[k] + db * v[k]))
    }
}

/// Direction of the last `span` mm of the polyline.
fn end_tangent(points: &[[f64; 3]], span: f64) -> Option<[f64; 3]> {
    let tip = *points.last()?;
    let l = polyline_length(points);
    normalize(sub(tip, point_at(points, (l - span).max(0.0))))
}

/// Moves every point to the centroid of the tube section through it,
/// orthogonal to the local polyline direction.
fn recenter(plane: &PlaneSampler<'_>, points: &[[f64; 3]], span: f64) -> Vec<[f64; 3]> {
    let length = polyline_length(points);
    let mut acc = 0.0;
    let stations: Vec<f64> = std::iter::once(0.0)
        .chain(points.windows(2).map(|w| {
            acc += norm(sub(w[1], w[0]));
            acc
        }))
        .collect();
    let moved: Vec<([f64; 3], [f64; 3])> = points
        .iter()
        .zip(&stations)
        .map(|(&p, &s)| {
            let a = point_at(points, (s - span).max(0.0));
            let b = point_at(points, (s + span).min(length));
            let Some(t) = normalize(sub(b, a)) else {
                return (p, [0.0; 3]);
            };
            (plane.centroid(p, t).unwrap_or(p), t)
        })
        .collect();
    // Drop points that moved behind their predecessor along the curve.
    let mut out: Vec<[f64; 3]> = Vec::with_capacity(moved.len());
    for (q, t) in moved {
        if let Some(prev) = out.last() {
            let step = sub(q, *prev);
            if step[0] * t[0] + step[1] * t[1] + step[2] * t[2] <= 0.0 {
                continue;
            }
        }
        out.push(q);
    }
    out
}

/// Grows the polyline past its last point in 1 mm steps, recentring each new
/// point in its section, while the step lands inside the tube.
fn march_to_cap(points: &mut Vec<[f64; 3]>, plane: &PlaneSampler<'_>, span: f64, reach: f64) {
    let Some(start) = end_tangent(points, span) else {
        return;
    };
    let mut travelled = 0.0;
    while points.len() >= 2 && travelled + RESAMPLE_STEP_MM <= reach {
        let tip = *points.last().unwrap();
        let Some(t) = end_tangent(points, span) else {
            return;
        };
        let candidate = [0, 1, 2].map(|k| tip[k] + RESAMPLE_STEP_MM * t[k]);
        if !plane.occupancy.contains(candidate) {
            return;
        }
        let Some(q) = plane.centroid(candidate, t) else {
            return;
        };
        let d = sub(q, tip);
        let along = |dir: [f64; 3]| d[0] * dir[0] + d[1] * dir[1] + d[2] * dir[2];
        // A section clipped by the cap pulls the centroid sideways.
        let shift = norm(sub(q, candidate));
        if shift > MAX_MARCH_SHIFT_MM
            || along(t) < 0.5 * RESAMPLE_STEP_MM
            || along(start) < 0.5 * RESAMPLE_STEP_MM
            || !plane.occupancy.contains(q)
        {
            return;
        }
        travelled += RESAMPLE_STEP_MM;
        points.push(q);
    }
}

/// Centroid offset (in samples, relative to the grid centre) of the
/// 8-connected component at the centre, or of the one nearest to it.
fn section_centroid(samples: &[bool], side: usize) -> Option<(f64, f64)> {
    let half = (side / 2) as i64;
    let centre = (side / 2) * side + side / 2;
    let seed = if samples[centre] {
        centre
    } else {
        samples
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .min_by_key(|(k, _)| {
                let (x, y) = ((*k % side) as i64 - half, (*k / side) as i64 - half);
                x * x + y * y
            })?
            .0
    };
    let (ids, _) = label_2d_eight(side, side, samples);
    let id = ids[seed];
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (k, &c) in ids.iter().enumerate() {
        if c == id {
            sx += ((k % side) as i64 - half) as f64;
            sy += ((k / side) as i64 - half) as f64;
            n += 1;
        }
    }
    Some((sx / n as f64, sy / n as f64))
}

/// Symmetric moving average with half-width `h`; the window shrinks near the
/// ends so the endpoints are kept.
pub fn moving_average(points: &[[f64; 3]], h: usize) -> Vec<[f64; 3]> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let w = h.min(i).min(n - 1 - i);
            let mut acc = [0.0; 3];
            for p in &points[i - w..=i + w] {
                for a in 0..3 {
                    acc[a] += p[a];
                }
            }
            let k = (2 * w + 1) as f64;
            [acc[0] / k, acc[1] / k, acc[2] / k]
        })
        .collect()
}

/// Extends the polyline past its last point along the end tangent up to the
/// tube surface.
fn extend_to_wall(points: &mut Vec<[f64; 3]>, occupancy: &SmoothOccupancy, span: f64) {
    let Some(dir) = end_tangent(points, span) else {
        return;
    };
    let tip = *points.last().unwrap();
    let mut last_inside = None;
    let mut k = 1;
    loop {
        let t = k as f64 * EXTEND_STEP_MM;
        let p = [0, 1, 2].map(|a| tip[a] + t * dir[a]);
        if !occupancy.contains(p) {
            break;
        }
        last_inside = Some(p);
        k += 1;
    }
    if let Some(p) = last_inside {
        points.push(p);
    }
}

/// Points at arc length 0, step, 2·step, … plus the final point.
pub fn resample(points: &[[f64; 3]], step: f64) -> Vec<[f64; 3]> {
    let total = polyline_length(points);
    let n = (total / step + 1e-9).floor() as usize;
    let mut out: Vec<[f64; 3]> = (0..=n).map(|k| point_at(points, k as f64 * step)).collect();
    if total - n as f64 * step > 1e-9 {
        out.push(*points.last().unwrap());
    }
    out
}
