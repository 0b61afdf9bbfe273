//! Direct least-squares ellipse fitting.
//!
//! Minimises the algebraic distance of a general conic under the ellipse
//! constraint `4ac - b² = 1`, using the numerically stable block reduction to
//! a 3×3 eigenproblem. Points are centred and scaled before fitting.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

pub const MIN_ELLIPSE_POINTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseFit {
    pub center: [f64; 2],
    pub semi_major_mm: f64,
    pub semi_minor_mm: f64,
    /// Angle of the major axis from +x, in (-π/2, π/2].
    pub angle_rad: f64,
}

/// Conic coefficients `a x² + b xy + c y² + d x + e y + f = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

pub fn fit_ellipse(points: &[[f64; 2]]) -> Result<EllipseFit, GeometryError> {
    if points.len() < MIN_ELLIPSE_POINTS {
        return Err(GeometryError::TooFewPoints {
            needed: MIN_ELLIPSE_POINTS,
            found: points.len(),
        });
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(GeometryError::DegenerateConic("non-finite input point".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let scale = (points
        .iter()
        .map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if scale == 0.0 {
        return Err(GeometryError::DegenerateConic("all points coincide".into()));
    }
    let normalized: Vec<[f64; 2]> = points.iter().map(|p| [(p[0] - mx) / scale, (p[1] - my) / scale]).collect();

    let conic = fit_conic(&normalized)?;
    let mut fit = conic_to_ellipse(&conic)?;
    fit.center = [fit.center[0] * scale + mx, fit.center[1] * scale + my];
    fit.semi_major_mm *= scale;
    fit.semi_minor_mm *= scale;
    Ok(fit)
}

fn fit_conic(points: &[[f64; 2]]) -> Result<Conic, GeometryError> {
    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let (x, y) = (p[0], p[1]);
        let quad = Vector3::new(x * x, x * y, y * y);
        let lin = Vector3::new(x, y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| GeometryError::DegenerateConic("points are collinear".into()))?;
    if s3.determinant().abs() < 1e-12 * s3.norm().powi(3) {
        return Err(GeometryError::DegenerateConic("points are collinear".into()));
    }
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the 3×3 ellipse constraint block.
    let reduced = Matrix3::new(
        m[(2, 0)] / 2.0,
        m[(2, 1)] / 2.0,
        m[(2, 2)] / 2.0,
        -m[(1, 0)],
        -m[(1, 1)],
        -m[(1, 2)],
        m[(0, 0)] / 2.0,
        m[(0, 1)] / 2.0,
        m[(0, 2)] / 2.0,
    );

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * lambda.re)) else {
            continue;
        };
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint > 0.0 {
            let v = v / constraint.sqrt();
            // Several admissible vectors only arise from round-off; keep the
            // one with the smallest algebraic residual.
            let residual = (v.transpose() * m * v)[(0, 0)].abs();
            if best.as_ref().is_none_or(|(r, _)| residual < *r) {
                best = Some((residual, v));
            }
        }
    }
    let (_, a1) = best.ok_or_else(|| GeometryError::DegenerateConic("no ellipse-admissible eigenvector".into()))?;
    let a2 = t * a1;
    Ok(Conic {
        a: a1[0],
        b: a1[1],
        c: a1[2],
        d: a2[0],
        e: a2[1],
        f: a2[2],
    })
}

/// Unit vector spanning the (approximate) null space of a rank-2 matrix,
/// taken from the best-conditioned cross product of its rows.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let best = candidates
        .into_iter()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap();
    let n = best.norm();
    (n > 0.0 && n.is_finite()).then(|| best / n)
}

pub fn conic_to_ellipse(q: &Conic) -> Result<EllipseFit, GeometryError> {
    let den = q.b * q.b - 4.0 * q.a * q.c;
    if den >= 0.0 {
        return Err(GeometryError::DegenerateConic("conic is not an ellipse".into()));
    }
    let x0 = (2.0 * q.c * q.d - q.b * q.e) / den;
    let y0 = (2.0 * q.a * q.e - q.b * q.d) / den;
    let f0 = q.a * x0 * x0 + q.b * x0 * y0 + q.c * y0 * y0 + q.d * x0 + q.e * y0 + q.f;

    // Eigen-decomposition of the quadratic form [[a, b/2], [b/2, c]].
    let mean = 0.5 * (q.a + q.c);
    let diff = 0.5 * (q.a - q.c);
    let radius = diff.hypot(0.5 * q.b);
    let (l_small, l_large) = (mean - radius, mean + radius);
    let r_small_sq = -f0 / l_small;
    let r_large_sq = -f0 / l_large;
    if !(r_small_sq > 0.0 && r_large_sq > 0.0) || !r_small_sq.is_finite() || !r_large_sq.is_finite() {
        return Err(GeometryError::DegenerateConic("imaginary ellipse".into()));
    }
    // The major axis runs along the eigenvector giving the larger radius.
    let (l_major, r_major_sq, r_minor_sq) = if r_small_sq >= r_large_sq {
        (l_small, r_small_sq, r_large_sq)
    } else {
        (l_large, r_large_sq, r_small_sq)
    };
    // Two algebraically equivalent eigenvector forms; take the larger one.
    let v1 = [0.5 * q.b, l_major - q.a];
    let v2 = [l_major - q.c, 0.5 * q.b];
    let v = if v1[0].hypot(v1[1]) >= v2[0].hypot(v2[1]) { v1 } else { v2 };
    let mut angle = v[1].atan2(v[0]);
    if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    } else if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    }
    Ok(EllipseFit {
        center: [x0, y0],
        semi_major_mm: r_major_sq.sqrt(),
        semi_minor_mm: r_minor_sq.sqrt(),
        angle_rad: angle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample(a: f64, b: f64, theta: f64, center: [f64; 2], n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                let (x, y) = (a * t.cos(), b * t.sin());
                [
                    center[0] + x * theta.cos() - y * theta.sin(),
                    center[1] + x * theta.sin() + y * theta.cos(),
                ]
            })
            .collect()
    }

    #[test]
    fn axis_aligned_ellipse_is_recovered() {
        let fit = fit_ellipse(&sample(40.0, 25.0, 0.0, [3.0, -7.0], 100)).unwrap();
        assert!((fit.semi_major_mm - 40.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.semi_minor_mm - 25.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.center[0] - 3.0).abs() < 1e-6 && (fit.center[1] + 7.0).abs() < 1e-6);
        assert!(fit.angle_rad.abs() < 1e-6);
    }

    #[test]
    fn circle_has_equal_axes() {
        let fit = fit_ellipse(&sample(12.5, 12.5, 0.0, [100.0, 50.0], 64)).unwrap();
        assert!((fit.semi_major_mm - 12.5).abs() < 1e-6);
        assert!((fit.semi_minor_mm - 12.5).abs() < 1e-6);
    }

    #[test]
    fn rotated_ellipse_angle() {
        let fit = fit_ellipse(&sample(30.0, 10.0, 0.6, [0.0, 0.0], 50)).unwrap();
        assert!((fit.angle_rad - 0.6).abs() < 1e-6, "{fit:?}");
        let fit = fit_ellipse(&sample(30.0, 10.0, PI / 2.0, [0.0, 0.0], 50)).unwrap();
        assert!((fit.angle_rad.abs() - PI / 2.0).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn too_few_points() {
        let pts = sample(4.0, 2.0, 0.0, [0.0, 0.0], 5);
        assert!(matches!(
            fit_ellipse(&pts),
            Err(GeometryError::TooFewPoints { needed: 6, found: 5 })
        ));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 2.0 * i as f64 + 1.0]).collect();
        assert!(matches!(fit_ellipse(&pts), Err(GeometryError::DegenerateConic(_))));
    }
}
