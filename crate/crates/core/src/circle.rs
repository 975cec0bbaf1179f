//! Algebraic (Kåsa) least-squares circle fit.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Below this, the normalized scatter determinant is treated as collinear.
const COLLINEAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

/// Fits `x² + y² + D·x + E·y + F = 0` in the least-squares sense.
///
/// Points are shifted to their centroid and scaled to unit RMS spread before
/// the 3×3 normal equations are solved, which keeps small far-away arcs
/// (a 5 cm pole at 20 m) well conditioned. Exact for noiseless points on a
/// circle.
pub fn fit_circle(points: &[(f64, f64)]) -> Result<Circle> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit("fewer than 3 points"));
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n, my / n);
    let spread = (points
        .iter()
        .map(|&(x, y)| (x - mx).powi(2) + (y - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::DegenerateFit("coincident points"));
    }

    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let u = (x - mx) / spread;
        let v = (y - my) / spread;
        let row = Vector3::new(u, v, 1.0);
        let rhs = -(u * u + v * v);
        ata += row * row.transpose();
        atb += row * rhs;
        sxx += u * u;
        syy += v * v;
        sxy += u * v;
    }
    if (sxx * syy - sxy * sxy) / (n * n) < COLLINEAR_EPS {
        return Err(Error::DegenerateFit("collinear points"));
    }

    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or(Error::DegenerateFit("singular normal equations"))?;
    let (d, e, f) = (sol[0], sol[1], sol[2]);
    let cu = -0.5 * d;
    let cv = -0.5 * e;
    let r2 = cu * cu + cv * cv - f;
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(Error::DegenerateFit("non-positive squared radius"));
    }
    Ok(Circle {
        cx: mx + cu * spread,
        cy: my + cv * spread,
        r: r2.sqrt() * spread,
    })
}
