use nalgebra::{DMatrix, DVector};

use super::{fit_failure, Dataset1D, Family, FitResult};
use crate::error::{Error, Result};

/// Weighted linear least squares through an SVD of the column-scaled design
/// matrix. `basis(x)` returns one row of the design matrix.
pub(crate) fn lstsq(
    family: Family,
    data: &Dataset1D,
    p: usize,
    basis: impl Fn(f64) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let n = data.len();
    let mut a = DMatrix::<f64>::zeros(n, p);
    let mut b = DVector::<f64>::zeros(n);
    for (i, (x, y)) in data.points.iter().enumerate() {
        let sw = data.weight(i).sqrt();
        let row = basis(*x);
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = sw * v;
        }
        b[i] = sw * y;
    }
    let mut scale = vec![1.0; p];
    for (j, s) in scale.iter_mut().enumerate() {
        let norm = a.column(j).norm();
        if norm > 0.0 {
            *s = norm;
            a.column_mut(j).unscale_mut(norm);
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax.is_finite() && smax > 0.0) {
        return Err(fit_failure(family, "design matrix is zero or non-finite"));
    }
    let sol = svd
        .solve(&b, smax * 1e-13)
        .map_err(|e| fit_failure(family, e))?;
    let coef: Vec<f64> = sol.iter().zip(&scale).map(|(c, s)| c / s).collect();
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(fit_failure(family, "non-finite coefficients"));
    }
    Ok(coef)
}

/// `y = a / (x - 6) + b x + c`.
pub fn fit_inv_linear(data: &Dataset1D) -> Result<FitResult> {
    let family = Family::InvLinear;
    data.require(family, 3)?;
    if let Some((x, _)) = data.points.iter().find(|(x, _)| *x <= 6.0) {
        return Err(Error::Domain(format!("inv-linear needs x > 6, got {x}")));
    }
    let c = lstsq(family, data, 3, |x| vec![1.0 / (x - 6.0), x, 1.0])?;
    let (a, b) = (c[0], c[1]);
    let mut fit = FitResult::new(family, &[("a", a), ("b", b), ("c", c[2])]);
    if a > 0.0 && b > 0.0 {
        fit.x_opt = Some(6.0 + (a / b).sqrt());
    } else {
        fit.notes.push("no interior optimum (a * b <= 0 or a curve without a minimum)".into());
    }
    Ok(fit.finish(data))
}

/// `y = a / (x - c1) + b / (c2 - x) + c` on `(c1, c2)`.
pub fn fit_bounded_rational(data: &Dataset1D, c1: f64, c2: f64) -> Result<FitResult> {
    let family = Family::BoundedRational;
    if !(c1.is_finite() && c2.is_finite() && c1 < c2) {
        return Err(Error::BadInput(format!("need finite c1 < c2, got ({c1}, {c2})")));
    }
    data.require(family, 3)?;
    if let Some((x, _)) = data.points.iter().find(|(x, _)| !(*x > c1 && *x < c2)) {
        return Err(Error::Domain(format!(
            "bounded-rational needs x in ({c1}, {c2}), got {x}"
        )));
    }
    let coef = lstsq(family, data, 3, |x| vec![1.0 / (x - c1), 1.0 / (c2 - x), 1.0])?;
    let (a, b) = (coef[0], coef[1]);
    let mut fit = FitResult::new(
        family,
        &[("a", a), ("b", b), ("c", coef[2]), ("c1", c1), ("c2", c2)],
    );
    if let Some(x) = rational_optimum(a, b, c1, c2) {
        fit.x_opt = Some(x);
    } else {
        fit.notes.push("no interior optimum (a or b not positive)".into());
    }
    Ok(fit.finish(data))
}

/// Stationary point of `a / (x - c1) + b / (c2 - x)`, a minimum when both
/// `a` and `b` are positive.
pub(crate) fn rational_optimum(a: f64, b: f64, c1: f64, c2: f64) -> Option<f64> {
    if !(a > 0.0 && b > 0.0) {
        return None;
    }
    if a == b {
        return Some(0.5 * (c1 + c2));
    }
    let (sa, sb) = (a.sqrt(), b.sqrt());
    Some((c1 * sb + c2 * sa) / (sa + sb))
}

/// `y = c2 x^2 + c1 x + c0`, fitted in centred and scaled `x`.
pub fn fit_quadratic(data: &Dataset1D) -> Result<FitResult> {
    let family = Family::Quadratic;
    data.require(family, 3)?;
    let xs = data.xs();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    let t = |x: f64| (x - m) / s;
    let q = lstsq(family, data, 3, |x| {
        let u = t(x);
        vec![u * u, u, 1.0]
    })?;
    let ys = data.ys();
    let yscale = ys.iter().map(|y| y.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (a2, a1, a0, degenerate) = if q[0].abs() <= 1e-12 * yscale {
        let l = lstsq(family, data, 2, |x| vec![t(x), 1.0])?;
        (0.0, l[0], l[1], true)
    } else {
        (q[0], q[1], q[2], false)
    };
    let c2 = a2 / (s * s);
    let c1 = a1 / s - 2.0 * a2 * m / (s * s);
    let c0 = a0 - a1 * m / s + a2 * m * m / (s * s);
    let mut fit = FitResult::new(family, &[("c2", c2), ("c1", c1), ("c0", c0)]);
    if degenerate {
        fit.notes.push("degenerate: data are collinear, quadratic term is zero".into());
    } else if c2 > 0.0 {
        fit.x_opt = Some(m - s * a1 / (2.0 * a2));
    } else {
        fit.notes.push("parabola opens downward: no minimum".into());
    }
    Ok(fit.finish(data))
}

fn band_width(data: &Dataset1D, slope: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &data.points {
        let r = y - slope * x;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

/// Two parallel lines with a shared slope enclosing every point, with the
/// smallest vertical width. Weights are ignored.
pub fn fit_linear_band(data: &Dataset1D) -> Result<FitResult> {
    let family = Family::LinearBand;
    if data.distinct_x() < 2 {
        return Err(Error::Domain("linear band needs at least two distinct x values".into()));
    }
    let pts = &data.points;
    let mut slopes = Vec::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let dx = pts[j].0 - pts[i].0;
            if dx != 0.0 {
                slopes.push((pts[j].1 - pts[i].1) / dx);
            }
        }
    }
    slopes.sort_by(f64::total_cmp);
    slopes.dedup();
    let widths: Vec<f64> = slopes
        .iter()
        .map(|s| {
            let (lo, hi) = band_width(data, *s);
            hi - lo
        })
        .collect();
    let wmin = widths.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * wmin.abs().max(1e-300);
    let optimal: Vec<f64> = slopes
        .iter()
        .zip(&widths)
        .filter(|(_, w)| **w - wmin <= tol)
        .map(|(s, _)| *s)
        .collect();
    let first = optimal[0];
    let last = *optimal.last().unwrap();
    let slope = if first == last { first } else { 0.5 * (first + last) };
    let (lo, hi) = band_width(data, slope);
    let fit = FitResult::new(
        family,
        &[
            ("slope", slope),
            ("intercept_lower", lo),
            ("intercept_upper", hi),
            ("intercept_mean", 0.5 * (lo + hi)),
            ("width", hi - lo),
        ],
    );
    if !(slope.is_finite() && lo.is_finite() && hi.is_finite()) {
        return Err(fit_failure(family, "non-finite band"));
    }
    Ok(fit.finish(data))
}
