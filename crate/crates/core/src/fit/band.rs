use super::{Band, Family, FitResult};
use crate::error::{Error, Result};

/// Band over the fitted curve's natural domain.
pub fn near_optimal_band(fit: &FitResult, tolerance: f64) -> Result<Band> {
    near_optimal_band_within(fit, tolerance, f64::NEG_INFINITY, f64::INFINITY)
}

/// Connected interval around `x_opt` where `curve(x) <= (1 + tolerance) *
/// curve(x_opt)`, intersected with `[lo, hi]`. Endpoints that hit a domain
/// boundary before reaching the level set are clipped and flagged.
pub fn near_optimal_band_within(fit: &FitResult, tolerance: f64, lo: f64, hi: f64) -> Result<Band> {
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Error::BadInput(format!(
            "tolerance must be a non-negative number, got {tolerance}"
        )));
    }
    let x_opt = fit.x_opt.ok_or_else(|| {
        Error::Domain(format!("{} fit has no interior optimum", fit.family))
    })?;
    let (dlo, dhi) = fit.domain();
    let (lo, hi) = (lo.max(dlo), hi.min(dhi));
    if !(lo <= x_opt && x_opt <= hi) {
        return Err(Error::Domain(format!(
            "optimum {x_opt} lies outside [{lo}, {hi}]"
        )));
    }
    let f0 = fit.eval(x_opt);
    if !(f0.is_finite() && f0 > 0.0) {
        return Err(Error::Domain(format!(
            "relative band needs a positive minimum, got {f0}"
        )));
    }
    if tolerance == 0.0 {
        return Ok(Band {
            x_l: x_opt,
            x_opt,
            x_r: x_opt,
            tolerance,
            clipped: false,
        });
    }
    let level = (1.0 + tolerance) * f0;

    if fit.family == Family::Quadratic {
        let c2 = fit.coef("c2")?;
        let half = (tolerance * f0 / c2).sqrt();
        let (x_l, x_r) = (x_opt - half, x_opt + half);
        return Ok(Band {
            x_l: x_l.max(lo),
            x_opt,
            x_r: x_r.min(hi),
            tolerance,
            clipped: x_l < lo || x_r > hi,
        });
    }

    let g = |x: f64| fit.eval(x) - level;
    let (x_l, cl) = endpoint(&g, x_opt, lo, -1.0);
    let (x_r, cr) = endpoint(&g, x_opt, hi, 1.0);
    Ok(Band {
        x_l,
        x_opt,
        x_r,
        tolerance,
        clipped: cl || cr,
    })
}

/// Walk from `x_opt` toward `bound` until `g > 0`, then bisect.
fn endpoint(g: &impl Fn(f64) -> f64, x_opt: f64, bound: f64, dir: f64) -> (f64, bool) {
    let mut inside = x_opt;
    let mut outside = None;
    if bound.is_finite() {
        let span = (bound - x_opt).abs();
        for k in 1..=1074 {
            let x = x_opt + dir * span * (1.0 - 0.5f64.powi(k));
            if x == bound || (x - inside) * dir <= 0.0 {
                break;
            }
            let gx = g(x);
            if gx > 0.0 || !gx.is_finite() {
                outside = Some(x);
                break;
            }
            inside = x;
        }
    } else {
        let mut h = 1e-3 * x_opt.abs().max(1.0);
        while h < 1e300 {
            let x = x_opt + dir * h;
            let gx = g(x);
            if gx > 0.0 || !gx.is_finite() {
                outside = Some(x);
                break;
            }
            inside = x;
            h *= 2.0;
        }
    }
    let Some(mut out) = outside else {
        return (if bound.is_finite() { bound } else { inside }, true);
    };
    for _ in 0..2000 {
        let mid = 0.5 * (inside + out);
        if mid == inside || mid == out {
            break;
        }
        let gm = g(mid);
        if gm > 0.0 || !gm.is_finite() {
            out = mid;
        } else {
            inside = mid;
        }
    }
    let (gi, go) = (g(inside).abs(), g(out).abs());
    (if go.is_finite() && go < gi { out } else { inside }, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_bounded_rational, fit_inv_linear, fit_quadratic, Dataset1D};

    fn data(f: impl Fn(f64) -> f64, xs: &[f64]) -> Dataset1D {
        Dataset1D::new(xs.iter().map(|&x| (x, f(x))).collect()).unwrap()
    }

    #[test]
    fn quadratic_closed_form() {
        let xs: Vec<f64> = (0..30).map(|k| 200.0 + 60.0 * k as f64).collect();
        let fit = fit_quadratic(&data(|d| 1e-8 * (d - 1000.0).powi(2) + 2.0, &xs)).unwrap();
        let band = near_optimal_band(&fit, 0.001).unwrap();
        let half = (0.001f64 * 2.0 / 1e-8).sqrt();
        assert!((half - 447.213_595_5).abs() < 1e-6);
        assert!((band.x_l - (1000.0 - half)).abs() < 1e-3);
        assert!((band.x_r - (1000.0 + half)).abs() < 1e-3);
        let level = 1.001 * fit.eval(band.x_opt);
        for x in [band.x_l, band.x_r] {
            assert!(((fit.eval(x) - level) / level).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_tolerance_is_degenerate() {
        let fit = fit_inv_linear(&data(|x| 1.0 / (x - 6.0) + 0.01 * x, &[7.0, 9.0, 12.0, 20.0])).unwrap();
        let band = near_optimal_band(&fit, 0.0).unwrap();
        assert_eq!((band.x_l, band.x_r), (band.x_opt, band.x_opt));
    }

    #[test]
    fn inv_linear_bisection() {
        let fit = fit_inv_linear(&data(|x| 1.0 / (x - 6.0) + 0.01 * x, &[7.0, 9.0, 12.0, 20.0])).unwrap();
        let band = near_optimal_band(&fit, 0.001).unwrap();
        assert!(!band.clipped);
        assert!(band.x_l > 6.0 && band.x_l < band.x_opt && band.x_opt < band.x_r);
        let level = 1.001 * fit.eval(band.x_opt);
        for x in [band.x_l, band.x_r] {
            assert!(((fit.eval(x) - level) / level).abs() <= 1e-10);
        }
    }

    #[test]
    fn clipping_is_flagged() {
        let fit = fit_inv_linear(&data(|x| 1.0 / (x - 6.0) + 0.01 * x, &[7.0, 9.0, 12.0, 20.0])).unwrap();
        let band = near_optimal_band_within(&fit, 0.5, 10.0, 18.0).unwrap();
        assert!(band.clipped);
        assert_eq!((band.x_l, band.x_r), (10.0, 18.0));
    }

    #[test]
    fn bounded_rational_band() {
        let (c1, c2) = (1.0, 289.0 / 9.0);
        let fit = fit_bounded_rational(
            &data(|x| 2.0 / (x - c1) + 5.0 / (c2 - x) + 0.9, &[12.0, 16.0, 20.0, 22.0, 26.0, 30.0]),
            c1,
            c2,
        )
        .unwrap();
        let band = near_optimal_band(&fit, 0.001).unwrap();
        let level = 1.001 * fit.eval(band.x_opt);
        for x in [band.x_l, band.x_r] {
            assert!(((fit.eval(x) - level) / level).abs() <= 1e-10);
        }
        assert!(band.x_l > c1 && band.x_r < c2);
    }

    #[test]
    fn requires_optimum() {
        let fit = fit_quadratic(&data(|x| -(x * x), &[1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(near_optimal_band(&fit, 0.001), Err(Error::Domain(_))));
    }
}
