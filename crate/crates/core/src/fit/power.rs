use super::linear::lstsq;
use super::{r_squared, Dataset1D, Family, FitResult};
use crate::error::{Error, Result};

/// `y = k x^p`, fitted as `log10 y = a + p log10 x`. `r_squared` and the
/// residuals are in log space.
pub fn fit_power_law(data: &Dataset1D) -> Result<FitResult> {
    let family = Family::PowerLaw;
    if let Some((x, y)) = data.points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Domain(format!(
            "power law needs positive x and y, got ({x}, {y})"
        )));
    }
    data.require(family, 2)?;
    let logs = Dataset1D::with_weights(
        data.points.iter().map(|(x, y)| (x.log10(), y.log10())).collect(),
        data.weights.clone(),
    )?;
    let c = lstsq(family, &logs, 2, |lx| vec![1.0, lx])?;
    let mut fit = FitResult::new(
        family,
        &[
            ("multiplier", 10f64.powf(c[0])),
            ("log10_multiplier", c[0]),
            ("exponent", c[1]),
        ],
    );
    let ly = logs.ys();
    let fitted: Vec<f64> = logs.xs().iter().map(|lx| c[0] + c[1] * lx).collect();
    fit.residuals = ly.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    fit.r_squared = r_squared(&ly, &fitted, &logs);
    Ok(fit)
}
