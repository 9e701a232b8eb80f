//! Curve families, optimum extraction, near-optimal bands and rank statistics.

mod band;
mod linear;
mod power;
mod rank;
mod saturating;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use band::{near_optimal_band, near_optimal_band_within};
pub use linear::{fit_bounded_rational, fit_inv_linear, fit_linear_band, fit_quadratic};
pub use power::fit_power_law;
pub use rank::{rank_stats, RankStats};
pub use saturating::{fit_saturating_power, SaturatingInit, SaturatingOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    PowerLaw,
    SaturatingPower,
    InvLinear,
    BoundedRational,
    Quadratic,
    LinearBand,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::PowerLaw,
        Family::SaturatingPower,
        Family::InvLinear,
        Family::BoundedRational,
        Family::Quadratic,
        Family::LinearBand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::PowerLaw => "power-law",
            Family::SaturatingPower => "saturating-power",
            Family::InvLinear => "inv-linear",
            Family::BoundedRational => "bounded-rational",
            Family::Quadratic => "quadratic",
            Family::LinearBand => "linear-band",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Family::ALL.iter().map(|f| f.name()).collect();
                Error::BadInput(format!("unknown family `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// `(x, y)` samples with optional positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset1D {
    pub points: Vec<(f64, f64)>,
    pub weights: Option<Vec<f64>>,
}

impl Dataset1D {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::with_weights(points, None)
    }

    pub fn from_xy(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::BadInput(format!(
                "x and y lengths differ ({} vs {})",
                xs.len(),
                ys.len()
            )));
        }
        Self::new(xs.iter().copied().zip(ys.iter().copied()).collect())
    }

    pub fn with_weights(points: Vec<(f64, f64)>, weights: Option<Vec<f64>>) -> Result<Self> {
        if let Some((x, y)) = points.iter().find(|(x, y)| !(x.is_finite() && y.is_finite())) {
            return Err(Error::BadInput(format!("non-finite point ({x}, {y})")));
        }
        if let Some(w) = &weights {
            if w.len() != points.len() {
                return Err(Error::BadInput(format!(
                    "{} weights for {} points",
                    w.len(),
                    points.len()
                )));
            }
            if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::BadInput(format!("weights must be positive, got {v}")));
            }
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn distinct_x(&self) -> usize {
        let mut xs = self.xs();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    }

    pub(crate) fn require(&self, family: Family, min_points: usize) -> Result<()> {
        if self.len() < min_points {
            return Err(Error::BadInput(format!(
                "{family} needs at least {min_points} points, got {}",
                self.len()
            )));
        }
        if self.distinct_x() != self.len() {
            return Err(Error::BadInput(format!("{family} needs distinct x values")));
        }
        Ok(())
    }
}

/// Interval around the optimum where the curve stays within a relative
/// tolerance of its minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub x_l: f64,
    pub x_opt: f64,
    pub x_r: f64,
    pub tolerance: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    pub coefficients: BTreeMap<String, f64>,
    pub r_squared: f64,
    pub x_opt: Option<f64>,
    pub band: Option<Band>,
    pub residuals: Vec<f64>,
    /// Start values of multi-start searches, in the order they were tried.
    #[serde(default)]
    pub seeds: Vec<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl FitResult {
    pub(crate) fn new(family: Family, coefficients: &[(&str, f64)]) -> Self {
        Self {
            family,
            coefficients: coefficients
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            r_squared: 0.0,
            x_opt: None,
            band: None,
            residuals: Vec::new(),
            seeds: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub(crate) fn no_optimum(&self) -> Error {
        fit_failure(
            self.family,
            format!("no interior optimum ({})", self.notes.join("; ")),
        )
    }

    pub fn coef(&self, name: &str) -> Result<f64> {
        self.coefficients.get(name).copied().ok_or_else(|| {
            Error::BadInput(format!("{} fit has no coefficient `{name}`", self.family))
        })
    }

    /// Natural domain of the fitted curve.
    pub fn domain(&self) -> (f64, f64) {
        match self.family {
            Family::InvLinear => (6.0, f64::INFINITY),
            Family::BoundedRational => (
                self.coefficients.get("c1").copied().unwrap_or(f64::NEG_INFINITY),
                self.coefficients.get("c2").copied().unwrap_or(f64::INFINITY),
            ),
            Family::PowerLaw | Family::SaturatingPower => (0.0, f64::INFINITY),
            Family::Quadratic | Family::LinearBand => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Evaluate the fitted curve (the mean line for a linear band).
    pub fn eval(&self, x: f64) -> f64 {
        let c = |k: &str| self.coefficients.get(k).copied().unwrap_or(f64::NAN);
        match self.family {
            Family::PowerLaw => c("multiplier") * x.powf(c("exponent")),
            Family::SaturatingPower => c("E") + c("A") * x.powf(c("B")),
            Family::InvLinear => c("a") / (x - 6.0) + c("b") * x + c("c"),
            Family::BoundedRational => c("a") / (x - c("c1")) + c("b") / (c("c2") - x) + c("c"),
            Family::Quadratic => (c("c2") * x + c("c1")) * x + c("c0"),
            Family::LinearBand => c("slope") * x + c("intercept_mean"),
        }
    }

    pub(crate) fn finish(mut self, data: &Dataset1D) -> Self {
        let fitted: Vec<f64> = data.points.iter().map(|(x, _)| self.eval(*x)).collect();
        let ys = data.ys();
        self.residuals = ys.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        self.r_squared = r_squared(&ys, &fitted, data);
        self
    }
}

pub(crate) fn r_squared(ys: &[f64], fitted: &[f64], data: &Dataset1D) -> f64 {
    let wsum: f64 = (0..ys.len()).map(|i| data.weight(i)).sum();
    let mean = (0..ys.len()).map(|i| data.weight(i) * ys[i]).sum::<f64>() / wsum;
    let ss_res: f64 = (0..ys.len())
        .map(|i| data.weight(i) * (ys[i] - fitted[i]).powi(2))
        .sum();
    let ss_tot: f64 = (0..ys.len())
        .map(|i| data.weight(i) * (ys[i] - mean).powi(2))
        .sum();
    let scale = ys.iter().map(|y| y * y).sum::<f64>().max(f64::MIN_POSITIVE);
    if ss_tot <= 1e-28 * scale {
        if ss_res <= 1e-24 * scale {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

pub(crate) fn fit_failure(family: Family, reason: impl Into<String>) -> Error {
    Error::FitFailure {
        family: family.name().into(),
        reason: reason.into(),
    }
}
