//! Compute budget in, architecture and training hyperparameters out.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{
    fit_bounded_rational, fit_inv_linear, fit_power_law, fit_quadratic, near_optimal_band,
    Dataset1D, FitResult,
};
use crate::presets::{presets, ScalePreset};
use crate::solver::{
    feasible_d_interval, ratios_to_macro, solve_structure, SolverOptions, StructuralSolution,
};

pub const LAWSET_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BAND_TOLERANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    PublishedConstant,
    UserFitted,
    SolverDerived,
    PresetInterpolated,
}

/// `y = multiplier * C^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub multiplier: f64,
    pub exponent: f64,
    pub provenance: Provenance,
}

impl PowerLaw {
    pub fn eval(&self, c: f64) -> f64 {
        self.multiplier * c.powf(self.exponent)
    }

    fn from_fit(fit: &FitResult) -> Result<Self> {
        Ok(Self {
            multiplier: fit.coef("multiplier")?,
            exponent: fit.coef("exponent")?,
            provenance: Provenance::UserFitted,
        })
    }
}

/// Power laws for the lower edge, optimum and upper edge of the hidden-size
/// band, all as functions of `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandLaws {
    pub lower: PowerLaw,
    pub opt: PowerLaw,
    pub upper: PowerLaw,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnaPreset {
    pub compute: f64,
    pub n_over_na: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NnaLookup {
    #[default]
    Nearest,
    LogLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSet {
    pub schema_version: u32,
    /// Training tokens `D(C)`.
    pub tokens_of_c: PowerLaw,
    /// FLOPs per token `M(C)`.
    pub m_of_c: PowerLaw,
    pub mna_of_c: Option<PowerLaw>,
    pub nna_presets: Vec<NnaPreset>,
    pub nna_provenance: Provenance,
    #[serde(default)]
    pub nna_lookup: NnaLookup,
    pub hidden_band: Option<BandLaws>,
    /// Compute range the laws were fitted on.
    pub fitted_range: (f64, f64),
}

impl Default for LawSet {
    /// Published budget laws and expansion-ratio presets only.
    fn default() -> Self {
        Self {
            schema_version: LAWSET_SCHEMA_VERSION,
            tokens_of_c: PowerLaw {
                multiplier: 22.8929,
                exponent: 0.4563,
                provenance: Provenance::PublishedConstant,
            },
            m_of_c: PowerLaw {
                multiplier: 0.04368,
                exponent: 0.5437,
                provenance: Provenance::PublishedConstant,
            },
            mna_of_c: None,
            nna_presets: presets()
                .iter()
                .map(|p| NnaPreset {
                    compute: p.compute,
                    n_over_na: p.nna_preset,
                })
                .collect(),
            nna_provenance: Provenance::PublishedConstant,
            nna_lookup: NnaLookup::Nearest,
            hidden_band: None,
            fitted_range: (1e18, 3e20),
        }
    }
}

impl LawSet {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != LAWSET_SCHEMA_VERSION {
            return Err(Error::LawSet(format!(
                "unsupported schema version {} (expected {LAWSET_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.nna_presets.is_empty() {
            return Err(Error::LawSet("no N/N_a presets".into()));
        }
        if self.nna_presets.windows(2).any(|w| w[0].compute >= w[1].compute) {
            return Err(Error::LawSet("N/N_a presets must be strictly increasing in C".into()));
        }
        Ok(())
    }

    /// Expansion ratio at `C` and whether `C` lies outside the preset range.
    pub fn nna_at(&self, c: f64) -> (f64, bool) {
        let p = &self.nna_presets;
        let (first, last) = (p[0], p[p.len() - 1]);
        if c <= first.compute {
            return (first.n_over_na, c < first.compute);
        }
        if c >= last.compute {
            return (last.n_over_na, c > last.compute);
        }
        let k = p.partition_point(|q| q.compute <= c);
        let (a, b) = (p[k - 1], p[k]);
        let t = (c.ln() - a.compute.ln()) / (b.compute.ln() - a.compute.ln());
        let v = match self.nna_lookup {
            NnaLookup::Nearest => {
                if t <= 0.5 {
                    a.n_over_na
                } else {
                    b.n_over_na
                }
            }
            NnaLookup::LogLinear => a.n_over_na + t * (b.n_over_na - a.n_over_na),
        };
        (v, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Valued {
    pub value: f64,
    pub provenance: Provenance,
}

fn valued(value: f64, provenance: Provenance) -> Valued {
    Valued { value, provenance }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub flops_per_token: f64,
    pub tokens: f64,
    /// `M * D / C`.
    pub product_ratio: f64,
}

/// Evaluate `M(C)` and `D(C)`, checking that their product returns `C`.
pub fn optimal_cmd(c: f64, laws: &LawSet) -> Result<Budget> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Domain(format!("compute must be positive, got {c}")));
    }
    let m = laws.m_of_c.eval(c);
    let d = laws.tokens_of_c.eval(c);
    let product_ratio = m * d / c;
    if (product_ratio - 1.0).abs() > 0.01 {
        return Err(Error::LawSet(format!(
            "M(C) * D(C) / C = {product_ratio:.6} is more than 1% away from 1"
        )));
    }
    Ok(Budget {
        flops_per_token: m,
        tokens: d,
        product_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Training {
    pub lr: Valued,
    pub batch: Valued,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenBand {
    pub d_l: f64,
    pub d_opt: f64,
    pub d_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub compute: f64,
    pub scale: String,
    pub status: DesignStatus,
    pub flops_per_token: Valued,
    pub tokens: Valued,
    pub m_over_na: Option<Valued>,
    pub n_over_na: Valued,
    pub active_params: Option<Valued>,
    pub total_params: Option<Valued>,
    pub hidden: Option<Valued>,
    pub band: Option<HiddenBand>,
    pub band_slack: Option<f64>,
    pub solution: Option<StructuralSolution>,
    pub training: Training,
    pub warnings: Vec<String>,
}

/// Piecewise linear interpolation in `(log x, log y)`, extrapolating with the
/// end segments.
fn loglog_interp(points: &[(f64, f64)], x: f64) -> f64 {
    if let Some(p) = points.iter().find(|p| p.0 == x) {
        return p.1;
    }
    if points.len() == 1 {
        return points[0].1;
    }
    let lx = x.ln();
    let k = points
        .partition_point(|p| p.0.ln() <= lx)
        .clamp(1, points.len() - 1);
    let (a, b) = (points[k - 1], points[k]);
    let t = (lx - a.0.ln()) / (b.0.ln() - a.0.ln());
    (a.1.ln() + t * (b.1.ln() - a.1.ln())).exp()
}

pub fn training_hyperparameters(c: f64) -> Training {
    let lr: Vec<(f64, f64)> = presets().iter().map(|p| (p.compute, p.lr)).collect();
    let batch: Vec<(f64, f64)> = presets().iter().map(|p| (p.compute, p.batch as f64)).collect();
    let prov = |pts: &[(f64, f64)], v: f64| {
        if pts.iter().any(|p| p.0 == c) {
            valued(v, Provenance::PublishedConstant)
        } else {
            valued(v, Provenance::PresetInterpolated)
        }
    };
    Training {
        lr: prov(&lr, loglog_interp(&lr, c)),
        batch: prov(&batch, loglog_interp(&batch, c)),
    }
}

pub fn design(
    c: f64,
    laws: &LawSet,
    preset: &ScalePreset,
    opts: &SolverOptions,
) -> Result<DesignReport> {
    laws.validate()?;
    let budget = optimal_cmd(c, laws).map_err(|e| Error::stage("budget", e))?;
    let mut warnings = Vec::new();
    let (lo, hi) = laws.fitted_range;
    if c < lo || c > hi {
        warnings.push(format!(
            "C = {c:e} lies outside the fitted range [{lo:e}, {hi:e}]: laws are extrapolated"
        ));
    }
    if (budget.product_ratio - 1.0).abs() > 0.005 {
        warnings.push(format!(
            "M(C) * D(C) / C = {:.5} differs from 1 by more than 0.5%",
            budget.product_ratio
        ));
    }
    let (nna, nna_out) = laws.nna_at(c);
    if nna_out {
        warnings.push(format!(
            "N/N_a preset held constant outside its compute range ({nna})"
        ));
    }
    let nna_prov = if laws.nna_presets.iter().any(|p| p.compute == c) {
        laws.nna_provenance
    } else {
        Provenance::PresetInterpolated
    };
    let mut report = DesignReport {
        compute: c,
        scale: preset.name.clone(),
        status: DesignStatus::Partial,
        flops_per_token: valued(budget.flops_per_token, laws.m_of_c.provenance),
        tokens: valued(budget.tokens, laws.tokens_of_c.provenance),
        m_over_na: None,
        n_over_na: valued(nna, nna_prov),
        active_params: None,
        total_params: None,
        hidden: None,
        band: None,
        band_slack: None,
        solution: None,
        training: training_hyperparameters(c),
        warnings,
    };

    let Some(mna_law) = laws.mna_of_c else {
        report.warnings.push(
            "no M/N_a law in the law set: it must be user-fitted before an architecture can be solved"
                .into(),
        );
        if laws.hidden_band.is_none() {
            report
                .warnings
                .push("no hidden-size band law in the law set: it must be user-fitted".into());
        }
        return Ok(report);
    };
    let mna = mna_law.eval(c);
    report.m_over_na = Some(valued(mna, mna_law.provenance));
    let target = ratios_to_macro(budget.flops_per_token, mna, nna, preset)
        .map_err(|e| Error::stage("active-params", e))?;
    report.active_params = Some(valued(target.active_params, Provenance::SolverDerived));
    report.total_params = Some(valued(target.total_params, Provenance::SolverDerived));

    let interval = feasible_d_interval(&target, opts).map_err(|e| Error::stage("hidden", e))?;
    let set = &interval.feasible_set;
    let nearest = |want: f64, pool: &mut dyn Iterator<Item = u64>| {
        pool.min_by(|a, b| {
            (*a as f64 - want)
                .abs()
                .total_cmp(&(*b as f64 - want).abs())
                .then(a.cmp(b))
        })
    };
    let (d, d_prov) = match laws.hidden_band {
        Some(b) => {
            let band = HiddenBand {
                d_l: b.lower.eval(c),
                d_opt: b.opt.eval(c),
                d_r: b.upper.eval(c),
            };
            report.band = Some(band);
            let inside = nearest(
                band.d_opt,
                &mut set
                    .iter()
                    .copied()
                    .filter(|d| (*d as f64) >= band.d_l && (*d as f64) <= band.d_r),
            );
            match inside {
                Some(d) => {
                    if d as f64 != band.d_opt {
                        report.warnings.push(format!(
                            "d = {:.1} from the band law snapped to feasible d = {d}",
                            band.d_opt
                        ));
                    }
                    report.band_slack = Some(b.tolerance);
                    (d, b.opt.provenance)
                }
                None => {
                    let d = nearest(band.d_opt, &mut set.iter().copied()).expect("non-empty");
                    report.warnings.push(format!(
                        "no feasible d inside [{:.1}, {:.1}]; using nearest feasible d = {d}",
                        band.d_l, band.d_r
                    ));
                    (d, Provenance::SolverDerived)
                }
            }
        }
        None => {
            report.warnings.push(format!(
                "no hidden-size band law in the law set: using the median feasible d = {}",
                interval.d_median
            ));
            (interval.d_median, Provenance::SolverDerived)
        }
    };
    report.hidden = Some(valued(d as f64, d_prov));
    let solution = solve_structure(&target, d, opts).map_err(|e| Error::stage("solve", e))?;
    report.solution = Some(solution);
    report.status = DesignStatus::Complete;
    Ok(report)
}

impl DesignReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let prov = |p: Provenance| serde_json::to_string(&p).unwrap_or_default().replace('"', "");
        let _ = writeln!(s, "compute budget C      {:e} FLOPs (scale {})", self.compute, self.scale);
        let _ = writeln!(s, "status                {:?}", self.status);
        let _ = writeln!(
            s,
            "M (FLOPs/token)       {:.4} GFLOPs [{}]",
            self.flops_per_token.value / 1e9,
            prov(self.flops_per_token.provenance)
        );
        let _ = writeln!(
            s,
            "D (tokens)            {:.4} B [{}]",
            self.tokens.value / 1e9,
            prov(self.tokens.provenance)
        );
        if let Some(v) = self.m_over_na {
            let _ = writeln!(s, "M/N_a                 {:.4} [{}]", v.value, prov(v.provenance));
        }
        let _ = writeln!(
            s,
            "N/N_a                 {:.4} [{}]",
            self.n_over_na.value,
            prov(self.n_over_na.provenance)
        );
        if let Some(v) = self.hidden {
            let _ = writeln!(s, "d                     {} [{}]", v.value, prov(v.provenance));
        }
        if let Some(sol) = &self.solution {
            let c = &sol.cfg;
            let _ = writeln!(
                s,
                "architecture          L_d={} L_m={} d={} d_d={} d_m={}",
                c.dense_layers, c.moe_layers, c.hidden, c.dense_ffn, c.expert_ffn
            );
            let a = &sol.achieved;
            let _ = writeln!(
                s,
                "achieved              M={} N_a={} N={} (max deviation {:.4})",
                a.flops_per_token,
                a.active_params,
                a.total_params,
                sol.max_deviation()
            );
        }
        let _ = writeln!(
            s,
            "training              lr={:.3e} batch={:.1}",
            self.training.lr.value, self.training.batch.value
        );
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Loss curves collected at one compute scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRuns {
    pub compute: f64,
    /// Loss against `M/N_a`.
    pub mna: Option<Dataset1D>,
    /// Loss against hidden size `d`.
    pub hidden: Option<Dataset1D>,
    /// Loss against `N/N_a`.
    pub nna: Option<Dataset1D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFit {
    pub compute: f64,
    pub mna: Option<FitResult>,
    pub hidden: Option<FitResult>,
    pub nna: Option<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSetFit {
    pub laws: LawSet,
    pub scales: Vec<ScaleFit>,
}

fn scale_failure(c: f64, e: Error) -> Error {
    match e {
        Error::FitFailure { family, reason } => Error::FitFailure {
            family,
            reason: format!("scale C = {c:e}: {reason}"),
        },
        other => Error::FitFailure {
            family: "per-scale".into(),
            reason: format!("scale C = {c:e}: {other}"),
        },
    }
}

fn power_law_over(points: Vec<(f64, f64)>) -> Result<PowerLaw> {
    PowerLaw::from_fit(&fit_power_law(&Dataset1D::new(points)?)?)
}

/// Fit per-scale curves, extract optima and bands, then fit power laws of
/// those quantities against `C`. The budget laws are carried over from
/// `base`.
pub fn fit_lawset(runs: &[ScaleRuns], base: &LawSet, tolerance: f64) -> Result<LawSetFit> {
    let mut runs: Vec<&ScaleRuns> = runs.iter().collect();
    runs.sort_by(|a, b| a.compute.total_cmp(&b.compute));
    if runs.windows(2).any(|w| w[0].compute == w[1].compute) {
        return Err(Error::LawSet("duplicate compute scale in runs".into()));
    }
    if let Some(r) = runs.iter().find(|r| !(r.compute.is_finite() && r.compute > 0.0)) {
        return Err(Error::Domain(format!("compute must be positive, got {}", r.compute)));
    }
    let mut scales = Vec::new();
    for r in &runs {
        let c = r.compute;
        let mna = r
            .mna
            .as_ref()
            .map(|d| {
                let fit = fit_inv_linear(d)?;
                if fit.x_opt.is_none() {
                    return Err(crate::fit::FitResult::no_optimum(&fit));
                }
                Ok(fit)
            })
            .transpose()
            .map_err(|e| scale_failure(c, e))?;
        let hidden = r
            .hidden
            .as_ref()
            .map(|d| {
                let mut fit = fit_quadratic(d)?;
                if fit.x_opt.is_none() {
                    return Err(crate::fit::FitResult::no_optimum(&fit));
                }
                fit.band = Some(near_optimal_band(&fit, tolerance)?);
                Ok(fit)
            })
            .transpose()
            .map_err(|e| scale_failure(c, e))?;
        let nna = r
            .nna
            .as_ref()
            .map(|d| {
                let fit = fit_bounded_rational(d, 1.0, 289.0 / 9.0)?;
                if fit.x_opt.is_none() {
                    return Err(crate::fit::FitResult::no_optimum(&fit));
                }
                Ok(fit)
            })
            .transpose()
            .map_err(|e| scale_failure(c, e))?;
        scales.push(ScaleFit {
            compute: c,
            mna,
            hidden,
            nna,
        });
    }

    let collect = |f: &dyn Fn(&ScaleFit) -> Option<f64>| -> Vec<(f64, f64)> {
        scales.iter().filter_map(|s| f(s).map(|v| (s.compute, v))).collect()
    };
    let need_two = |name: &str, n: usize| {
        if n < 2 {
            Err(Error::LawSet(format!(
                "{name} law needs at least 2 compute scales, got {n}"
            )))
        } else {
            Ok(())
        }
    };

    let mut laws = base.clone();
    let mna_pts = collect(&|s| s.mna.as_ref().and_then(|f| f.x_opt));
    let d_pts = collect(&|s| s.hidden.as_ref().and_then(|f| f.band).map(|b| b.x_opt));
    let nna_pts = collect(&|s| s.nna.as_ref().and_then(|f| f.x_opt));
    if mna_pts.is_empty() && d_pts.is_empty() && nna_pts.is_empty() {
        return Err(Error::LawSet("runs contain no loss curves".into()));
    }
    if !mna_pts.is_empty() {
        need_two("M/N_a", mna_pts.len())?;
        laws.mna_of_c = Some(power_law_over(mna_pts)?);
    }
    if !d_pts.is_empty() {
        need_two("hidden-size", d_pts.len())?;
        let pick = |g: fn(&crate::fit::Band) -> f64| -> Vec<(f64, f64)> {
            scales
                .iter()
                .filter_map(|s| s.hidden.as_ref().and_then(|f| f.band).map(|b| (s.compute, g(&b))))
                .collect()
        };
        laws.hidden_band = Some(BandLaws {
            lower: power_law_over(pick(|b| b.x_l))?,
            opt: power_law_over(pick(|b| b.x_opt))?,
            upper: power_law_over(pick(|b| b.x_r))?,
            tolerance,
        });
    }
    if !nna_pts.is_empty() {
        laws.nna_presets = nna_pts
            .into_iter()
            .map(|(compute, n_over_na)| NnaPreset { compute, n_over_na })
            .collect();
        laws.nna_provenance = Provenance::UserFitted;
    }
    let lo = runs.first().map(|r| r.compute).unwrap_or(base.fitted_range.0);
    let hi = runs.last().map(|r| r.compute).unwrap_or(base.fitted_range.1);
    laws.fitted_range = (lo, hi);
    laws.validate()?;
    Ok(LawSetFit { laws, scales })
}
