//! Inversion of the accounting equations: macroscopic targets plus one free
//! structural variable in, concrete integer architecture out.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{compute_metrics, ArchConfig, FixedShape, ResourceMetrics};
use crate::error::{Error, Result};
use crate::presets::ScalePreset;

pub const DEFAULT_QUANTUM: u64 = 8;
pub const DEFAULT_D_CAP: u64 = 1 << 14;
pub const MAX_DEVIATION: f64 = 0.05;

/// How the dense FFN width is tied to the other dimensions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenseRule {
    /// `d_d = gamma * d`.
    #[default]
    Gamma,
    /// `d_d = (K + 1) * d_m`: dense layers match the active MoE width.
    MatchMoeActive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub quantum: u64,
    pub max_deviation: f64,
    pub allow_zero_dense: bool,
    pub dense_rule: DenseRule,
    pub d_cap: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quantum: DEFAULT_QUANTUM,
            max_deviation: MAX_DEVIATION,
            allow_zero_dense: false,
            dense_rule: DenseRule::Gamma,
            d_cap: DEFAULT_D_CAP,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        check_quantum(self.quantum)?;
        if !(self.max_deviation.is_finite() && self.max_deviation >= 0.0) {
            return Err(Error::BadInput(format!(
                "max deviation must be a non-negative number, got {}",
                self.max_deviation
            )));
        }
        if self.d_cap < self.quantum {
            return Err(Error::BadInput(format!(
                "d cap {} is below the quantum {}",
                self.d_cap, self.quantum
            )));
        }
        Ok(())
    }
}

/// The joint `(M, N_a, N)` target together with the scale's fixed shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroTarget {
    pub flops_per_token: f64,
    pub active_params: f64,
    pub total_params: f64,
    pub shape: FixedShape,
}

impl MacroTarget {
    pub fn from_metrics(metrics: &ResourceMetrics, shape: FixedShape) -> Self {
        Self {
            flops_per_token: metrics.flops_per_token as f64,
            active_params: metrics.active_params as f64,
            total_params: metrics.total_params as f64,
            shape,
        }
    }

    pub fn m_over_na(&self) -> f64 {
        self.flops_per_token / self.active_params
    }

    pub fn n_over_na(&self) -> f64 {
        self.total_params / self.active_params
    }

    /// Real-valued total layer count implied by the attention FLOPs.
    pub fn layers(&self) -> f64 {
        let s = &self.shape;
        (self.flops_per_token - 6.0 * self.active_params)
            / (6.0 * s.seq_len as f64 * s.q_heads as f64 * s.head_dim as f64)
    }

    fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("M", self.flops_per_token),
            ("N_a", self.active_params),
            ("N", self.total_params),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::BadInput(format!("{name} must be positive, got {v}")));
            }
        }
        self.shape.validate()
    }
}

/// One rounding decision: the exact real value and the integer it became.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingStep {
    pub field: String,
    pub exact: f64,
    pub rounded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralSolution {
    pub cfg: ArchConfig,
    pub achieved: ResourceMetrics,
    pub deviation_m: f64,
    pub deviation_na: f64,
    pub deviation_n: f64,
    pub rounding_trace: Vec<RoundingStep>,
}

impl StructuralSolution {
    pub fn max_deviation(&self) -> f64 {
        self.deviation_m.max(self.deviation_na).max(self.deviation_n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibleInterval {
    pub d_min: u64,
    pub d_max: u64,
    pub d_median: u64,
    pub feasible_set: Vec<u64>,
}

fn check_quantum(quantum: u64) -> Result<()> {
    if matches!(quantum, 8 | 16 | 32) {
        Ok(())
    } else {
        Err(Error::BadInput(format!(
            "quantum must be 8, 16 or 32, got {quantum}"
        )))
    }
}

/// Nearest positive multiple of `quantum`, ties toward the larger multiple,
/// never below one quantum.
pub fn hardware_round(value: f64, quantum: u64) -> Result<u64> {
    check_quantum(quantum)?;
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::RoundingReject {
            max_deviation: f64::INFINITY,
            limit: MAX_DEVIATION,
            trace: vec![RoundingStep {
                field: "value".into(),
                exact: value,
                rounded: 0,
            }],
        });
    }
    let q = quantum as f64;
    let k = (value / q + 0.5).floor().max(1.0);
    Ok(k as u64 * quantum)
}

/// Nearest integer first, then the other neighbour; values below `min` are
/// dropped, duplicates removed.
fn int_candidates(x: f64, min: u64) -> Vec<u64> {
    if !x.is_finite() {
        return Vec::new();
    }
    let nearest = (x + 0.5).floor();
    let other = if nearest > x { x.floor() } else { x.ceil() };
    let mut out = Vec::with_capacity(2);
    for v in [nearest, other] {
        if v >= min as f64 && v < 1e15 {
            let v = v as u64;
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    out
}

fn quantum_candidates(x: f64, quantum: u64) -> Vec<u64> {
    if !(x.is_finite() && x > 0.0) {
        return Vec::new();
    }
    let q = quantum as f64;
    int_candidates(x / q, 1).into_iter().map(|k| k * quantum).collect()
}

fn relative(achieved: f64, target: f64) -> f64 {
    (achieved - target).abs() / target
}

struct Candidate {
    solution: StructuralSolution,
    score: f64,
}

fn evaluate(target: &MacroTarget, cfg: ArchConfig, trace: Vec<RoundingStep>) -> Option<Candidate> {
    let achieved = compute_metrics(&cfg).ok()?;
    let deviation_m = relative(achieved.flops_per_token as f64, target.flops_per_token);
    let deviation_na = relative(achieved.active_params as f64, target.active_params);
    let deviation_n = relative(achieved.total_params as f64, target.total_params);
    let solution = StructuralSolution {
        cfg,
        achieved,
        deviation_m,
        deviation_na,
        deviation_n,
        rounding_trace: trace,
    };
    let score = solution.max_deviation();
    Some(Candidate { solution, score })
}

fn step(field: &str, exact: f64, rounded: u64) -> RoundingStep {
    RoundingStep {
        field: field.into(),
        exact,
        rounded,
    }
}

/// Solve for `(L_d, L_m, d_m)` at a fixed hidden size.
///
/// `L` is rounded first, then `L_m` is recomputed from the rounded `L`, then
/// `d_m` is rounded to the quantum. Both neighbours of each value are tried
/// and the combination with the smallest worst-case deviation wins.
pub fn solve_structure(
    target: &MacroTarget,
    d: u64,
    opts: &SolverOptions,
) -> Result<StructuralSolution> {
    opts.validate()?;
    target.check_finite()?;
    if d == 0 || !d.is_multiple_of(opts.quantum) {
        return Err(Error::BadInput(format!(
            "d = {d} is not a positive multiple of {}",
            opts.quantum
        )));
    }
    let s = &target.shape;
    let layers = target.layers();
    if layers <= 0.0 {
        return Err(Error::InfeasibleM {
            m: target.flops_per_token,
            layers,
        });
    }
    let na = target.active_params;
    let df = d as f64;
    let k1 = (s.top_k + 1) as f64;
    let x = (target.total_params - na) / (3.0 * df * (s.experts - s.top_k) as f64);
    if x <= 0.0 {
        return Err(Error::InfeasibleShape(format!(
            "N - N_a = {} leaves no inactive expert mass to place",
            target.total_params - na
        )));
    }
    let attn = 2.0 * (s.q_heads + s.kv_heads) as f64 * s.head_dim as f64 * df;
    let min_dense = if opts.allow_zero_dense { 0 } else { 1 };

    let mut best: Option<Candidate> = None;
    let mut consider = |c: Option<Candidate>| {
        if let Some(c) = c {
            if best.as_ref().is_none_or(|b| c.score < b.score) {
                best = Some(c);
            }
        }
    };

    for l in int_candidates(layers, 1) {
        let lf = l as f64;
        match opts.dense_rule {
            DenseRule::Gamma => {
                let dense_ffn_exact = s.gamma * df;
                let dense_ffn = (dense_ffn_exact + 0.5).floor().max(1.0) as u64;
                let dense_unit = s.gamma * 3.0 * df * df;
                let lm_exact = ((attn + dense_unit) * lf + 3.0 * df * k1 * x - na) / dense_unit;
                for lm in int_candidates(lm_exact, 1) {
                    if lm > l || l - lm < min_dense {
                        continue;
                    }
                    let dm_exact = x / lm as f64;
                    for dm in quantum_candidates(dm_exact, opts.quantum) {
                        let cfg = ArchConfig::from_shape(s, d, l - lm, lm, dense_ffn, dm);
                        let trace = vec![
                            step("layers", layers, l),
                            step("moe_layers", lm_exact, lm),
                            step("dense_layers", layers - lm_exact, l - lm),
                            step("expert_ffn", dm_exact, dm),
                            step("dense_ffn", dense_ffn_exact, dense_ffn),
                        ];
                        consider(evaluate(target, cfg, trace));
                    }
                }
            }
            DenseRule::MatchMoeActive => {
                let dm_exact = (na - attn * lf) / (3.0 * df * k1 * lf);
                for dm in quantum_candidates(dm_exact, opts.quantum) {
                    let lm_exact = x / dm as f64;
                    for lm in int_candidates(lm_exact, 1) {
                        if lm > l || l - lm < min_dense {
                            continue;
                        }
                        let dense_ffn = dm * (s.top_k + 1);
                        let cfg = ArchConfig::from_shape(s, d, l - lm, lm, dense_ffn, dm);
                        let trace = vec![
                            step("layers", layers, l),
                            step("expert_ffn", dm_exact, dm),
                            step("moe_layers", lm_exact, lm),
                            step("dense_layers", layers - lm_exact, l - lm),
                            step("dense_ffn", dm_exact * k1, dense_ffn),
                        ];
                        consider(evaluate(target, cfg, trace));
                    }
                }
            }
        }
    }

    match best {
        None => Err(Error::InfeasibleShape(format!(
            "no integer split with L_m >= 1 and L_d >= {min_dense} near L = {layers:.4} at d = {d}"
        ))),
        Some(c) if c.score <= opts.max_deviation => Ok(c.solution),
        Some(c) => Err(Error::RoundingReject {
            max_deviation: c.score,
            limit: opts.max_deviation,
            trace: c.solution.rounding_trace,
        }),
    }
}

/// Every accepted solution over `d = quantum, 2 quantum, ..., d_cap`,
/// ordered by `d`.
pub fn scan_d(target: &MacroTarget, opts: &SolverOptions) -> Result<Vec<StructuralSolution>> {
    opts.validate()?;
    target.check_finite()?;
    if target.total_params < target.active_params {
        return Err(Error::InfeasibleTarget(format!(
            "N = {} is below N_a = {}",
            target.total_params, target.active_params
        )));
    }
    let layers = target.layers();
    if layers <= 0.0 {
        return Err(Error::InfeasibleM {
            m: target.flops_per_token,
            layers,
        });
    }
    let steps = opts.d_cap / opts.quantum;
    Ok((1..=steps)
        .into_par_iter()
        .filter_map(|k| solve_structure(target, k * opts.quantum, opts).ok())
        .collect())
}

/// Lower median of a sorted, non-empty slice.
pub fn lower_median(sorted: &[u64]) -> u64 {
    sorted[(sorted.len() - 1) / 2]
}

pub fn feasible_d_interval(target: &MacroTarget, opts: &SolverOptions) -> Result<FeasibleInterval> {
    let set: Vec<u64> = scan_d(target, opts)?.iter().map(|s| s.cfg.hidden).collect();
    if set.is_empty() {
        return Err(Error::InfeasibleTarget(format!(
            "no hidden size up to {} admits an accepted solution (M/N_a = {:.4}, N/N_a = {:.4})",
            opts.d_cap,
            target.m_over_na(),
            target.n_over_na()
        )));
    }
    Ok(FeasibleInterval {
        d_min: set[0],
        d_max: *set.last().unwrap(),
        d_median: lower_median(&set),
        feasible_set: set,
    })
}

pub fn ratios_to_macro(
    m: f64,
    m_over_na: f64,
    n_over_na: f64,
    preset: &ScalePreset,
) -> Result<MacroTarget> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::Domain(format!("M must be positive, got {m}")));
    }
    if !(m_over_na > 6.0 && m_over_na.is_finite()) {
        return Err(Error::Domain(format!(
            "M/N_a = {m_over_na} must exceed the lower bound 6"
        )));
    }
    let upper = preset.shape.max_expansion();
    if !(n_over_na > 1.0 && n_over_na < upper) {
        return Err(Error::Domain(format!(
            "N/N_a = {n_over_na} must lie in the open interval (1, {upper:.6})"
        )));
    }
    let na = m / m_over_na;
    Ok(MacroTarget {
        flops_per_token: m,
        active_params: na,
        total_params: n_over_na * na,
        shape: preset.shape,
    })
}

/// Residual of the width-ratio equation at real hidden size `d`. Increasing
/// in `d` for `d > 0`.
pub fn width_ratio_residual(target: &MacroTarget, rho: f64, layers: f64, d: f64) -> f64 {
    let s = &target.shape;
    let k1 = (s.top_k + 1) as f64;
    let spread = (target.total_params - target.active_params) * k1 / (s.experts - s.top_k) as f64;
    3.0 * s.gamma * layers * d * d
        + 2.0 * (s.q_heads + s.kv_heads) as f64 * s.head_dim as f64 * layers * d
        + spread * (1.0 - s.gamma / rho)
        - target.active_params
}

/// Solve with `(K+1) d_m / d` fixed to `rho` instead of fixing `d`.
pub fn solve_by_width_ratio(
    target: &MacroTarget,
    rho: f64,
    opts: &SolverOptions,
) -> Result<StructuralSolution> {
    opts.validate()?;
    target.check_finite()?;
    let infeasible = |reason: String| Error::InfeasibleRatio { rho, reason };
    if !(rho.is_finite() && rho > 0.0) {
        return Err(infeasible("ratio must be positive".into()));
    }
    if opts.dense_rule != DenseRule::Gamma {
        return Err(Error::BadInput(
            "width-ratio solving requires the gamma dense rule".into(),
        ));
    }
    let layers = target.layers();
    if layers <= 0.0 {
        return Err(Error::InfeasibleM {
            m: target.flops_per_token,
            layers,
        });
    }
    if target.total_params <= target.active_params {
        return Err(infeasible("N must exceed N_a".into()));
    }
    let q = opts.quantum as f64;
    let k1 = (target.shape.top_k + 1) as f64;
    let f = |d: f64| width_ratio_residual(target, rho, layers, d);
    let (mut lo, mut hi) = (q, opts.d_cap as f64);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(infeasible(format!(
            "no hidden size in [{lo}, {hi}] satisfies the constraint system"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-9 * hi {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    if rho * root / k1 < q {
        return Err(infeasible(format!(
            "implied expert width {:.3} is below one quantum",
            rho * root / k1
        )));
    }
    let base = (root / q).floor() as u64;
    let mut ks: Vec<u64> = [base, base + 1, base.saturating_sub(1), base + 2]
        .into_iter()
        .filter(|&k| k >= 1 && k * opts.quantum <= opts.d_cap)
        .collect();
    ks.sort_by(|a, b| {
        let da = (*a as f64 * q - root).abs();
        let db = (*b as f64 * q - root).abs();
        da.total_cmp(&db)
    });
    let mut best: Option<StructuralSolution> = None;
    let mut last_err = None;
    for k in ks {
        match solve_structure(target, k * opts.quantum, opts) {
            Ok(sol) => {
                let gap = (sol.cfg.width_ratio() - rho).abs();
                if best
                    .as_ref()
                    .is_none_or(|b| gap < (b.cfg.width_ratio() - rho).abs())
                {
                    best = Some(sol);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        infeasible(format!(
            "no accepted solution near d = {root:.2}: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))
    })
}
