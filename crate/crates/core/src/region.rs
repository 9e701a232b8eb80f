//! Feasible-region maps at fixed `M`, the ratio-space experiment grid and
//! hidden-size sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::presets::ScalePreset;
use crate::solver::{
    feasible_d_interval, ratios_to_macro, scan_d, solve_structure, FeasibleInterval, MacroTarget,
    SolverOptions, StructuralSolution,
};

pub const DEFAULT_M_GRID: [f64; 6] = [7.0, 8.0, 9.0, 11.0, 14.0, 17.0];
pub const DEFAULT_N_GRID: [f64; 6] = [12.0, 16.0, 20.0, 22.0, 26.0, 30.0];

/// Cell layout over the admissible ratio box `(6, m_max] x (1, (N_e+1)/(K+1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub m_steps: usize,
    pub n_steps: usize,
    pub m_max: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            m_steps: 64,
            n_steps: 64,
            m_max: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub i: usize,
    pub j: usize,
    pub m_over_na: f64,
    pub n_over_na: f64,
    pub active_params: f64,
    pub total_params: f64,
    pub d_min: Option<u64>,
    pub d_max: Option<u64>,
    pub d_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub flops_per_token: f64,
    pub resolution: Resolution,
    pub cells: Vec<RegionCell>,
}

impl RegionMap {
    pub fn feasible_cells(&self) -> impl Iterator<Item = &RegionCell> {
        self.cells.iter().filter(|c| c.d_count > 0)
    }
}

pub fn map_region(
    m: f64,
    preset: &ScalePreset,
    resolution: &Resolution,
    opts: &SolverOptions,
) -> Result<RegionMap> {
    opts.validate()?;
    if resolution.m_steps == 0 || resolution.n_steps == 0 {
        return Err(Error::BadInput("resolution must have at least one cell per axis".into()));
    }
    if !(resolution.m_max > 6.0 && resolution.m_max.is_finite()) {
        return Err(Error::BadInput(format!(
            "m_max must exceed 6, got {}",
            resolution.m_max
        )));
    }
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::Domain(format!("M must be positive, got {m}")));
    }
    let n_hi = preset.shape.max_expansion();
    let (ms, ns) = (resolution.m_steps, resolution.n_steps);
    let cells: Vec<RegionCell> = (0..ms * ns)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / ns, idx % ns);
            let mna = 6.0 + (i as f64 + 0.5) * (resolution.m_max - 6.0) / ms as f64;
            let nna = 1.0 + (j as f64 + 0.5) * (n_hi - 1.0) / ns as f64;
            let target = ratios_to_macro(m, mna, nna, preset)?;
            let feasible = scan_d(&target, opts)?;
            Ok(RegionCell {
                i,
                j,
                m_over_na: mna,
                n_over_na: nna,
                active_params: target.active_params,
                total_params: target.total_params,
                d_min: feasible.first().map(|s| s.cfg.hidden),
                d_max: feasible.last().map(|s| s.cfg.hidden),
                d_count: feasible.len(),
            })
        })
        .collect::<Result<_>>()?;
    if cells.iter().all(|c| c.d_count == 0) {
        let densest = MacroTarget {
            flops_per_token: m,
            active_params: m / (6.0 + 0.5 * (resolution.m_max - 6.0) / ms as f64),
            total_params: m,
            shape: preset.shape,
        };
        return Err(Error::InfeasibleM {
            m,
            layers: densest.layers(),
        });
    }
    Ok(RegionMap {
        flops_per_token: m,
        resolution: *resolution,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub m_over_na: f64,
    pub n_over_na: f64,
    pub target: MacroTarget,
    pub interval: FeasibleInterval,
    pub solution: StructuralSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleCell {
    pub m_over_na: f64,
    pub n_over_na: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub scale: ScalePreset,
    pub m_grid: Vec<f64>,
    pub n_grid: Vec<f64>,
    pub points: Vec<GridPoint>,
    pub infeasible: Vec<InfeasibleCell>,
}

/// One target per ratio cell, solved at the median of its feasible `d` range.
pub fn generate_grid(
    scale: &ScalePreset,
    m_grid: &[f64],
    n_grid: &[f64],
    opts: &SolverOptions,
) -> Result<ExperimentGrid> {
    opts.validate()?;
    let mut targets = Vec::with_capacity(m_grid.len() * n_grid.len());
    for &mna in m_grid {
        for &nna in n_grid {
            targets.push((mna, nna, ratios_to_macro(scale.m_target, mna, nna, scale)?));
        }
    }
    let outcomes: Vec<std::result::Result<GridPoint, InfeasibleCell>> = targets
        .into_par_iter()
        .map(|(mna, nna, target)| {
            let infeasible = |e: Error| InfeasibleCell {
                m_over_na: mna,
                n_over_na: nna,
                reason: e.to_string(),
            };
            let interval = feasible_d_interval(&target, opts).map_err(infeasible)?;
            let solution =
                solve_structure(&target, interval.d_median, opts).map_err(infeasible)?;
            Ok(GridPoint {
                m_over_na: mna,
                n_over_na: nna,
                target,
                interval,
                solution,
            })
        })
        .collect();
    let mut points = Vec::new();
    let mut infeasible = Vec::new();
    for o in outcomes {
        match o {
            Ok(p) => points.push(p),
            Err(c) => infeasible.push(c),
        }
    }
    Ok(ExperimentGrid {
        scale: scale.clone(),
        m_grid: m_grid.to_vec(),
        n_grid: n_grid.to_vec(),
        points,
        infeasible,
    })
}

/// Every accepted `(d, solution)` pair, strictly increasing in `d`.
pub fn sweep_d(target: &MacroTarget, opts: &SolverOptions) -> Result<Vec<(u64, StructuralSolution)>> {
    let sols = scan_d(target, opts)?;
    if sols.is_empty() {
        return Err(Error::InfeasibleTarget(format!(
            "no hidden size up to {} admits an accepted solution",
            opts.d_cap
        )));
    }
    Ok(sols.into_iter().map(|s| (s.cfg.hidden, s)).collect())
}

/// Index of the nearest grid value and whether it is the unique nearest.
pub fn nearest_index(value: f64, grid: &[f64]) -> Option<(usize, bool)> {
    let mut order: Vec<(usize, f64)> = grid
        .iter()
        .enumerate()
        .map(|(i, g)| (i, (g - value).abs()))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    let &(best, dist) = order.first()?;
    let unique = order.get(1).is_none_or(|&(_, next)| next - dist > 1e-12);
    Some((best, unique))
}

/// Nearest `(m, n)` cell; `None` when either axis is tied.
pub fn nearest_cell(m_over_na: f64, n_over_na: f64, m_grid: &[f64], n_grid: &[f64]) -> Option<(usize, usize)> {
    let (i, ui) = nearest_index(m_over_na, m_grid)?;
    let (j, uj) = nearest_index(n_over_na, n_grid)?;
    (ui && uj).then_some((i, j))
}
