//! Synthetic loss landscapes for checking the median-proxy grid search and
//! the follow-up hidden-size sweep against exhaustive search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_quadratic, rank_stats, Dataset1D, RankStats};
use crate::pipeline::ScaleRuns;
use crate::presets::preset;
use crate::region::generate_grid;
use crate::solver::{lower_median, SolverOptions};

/// Seeds used by the shipped scenarios.
pub const SHIPPED_SEEDS: [u64; 20] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20,
];

pub const SUBSET_M_GRID: [f64; 4] = [7.0, 9.0, 14.0, 17.0];
pub const SUBSET_N_GRID: [f64; 4] = [12.0, 20.0, 26.0, 30.0];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b) ^ c)`.
pub fn cell_hash(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b) ^ c)
}

/// Top 53 bits of the hash mapped to `[-1, 1)`.
pub fn signed_unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

const SALT_SIDE: u64 = u64::MAX;
const SALT_BASE: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeCell {
    pub m_over_na: f64,
    pub n_over_na: f64,
    pub feasible: Vec<u64>,
    pub d_median: u64,
    pub d_star: u64,
    pub base: f64,
}

/// `loss(cell, d) = f(m) + g(n) + e * ((d - d*) / (d_med - d*))^2 + amp * u(cell, d, seed)`
///
/// `f(m) = a / (m - 6) + b m + c` and `g(n) = a' / (n - 1) + b' / (c_2 - n)`.
/// `d*` is a feasible hidden size at least a quarter of the feasible span
/// away from the median, so the hidden-size term never exceeds
/// `16 e = curvature_frac * gap_min` and equals `e` at the median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLandscape {
    pub seed: u64,
    pub perturb_amp: f64,
    pub curvature_frac: f64,
    /// `(a, b, c)` of the density term.
    pub base_m: [f64; 3],
    /// `(a', b', c_2)` of the expansion term.
    pub base_n: [f64; 3],
    pub gap_min: f64,
    pub median_excess: f64,
    pub cells: Vec<LandscapeCell>,
}

/// Grid cells and their feasible hidden sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub cells: Vec<(f64, f64, Vec<u64>)>,
}

impl LandscapeGrid {
    /// Feasible sets from the smallest preset's solver over the given grids.
    pub fn from_solver(m_grid: &[f64], n_grid: &[f64]) -> Result<Self> {
        let grid = generate_grid(preset("1e18")?, m_grid, n_grid, &SolverOptions::default())?;
        Ok(Self {
            cells: grid
                .points
                .into_iter()
                .map(|p| (p.m_over_na, p.n_over_na, p.interval.feasible_set))
                .collect(),
        })
    }
}

impl SyntheticLandscape {
    pub fn new(grid: &LandscapeGrid, seed: u64, curvature_frac: f64) -> Result<Self> {
        if grid.cells.len() < 2 {
            return Err(Error::BadInput("landscape needs at least two cells".into()));
        }
        if !(curvature_frac.is_finite() && (0.0..1.0).contains(&curvature_frac)) {
            return Err(Error::BadInput(format!(
                "curvature fraction must lie in [0, 1), got {curvature_frac}"
            )));
        }
        let jitter = |k: u64| 1.0 + 0.2 * signed_unit(cell_hash(seed, SALT_BASE, k, 0));
        let base_m = [0.5 * jitter(0), 0.05 * jitter(1), 2.0];
        let base_n = [2.0 * jitter(2), 5.0 * jitter(3), 289.0 / 9.0];
        let f = |m: f64| base_m[0] / (m - 6.0) + base_m[1] * m + base_m[2];
        let g = |n: f64| base_n[0] / (n - 1.0) + base_n[1] / (base_n[2] - n);

        let mut cells = Vec::with_capacity(grid.cells.len());
        for (idx, (m, n, feasible)) in grid.cells.iter().enumerate() {
            if feasible.is_empty() || feasible.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::BadInput(format!(
                    "cell {idx} needs a non-empty, strictly increasing feasible set"
                )));
            }
            if !(*m > 6.0 && *n > 1.0 && *n < base_n[2]) {
                return Err(Error::Domain(format!("cell ({m}, {n}) outside the ratio box")));
            }
            let d_median = lower_median(feasible);
            let (lo, hi) = (feasible[0], *feasible.last().unwrap());
            let quarter = (hi - lo) as f64 / 4.0;
            let up = feasible.iter().copied().find(|d| *d as f64 >= d_median as f64 + quarter);
            let down = feasible.iter().rev().copied().find(|d| *d as f64 <= d_median as f64 - quarter);
            let prefer_up = cell_hash(seed, idx as u64, 0, SALT_SIDE) & 1 == 1;
            let side = if prefer_up { up.or(down) } else { down.or(up) };
            let d_star = side.filter(|d| *d != d_median).unwrap_or(d_median);
            cells.push(LandscapeCell {
                m_over_na: *m,
                n_over_na: *n,
                feasible: feasible.clone(),
                d_median,
                d_star,
                base: f(*m) + g(*n),
            });
        }
        let mut bases: Vec<f64> = cells.iter().map(|c| c.base).collect();
        bases.sort_by(f64::total_cmp);
        let gap_min = bases
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !gap_min.is_finite() {
            return Err(Error::BadInput("all cells share the same base loss".into()));
        }
        Ok(Self {
            seed,
            perturb_amp: 0.0,
            curvature_frac,
            base_m,
            base_n,
            gap_min,
            median_excess: curvature_frac * gap_min / 16.0,
            cells,
        })
    }

    /// Set the perturbation amplitude as a fraction of the minimum gap.
    pub fn with_relative_amp(mut self, frac: f64) -> Self {
        self.perturb_amp = frac * self.gap_min;
        self
    }

    fn d_term(&self, cell: &LandscapeCell, d: u64) -> f64 {
        if cell.d_star == cell.d_median {
            return self.median_excess;
        }
        let r = (d as f64 - cell.d_star as f64) / (cell.d_median as f64 - cell.d_star as f64);
        self.median_excess * r * r
    }

    pub fn evaluate(&self, cell: usize, d: u64) -> Result<f64> {
        let c = self
            .cells
            .get(cell)
            .ok_or_else(|| Error::Domain(format!("cell {cell} is outside the grid")))?;
        if c.feasible.binary_search(&d).is_err() {
            return Err(Error::Domain(format!(
                "d = {d} is not in the feasible set of cell {cell}"
            )));
        }
        let noise = if self.perturb_amp == 0.0 {
            0.0
        } else {
            self.perturb_amp * signed_unit(cell_hash(self.seed, cell as u64, 0, d))
        };
        Ok(c.base + self.d_term(c, d) + noise)
    }

    /// Smallest loss over a cell's feasible set and the `d` attaining it.
    pub fn cell_minimum(&self, cell: usize) -> Result<(u64, f64)> {
        let c = self
            .cells
            .get(cell)
            .ok_or_else(|| Error::Domain(format!("cell {cell} is outside the grid")))?;
        let mut best = (0, f64::INFINITY);
        for &d in &c.feasible {
            let l = self.evaluate(cell, d)?;
            if l < best.1 {
                best = (d, l);
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub seed: u64,
    pub perturb_amp: f64,
    pub phase1_pick: usize,
    pub phase1_d: u64,
    pub phase2_vertex: Option<f64>,
    pub phase2_d: u64,
    pub brute_cell: usize,
    pub brute_d: u64,
    pub brute_loss: f64,
    /// Best loss reachable in the Phase-1 cell minus the global optimum.
    pub regret: f64,
    /// Loss at the Phase-2 hidden size minus the best loss in that cell.
    pub d_regret: f64,
    pub flipped: bool,
    pub rank_stats: RankStats,
    pub proxy_losses: Vec<f64>,
    pub true_minima: Vec<f64>,
}

pub fn two_phase_search(land: &SyntheticLandscape) -> Result<SearchOutcome> {
    let n = land.cells.len();
    let mut proxy = Vec::with_capacity(n);
    let mut minima = Vec::with_capacity(n);
    let mut brute = (0usize, 0u64, f64::INFINITY);
    for i in 0..n {
        proxy.push(land.evaluate(i, land.cells[i].d_median)?);
        let (d, l) = land.cell_minimum(i)?;
        minima.push(l);
        if l < brute.2 {
            brute = (i, d, l);
        }
    }
    let pick = (0..n)
        .min_by(|a, b| proxy[*a].total_cmp(&proxy[*b]))
        .expect("non-empty grid");

    let cell = &land.cells[pick];
    let sweep: Vec<(f64, f64)> = cell
        .feasible
        .iter()
        .map(|d| Ok((*d as f64, land.evaluate(pick, *d)?)))
        .collect::<Result<_>>()?;
    let vertex = if sweep.len() >= 3 {
        fit_quadratic(&Dataset1D::new(sweep.clone())?)?.x_opt
    } else {
        None
    };
    let phase2_d = match vertex {
        Some(v) => *cell
            .feasible
            .iter()
            .min_by(|a, b| (**a as f64 - v).abs().total_cmp(&(**b as f64 - v).abs()))
            .expect("non-empty"),
        None => sweep
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|p| p.0 as u64)
            .expect("non-empty"),
    };
    let regret = minima[pick] - brute.2;
    let d_regret = land.evaluate(pick, phase2_d)? - minima[pick];
    Ok(SearchOutcome {
        seed: land.seed,
        perturb_amp: land.perturb_amp,
        phase1_pick: pick,
        phase1_d: cell.d_median,
        phase2_vertex: vertex,
        phase2_d,
        brute_cell: brute.0,
        brute_d: brute.1,
        brute_loss: brute.2,
        regret,
        d_regret,
        flipped: pick != brute.0,
        rank_stats: rank_stats(&proxy, &minima)?,
        proxy_losses: proxy,
        true_minima: minima,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub seed: u64,
    pub perturb_amp: f64,
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    pub p_pearson: f64,
    pub p_spearman: f64,
    pub p_kendall: f64,
    pub regret: f64,
    pub d_regret: f64,
    pub flipped: bool,
    /// Least-squares line `true_min = slope * proxy + intercept`.
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub seed: u64,
    pub cell: usize,
    pub m_over_na: f64,
    pub n_over_na: f64,
    pub proxy_loss: f64,
    pub true_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyReport {
    pub relative_amp: f64,
    pub curvature_frac: f64,
    pub rows: Vec<ReplicateRow>,
    pub mean_pearson: f64,
    pub mean_spearman: f64,
    pub mean_kendall: f64,
    pub max_regret: f64,
    pub scatter: Vec<ScatterPoint>,
}

fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// One landscape per seed, amplitude given relative to each landscape's
/// minimum gap.
pub fn proxy_validation_report(
    grid: &LandscapeGrid,
    seeds: &[u64],
    relative_amp: f64,
    curvature_frac: f64,
) -> Result<ProxyReport> {
    if seeds.len() < 2 {
        return Err(Error::BadInput("need at least 2 replicates".into()));
    }
    let mut rows = Vec::new();
    let mut scatter = Vec::new();
    for &seed in seeds {
        let land = SyntheticLandscape::new(grid, seed, curvature_frac)?.with_relative_amp(relative_amp);
        let o = two_phase_search(&land)?;
        let (slope, intercept) = ols_line(&o.proxy_losses, &o.true_minima);
        for (i, c) in land.cells.iter().enumerate() {
            scatter.push(ScatterPoint {
                seed,
                cell: i,
                m_over_na: c.m_over_na,
                n_over_na: c.n_over_na,
                proxy_loss: o.proxy_losses[i],
                true_min: o.true_minima[i],
            });
        }
        let s = o.rank_stats;
        rows.push(ReplicateRow {
            seed,
            perturb_amp: land.perturb_amp,
            pearson_r: s.pearson_r,
            spearman_rho: s.spearman_rho,
            kendall_tau: s.kendall_tau,
            p_pearson: s.p_pearson,
            p_spearman: s.p_spearman,
            p_kendall: s.p_kendall,
            regret: o.regret,
            d_regret: o.d_regret,
            flipped: o.flipped,
            slope,
            intercept,
        });
    }
    let mean = |f: fn(&ReplicateRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    Ok(ProxyReport {
        relative_amp,
        curvature_frac,
        mean_pearson: mean(|r| r.pearson_r),
        mean_spearman: mean(|r| r.spearman_rho),
        mean_kendall: mean(|r| r.kendall_tau),
        max_regret: rows.iter().map(|r| r.regret).fold(0.0, f64::max),
        rows,
        scatter,
    })
}

/// Per-scale loss-vs-`d` curves whose 0.1% band widens with compute:
/// `loss = L0(C) + kappa(C) (d - d_opt(C))^2` with
/// `d_opt = 900 (C/1e18)^0.12` and band half-width `150 (C/1e18)^0.15`.
pub fn widening_band_runs(computes: &[f64], tolerance: f64) -> Result<Vec<ScaleRuns>> {
    computes
        .iter()
        .map(|&c| {
            let r = c / 1e18;
            let d_opt = 900.0 * r.powf(0.12);
            let half = 150.0 * r.powf(0.15);
            let l0 = 3.0 * r.powf(-0.05);
            let kappa = tolerance * l0 / (half * half);
            let pts: Vec<(f64, f64)> = (0..17)
                .map(|k| {
                    let d = d_opt - 2.0 * half + k as f64 * half / 4.0;
                    (d, l0 + kappa * (d - d_opt).powi(2))
                })
                .collect();
            Ok(ScaleRuns {
                compute: c,
                mna: None,
                hidden: Some(Dataset1D::new(pts)?),
                nna: None,
            })
        })
        .collect()
}

/// Per-scale loss-vs-`M/N_a` curves whose optimum follows `k C^p`.
pub fn planted_density_runs(computes: &[f64], k: f64, p: f64) -> Result<Vec<ScaleRuns>> {
    let grid = [7.0, 8.0, 9.0, 11.0, 14.0, 17.0];
    computes
        .iter()
        .map(|&c| {
            let x_opt = k * c.powf(p);
            if x_opt <= 6.0 {
                return Err(Error::Domain(format!("planted optimum {x_opt} must exceed 6")));
            }
            let b = 0.02;
            let a = b * (x_opt - 6.0).powi(2);
            let pts = grid.iter().map(|&x| (x, a / (x - 6.0) + b * x + 2.5)).collect();
            Ok(ScaleRuns {
                compute: c,
                mna: Some(Dataset1D::new(pts)?),
                hidden: None,
                nna: None,
            })
        })
        .collect()
}
