//! Command-line front end.
//!
//! Exit codes: 0 ok, 2 domain or infeasible input, 3 fit failure, 4 bad
//! input or I/O. Artifacts go to standard output, `--out`, or
//! `$MOE_SCALING_OUT_DIR/<command>.<ext>`; diagnostics go to standard error.
//! `MOE_SCALING_THREADS` sets the worker count.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{load_tables, shipped_tables, validate_tables};
use crate::error::{Error, Result};
use crate::fit::{
    fit_bounded_rational, fit_inv_linear, fit_linear_band, fit_power_law, fit_quadratic,
    fit_saturating_power, near_optimal_band, Family, FitResult, SaturatingOptions,
};
use crate::harness::{proxy_validation_report, LandscapeGrid, SUBSET_M_GRID, SUBSET_N_GRID};
use crate::io;
use crate::pipeline::{design, fit_lawset, LawSet, DEFAULT_BAND_TOLERANCE};
use crate::presets::{preset, presets, ScalePreset};
use crate::region::{generate_grid, map_region, sweep_d, Resolution, DEFAULT_M_GRID, DEFAULT_N_GRID};
use crate::solver::{feasible_d_interval, ratios_to_macro, DenseRule, SolverOptions, MAX_DEVIATION};

pub const OUT_DIR_ENV: &str = "MOE_SCALING_OUT_DIR";
pub const THREADS_ENV: &str = "MOE_SCALING_THREADS";

#[derive(Debug, Parser)]
#[command(name = "moe-scaling", version, about = "MoE architecture scaling toolkit")]
pub struct Cli {
    /// Write the artifact here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct SolverArgs {
    /// Hardware rounding quantum (8, 16 or 32).
    #[arg(long, default_value_t = 8)]
    pub quantum: u64,
    #[arg(long, default_value_t = MAX_DEVIATION)]
    pub max_deviation: f64,
    #[arg(long)]
    pub allow_zero_dense: bool,
    #[arg(long, value_enum, default_value = "gamma")]
    pub dense_rule: DenseRuleArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum DenseRuleArg {
    Gamma,
    MatchMoeActive,
}

impl SolverArgs {
    fn options(&self) -> Result<SolverOptions> {
        let opts = SolverOptions {
            quantum: self.quantum,
            max_deviation: self.max_deviation,
            allow_zero_dense: self.allow_zero_dense,
            dense_rule: match self.dense_rule {
                DenseRuleArg::Gamma => DenseRule::Gamma,
                DenseRuleArg::MatchMoeActive => DenseRule::MatchMoeActive,
            },
            ..SolverOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// FLOPs per token in GFLOPs.
    #[arg(long)]
    pub m: f64,
    /// M / N_a.
    #[arg(long)]
    pub mna: f64,
    /// N / N_a.
    #[arg(long)]
    pub nna: f64,
    /// Geometry preset (defaults to the one whose M target is nearest).
    #[arg(long)]
    pub scale: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Architecture and training settings for a compute budget (JSON).
    Design {
        /// Compute budget in FLOPs, e.g. 1e20.
        #[arg(long)]
        compute: f64,
        /// Law set JSON (defaults to the built-in laws).
        #[arg(long)]
        lawset: Option<PathBuf>,
        /// Geometry preset, e.g. 1e20.
        #[arg(long)]
        scale: String,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Feasible hidden sizes for a target (JSON).
    Feasible {
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Feasible-region map over the ratio box (CSV).
    Region {
        /// FLOPs per token in GFLOPs.
        #[arg(long)]
        m: f64,
        #[arg(long)]
        scale: Option<String>,
        #[arg(long, default_value_t = 64)]
        m_steps: usize,
        #[arg(long, default_value_t = 64)]
        n_steps: usize,
        #[arg(long, default_value_t = 20.0)]
        m_max: f64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Experiment grid at a preset scale (CSV).
    Grid {
        #[arg(long)]
        scale: String,
        #[arg(long, value_delimiter = ',')]
        m_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<f64>>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Every accepted hidden size for a target (CSV).
    SweepD {
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Fit one curve family to `x,y[,weight]` data (JSON).
    Fit {
        #[arg(long)]
        family: String,
        #[arg(long)]
        data: PathBuf,
        /// Relative tolerance of the near-optimal band.
        #[arg(long, default_value_t = DEFAULT_BAND_TOLERANCE)]
        tolerance: f64,
        /// Left pole of the bounded-rational family.
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        /// Right pole of the bounded-rational family.
        #[arg(long, default_value_t = 289.0 / 9.0)]
        c2: f64,
        /// Pin the saturating-power floor E to zero.
        #[arg(long)]
        pin_e_zero: bool,
    },
    /// Law set operations (JSON).
    Lawset {
        #[command(subcommand)]
        action: LawsetAction,
    },
    /// Accounting check of the configuration tables (CSV).
    Validate {
        /// Directory with MANIFEST.csv and table CSVs (defaults to the shipped tables).
        #[arg(long)]
        tables: Option<PathBuf>,
        #[arg(long, default_value_t = MAX_DEVIATION)]
        limit: f64,
    },
    /// Median-proxy search on synthetic landscapes (JSON).
    Harness {
        /// First seed; replicates use consecutive seeds.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        replicates: u64,
        /// Perturbation amplitude relative to the minimum inter-cell gap.
        #[arg(long, default_value_t = 0.0)]
        amp: f64,
        #[arg(long, default_value_t = 0.5)]
        curvature: f64,
        /// `6x6` or `4x4`.
        #[arg(long, default_value = "6x6")]
        grid: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum LawsetAction {
    /// Fit laws from a directory of `<kind>_<C>.csv` loss curves.
    Fit {
        #[arg(long)]
        runs: PathBuf,
        /// Law set supplying the budget laws (defaults to the built-in laws).
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BAND_TOLERANCE)]
        tolerance: f64,
    },
    /// Print the built-in law set.
    Default,
}

pub enum Artifact {
    Json(String),
    Csv(String),
}

impl Artifact {
    fn ext(&self) -> &'static str {
        match self {
            Artifact::Json(_) => "json",
            Artifact::Csv(_) => "csv",
        }
    }

    fn text(&self) -> &str {
        match self {
            Artifact::Json(s) | Artifact::Csv(s) => s,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Design { .. } => "design",
            Command::Feasible { .. } => "feasible",
            Command::Region { .. } => "region",
            Command::Grid { .. } => "grid",
            Command::SweepD { .. } => "sweep-d",
            Command::Fit { .. } => "fit",
            Command::Lawset { .. } => "lawset",
            Command::Validate { .. } => "validate",
            Command::Harness { .. } => "harness",
        }
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::BadInput(format!("--{name} must be a positive number, got {v}")))
    }
}

fn scale_for(name: Option<&str>, m: f64) -> Result<&'static ScalePreset> {
    match name {
        Some(n) => preset(n),
        None => Ok(presets()
            .iter()
            .min_by(|a, b| {
                (a.m_target / m).ln().abs().total_cmp(&(b.m_target / m).ln().abs())
            })
            .expect("presets are non-empty")),
    }
}

fn load_laws(path: Option<&Path>) -> Result<LawSet> {
    let laws = match path {
        Some(p) => io::read_json(p)?,
        None => LawSet::default(),
    };
    laws.validate()?;
    Ok(laws)
}

pub fn run_fit(family: Family, data: &crate::fit::Dataset1D, tolerance: f64, c1: f64, c2: f64, pin_e_zero: bool) -> Result<FitResult> {
    let mut fit = match family {
        Family::PowerLaw => fit_power_law(data)?,
        Family::SaturatingPower => fit_saturating_power(
            data,
            &SaturatingOptions {
                pin_e_zero,
                ..SaturatingOptions::default()
            },
        )?,
        Family::InvLinear => fit_inv_linear(data)?,
        Family::BoundedRational => fit_bounded_rational(data, c1, c2)?,
        Family::Quadratic => fit_quadratic(data)?,
        Family::LinearBand => fit_linear_band(data)?,
    };
    if fit.x_opt.is_some() && fit.band.is_none() {
        match near_optimal_band(&fit, tolerance) {
            Ok(b) => fit.band = Some(b),
            Err(e) => fit.notes.push(format!("no band: {e}")),
        }
    }
    Ok(fit)
}

fn execute(command: &Command) -> Result<Artifact> {
    match command {
        Command::Design {
            compute,
            lawset,
            scale,
            solver,
        } => {
            let laws = load_laws(lawset.as_deref())?;
            let report = design(positive("compute", *compute)?, &laws, preset(scale)?, &solver.options()?)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(Artifact::Json(io::to_json(&report)?))
        }
        Command::Feasible { target, solver } => {
            let m = positive("m", target.m)? * 1e9;
            let p = scale_for(target.scale.as_deref(), m)?;
            let t = ratios_to_macro(m, target.mna, target.nna, p)?;
            let interval = feasible_d_interval(&t, &solver.options()?)?;
            eprintln!(
                "feasible d in [{}, {}], median {} ({} values)",
                interval.d_min,
                interval.d_max,
                interval.d_median,
                interval.feasible_set.len()
            );
            Ok(Artifact::Json(io::to_json(&interval)?))
        }
        Command::Region {
            m,
            scale,
            m_steps,
            n_steps,
            m_max,
            solver,
        } => {
            let m = positive("m", *m)? * 1e9;
            let p = scale_for(scale.as_deref(), m)?;
            let res = Resolution {
                m_steps: *m_steps,
                n_steps: *n_steps,
                m_max: *m_max,
            };
            let map = map_region(m, p, &res, &solver.options()?)?;
            Ok(Artifact::Csv(io::to_csv(&map.cells)?))
        }
        Command::Grid {
            scale,
            m_grid,
            n_grid,
            solver,
        } => {
            let grid = generate_grid(
                preset(scale)?,
                m_grid.as_deref().unwrap_or(&DEFAULT_M_GRID),
                n_grid.as_deref().unwrap_or(&DEFAULT_N_GRID),
                &solver.options()?,
            )?;
            for c in &grid.infeasible {
                eprintln!("infeasible cell ({}, {}): {}", c.m_over_na, c.n_over_na, c.reason);
            }
            Ok(Artifact::Csv(io::to_csv(&io::grid_rows(&grid))?))
        }
        Command::SweepD { target, solver } => {
            let m = positive("m", target.m)? * 1e9;
            let p = scale_for(target.scale.as_deref(), m)?;
            let t = ratios_to_macro(m, target.mna, target.nna, p)?;
            let rows: Vec<io::SweepRow> = sweep_d(&t, &solver.options()?)?
                .iter()
                .map(|(_, s)| s.into())
                .collect();
            Ok(Artifact::Csv(io::to_csv(&rows)?))
        }
        Command::Fit {
            family,
            data,
            tolerance,
            c1,
            c2,
            pin_e_zero,
        } => {
            let family: Family = family.parse()?;
            let data = io::read_dataset(data)?;
            let fit = run_fit(family, &data, *tolerance, *c1, *c2, *pin_e_zero)?;
            Ok(Artifact::Json(io::to_json(&fit)?))
        }
        Command::Lawset { action } => match action {
            LawsetAction::Default => Ok(Artifact::Json(io::to_json(&LawSet::default())?)),
            LawsetAction::Fit {
                runs,
                base,
                tolerance,
            } => {
                let base = load_laws(base.as_deref())?;
                let runs = io::read_runs_dir(runs)?;
                let fitted = fit_lawset(&runs, &base, *tolerance)?;
                Ok(Artifact::Json(io::to_json(&fitted.laws)?))
            }
        },
        Command::Validate { tables, limit } => {
            let tables = match tables {
                Some(dir) => load_tables(dir)?,
                None => shipped_tables()?,
            };
            let report = validate_tables(&tables, *limit)?;
            eprintln!(
                "{} rows checked, {} exceed {:.1}% M deviation (max {:.2}%)",
                report.rows.len(),
                report.exceeding,
                100.0 * report.limit,
                100.0 * report.max_deviation
            );
            Ok(Artifact::Csv(io::to_csv(&report.rows)?))
        }
        Command::Harness {
            seed,
            replicates,
            amp,
            curvature,
            grid,
        } => {
            let cells = match grid.as_str() {
                "6x6" => LandscapeGrid::from_solver(&DEFAULT_M_GRID, &DEFAULT_N_GRID)?,
                "4x4" => LandscapeGrid::from_solver(&SUBSET_M_GRID, &SUBSET_N_GRID)?,
                other => {
                    return Err(Error::BadInput(format!("--grid must be 6x6 or 4x4, got `{other}`")))
                }
            };
            let seeds: Vec<u64> = (0..*replicates).map(|k| seed.wrapping_add(k)).collect();
            let report = proxy_validation_report(&cells, &seeds, *amp, *curvature)?;
            eprintln!(
                "mean pearson {:.4}, spearman {:.4}, kendall {:.4}, max regret {:e}",
                report.mean_pearson, report.mean_spearman, report.mean_kendall, report.max_regret
            );
            Ok(Artifact::Json(io::to_json(&report)?))
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::BadInput(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        // a pool configured earlier in the same process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn emit(cli: &Cli, artifact: &Artifact) -> Result<()> {
    let path = cli.out.clone().or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .map(|dir| PathBuf::from(dir).join(format!("{}.{}", cli.command.name(), artifact.ext())))
    });
    match path {
        Some(p) => io::write_file(&p, artifact.text().as_bytes()),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            match out.write_all(artifact.text().as_bytes()).and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn run_cli(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let artifact = execute(&cli.command)?;
    emit(cli, &artifact)?;
    if let Command::Validate { .. } = cli.command {
        let rows: Vec<crate::corpus::RowCheck> = io::from_csv(artifact.text().as_bytes())?;
        let bad = rows.iter().filter(|r| !r.within_limit).count();
        if bad > 0 {
            return Err(Error::Validation(format!(
                "{bad} of {} rows exceed the M deviation limit",
                rows.len()
            )));
        }
    }
    Ok(())
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_map_to_4() {
        assert_eq!(run(["moe-scaling", "design", "--bogus"]), 4);
        assert_eq!(run(["moe-scaling", "nonsense"]), 4);
        assert_eq!(run(["moe-scaling", "--help"]), 0);
    }

    #[test]
    fn domain_errors_map_to_2() {
        assert_eq!(
            run(["moe-scaling", "feasible", "--m", "0.26", "--mna", "5", "--nna", "12"]),
            2
        );
    }

    #[test]
    fn bad_family_maps_to_4() {
        assert_eq!(
            run(["moe-scaling", "fit", "--family", "cubic", "--data", "/nonexistent.csv"]),
            4
        );
    }

    #[test]
    fn default_scale_is_nearest_m() {
        assert_eq!(scale_for(None, 2.6e8).unwrap().name, "1e18");
        assert_eq!(scale_for(None, 3.3e9).unwrap().name, "1e20");
    }
}
