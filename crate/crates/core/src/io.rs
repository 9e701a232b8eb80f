//! File formats: JSON for nested objects, flat CSV rows for tabular outputs.
//!
//! CSV schemas (one header row, comma separated, empty field = absent):
//!
//! | artifact | columns |
//! |---|---|
//! | dataset | `x,y[,weight]` |
//! | region | `i,j,m_over_na,n_over_na,active_params,total_params,d_min,d_max,d_count` |
//! | grid | see [`GridRow`] |
//! | sweep-d | see [`SweepRow`] |
//! | validate | see [`crate::corpus::RowCheck`] |
//! | harness | see [`crate::harness::ReplicateRow`], [`crate::harness::ScatterPoint`] |

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::Dataset1D;
use crate::pipeline::ScaleRuns;
use crate::region::ExperimentGrid;
use crate::solver::StructuralSolution;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    Ok(serde_json::from_slice(bytes)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json(&read_file(path)?)
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::BadInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::BadInput(e.to_string()))
}

pub fn from_csv<T: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    from_csv(&read_file(path)?)
}

#[derive(Serialize, Deserialize)]
struct Point {
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct WeightedPoint {
    x: f64,
    y: f64,
    weight: Option<f64>,
}

pub fn dataset_to_csv(data: &Dataset1D) -> Result<String> {
    match &data.weights {
        None => to_csv(
            &data
                .points
                .iter()
                .map(|&(x, y)| Point { x, y })
                .collect::<Vec<_>>(),
        ),
        Some(w) => to_csv(
            &data
                .points
                .iter()
                .zip(w)
                .map(|(&(x, y), &w)| WeightedPoint { x, y, weight: Some(w) })
                .collect::<Vec<_>>(),
        ),
    }
}

pub fn dataset_from_csv(bytes: &[u8]) -> Result<Dataset1D> {
    let rows: Vec<WeightedPoint> = from_csv(bytes)?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.x, r.y)).collect();
    let weighted = rows.iter().filter(|r| r.weight.is_some()).count();
    let weights = match weighted {
        0 => None,
        n if n == rows.len() => Some(rows.iter().map(|r| r.weight.unwrap()).collect()),
        _ => return Err(Error::BadInput("weight column is only partly filled".into())),
    };
    Dataset1D::with_weights(points, weights)
}

pub fn read_dataset(path: &Path) -> Result<Dataset1D> {
    dataset_from_csv(&read_file(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: u64,
    pub l_d: u64,
    pub l_m: u64,
    pub d_d: u64,
    pub d_m: u64,
    pub flops_per_token: u64,
    pub active_params: u64,
    pub total_params: u64,
    pub m_over_na: f64,
    pub n_over_na: f64,
    pub deviation_m: f64,
    pub deviation_na: f64,
    pub deviation_n: f64,
}

impl From<&StructuralSolution> for SweepRow {
    fn from(s: &StructuralSolution) -> Self {
        Self {
            d: s.cfg.hidden,
            l_d: s.cfg.dense_layers,
            l_m: s.cfg.moe_layers,
            d_d: s.cfg.dense_ffn,
            d_m: s.cfg.expert_ffn,
            flops_per_token: s.achieved.flops_per_token,
            active_params: s.achieved.active_params,
            total_params: s.achieved.total_params,
            m_over_na: s.achieved.m_over_na,
            n_over_na: s.achieved.n_over_na,
            deviation_m: s.deviation_m,
            deviation_na: s.deviation_na,
            deviation_n: s.deviation_n,
        }
    }
}

/// One grid cell; solver columns are empty for infeasible cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub m_over_na: f64,
    pub n_over_na: f64,
    pub target_m: Option<f64>,
    pub target_na: Option<f64>,
    pub target_n: Option<f64>,
    pub d_min: Option<u64>,
    pub d_max: Option<u64>,
    pub d_count: Option<usize>,
    pub d: Option<u64>,
    pub l_d: Option<u64>,
    pub l_m: Option<u64>,
    pub d_d: Option<u64>,
    pub d_m: Option<u64>,
    pub flops_per_token: Option<u64>,
    pub active_params: Option<u64>,
    pub total_params: Option<u64>,
    pub max_deviation: Option<f64>,
    pub reason: Option<String>,
}

pub fn grid_rows(grid: &ExperimentGrid) -> Vec<GridRow> {
    let mut rows: Vec<GridRow> = grid
        .points
        .iter()
        .map(|p| GridRow {
            m_over_na: p.m_over_na,
            n_over_na: p.n_over_na,
            target_m: Some(p.target.flops_per_token),
            target_na: Some(p.target.active_params),
            target_n: Some(p.target.total_params),
            d_min: Some(p.interval.d_min),
            d_max: Some(p.interval.d_max),
            d_count: Some(p.interval.feasible_set.len()),
            d: Some(p.solution.cfg.hidden),
            l_d: Some(p.solution.cfg.dense_layers),
            l_m: Some(p.solution.cfg.moe_layers),
            d_d: Some(p.solution.cfg.dense_ffn),
            d_m: Some(p.solution.cfg.expert_ffn),
            flops_per_token: Some(p.solution.achieved.flops_per_token),
            active_params: Some(p.solution.achieved.active_params),
            total_params: Some(p.solution.achieved.total_params),
            max_deviation: Some(p.solution.max_deviation()),
            reason: None,
        })
        .collect();
    rows.extend(grid.infeasible.iter().map(|c| GridRow {
        m_over_na: c.m_over_na,
        n_over_na: c.n_over_na,
        target_m: None,
        target_na: None,
        target_n: None,
        d_min: None,
        d_max: None,
        d_count: None,
        d: None,
        l_d: None,
        l_m: None,
        d_d: None,
        d_m: None,
        flops_per_token: None,
        active_params: None,
        total_params: None,
        max_deviation: None,
        reason: Some(c.reason.clone()),
    }));
    rows.sort_by(|a, b| {
        a.m_over_na
            .total_cmp(&b.m_over_na)
            .then(a.n_over_na.total_cmp(&b.n_over_na))
    });
    rows
}

const RUN_KINDS: [&str; 3] = ["mna", "hidden", "nna"];

/// Read `<kind>_<C>.csv` files (`kind` one of `mna`, `hidden`, `nna`;
/// `C` such as `1e19`) into per-scale runs sorted by compute.
pub fn read_runs_dir(dir: &Path) -> Result<Vec<ScaleRuns>> {
    let mut runs: Vec<ScaleRuns> = Vec::new();
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((kind, c)) = stem.split_once('_') else {
            return Err(Error::BadInput(format!(
                "{}: expected <kind>_<compute>.csv",
                path.display()
            )));
        };
        if !RUN_KINDS.contains(&kind) {
            return Err(Error::BadInput(format!(
                "{}: unknown run kind `{kind}`",
                path.display()
            )));
        }
        let compute: f64 = c
            .parse()
            .map_err(|_| Error::BadInput(format!("{}: bad compute `{c}`", path.display())))?;
        let data = read_dataset(&path)?;
        let idx = match runs.iter().position(|r| r.compute == compute) {
            Some(i) => i,
            None => {
                runs.push(ScaleRuns {
                    compute,
                    mna: None,
                    hidden: None,
                    nna: None,
                });
                runs.len() - 1
            }
        };
        let slot = match kind {
            "mna" => &mut runs[idx].mna,
            "hidden" => &mut runs[idx].hidden,
            _ => &mut runs[idx].nna,
        };
        *slot = Some(data);
    }
    if runs.is_empty() {
        return Err(Error::BadInput(format!("{}: no run files", dir.display())));
    }
    runs.sort_by(|a, b| a.compute.total_cmp(&b.compute));
    Ok(runs)
}

pub fn write_runs_dir(dir: &Path, runs: &[ScaleRuns]) -> Result<()> {
    for r in runs {
        for (kind, data) in RUN_KINDS.iter().zip([&r.mna, &r.hidden, &r.nna]) {
            if let Some(d) = data {
                let path = dir.join(format!("{kind}_{:e}.csv", r.compute));
                write_file(&path, dataset_to_csv(d)?.as_bytes())?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_quadratic, FitResult};
    use crate::pipeline::LawSet;
    use crate::region::{map_region, Resolution, RegionCell};
    use crate::presets::preset;

    #[test]
    fn dataset_round_trip() {
        let d = Dataset1D::new(vec![(0.1, 1.0 / 3.0), (1e-300, 2.5e18)]).unwrap();
        let s = dataset_to_csv(&d).unwrap();
        assert!(s.starts_with("x,y\n"));
        assert_eq!(dataset_from_csv(s.as_bytes()).unwrap(), d);
        let w = Dataset1D::with_weights(d.points.clone(), Some(vec![0.7, 2.0])).unwrap();
        let s = dataset_to_csv(&w).unwrap();
        assert_eq!(dataset_from_csv(s.as_bytes()).unwrap(), w);
        assert!(dataset_from_csv(b"x,y,weight\n1,2,\n2,3,1\n").is_err());
        assert!(dataset_from_csv(b"x,y\n1,oops\n").is_err());
    }

    #[test]
    fn json_round_trip() {
        let laws = LawSet::default();
        let s = to_json(&laws).unwrap();
        let back: LawSet = from_json(s.as_bytes()).unwrap();
        assert_eq!(back, laws);
        assert_eq!(to_json(&back).unwrap(), s);

        let data = Dataset1D::new((0..7).map(|i| (i as f64 * 0.3, (i as f64 - 1.7f64).powi(2) / 7.0)).collect()).unwrap();
        let fit = fit_quadratic(&data).unwrap();
        let back: FitResult = from_json(to_json(&fit).unwrap().as_bytes()).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn region_csv_round_trip() {
        let p = preset("1e18").unwrap();
        let res = Resolution { m_steps: 4, n_steps: 4, m_max: 20.0 };
        let map = map_region(p.m_target, p, &res, &Default::default()).unwrap();
        let s = to_csv(&map.cells).unwrap();
        let back: Vec<RegionCell> = from_csv(s.as_bytes()).unwrap();
        assert_eq!(back, map.cells);
        assert_eq!(to_csv(&back).unwrap(), s);
    }

    #[test]
    fn runs_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let runs = crate::harness::widening_band_runs(&[1e18, 3e19], 0.001).unwrap();
        write_runs_dir(dir.path(), &runs).unwrap();
        assert_eq!(read_runs_dir(dir.path()).unwrap(), runs);
        write_file(&dir.path().join("bogus_1e18.csv"), b"x,y\n").unwrap();
        assert!(matches!(read_runs_dir(dir.path()), Err(Error::BadInput(_))));
    }

    #[test]
    fn missing_file_is_io() {
        let e = read_dataset(Path::new("/nonexistent/data.csv")).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
        assert_eq!(e.exit_code(), 4);
    }
}
