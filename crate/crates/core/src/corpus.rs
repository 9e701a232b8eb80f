//! Transcribed configuration tables and the accounting consistency check.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{compute_metrics, ArchConfig, ResourceMetrics};
use crate::error::{Error, Result};
use crate::presets::{preset, ScalePreset};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub scale: String,
    pub d: u64,
    pub l_d: u64,
    pub d_d: u64,
    pub l_m: u64,
    pub d_m: u64,
    pub l: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: String,
    pub rows: usize,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusTable {
    pub entry: ManifestEntry,
    pub rows: Vec<TableRow>,
}

macro_rules! shipped {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../fixtures/tables/", $name, ".csv")))),*]
    };
}

const SHIPPED: &[(&str, &str)] = shipped![
    "proxy_a", "proxy_b", "proxy_c", "proxy_d",
    "grid_1e18", "grid_3e18", "grid_1e19", "grid_3e19", "grid_1e20", "grid_3e20",
    "mna_dense",
    "dsweep_1e18", "dsweep_3e18", "dsweep_1e19", "dsweep_3e19", "dsweep_1e20", "dsweep_3e20",
];

const MANIFEST: &str = include_str!("../fixtures/tables/MANIFEST.csv");

impl TableRow {
    pub fn check(&self) -> Result<()> {
        if self.l != self.l_d + self.l_m {
            return Err(Error::BadInput(format!(
                "row d={}: L = {} but L_d + L_m = {}",
                self.d,
                self.l,
                self.l_d + self.l_m
            )));
        }
        Ok(())
    }

    pub fn preset(&self) -> Result<&'static ScalePreset> {
        preset(&self.scale)
    }

    pub fn config(&self) -> Result<ArchConfig> {
        let p = self.preset()?;
        Ok(ArchConfig::from_shape(
            &p.shape, self.d, self.l_d, self.l_m, self.d_d, self.d_m,
        ))
    }
}

fn parse_manifest(text: &[u8]) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::Reader::from_reader(text);
    rdr.deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn parse_rows(text: &[u8]) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_reader(text);
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        let row: TableRow = r?;
        row.check()?;
        rows.push(row);
    }
    Ok(rows)
}

fn assemble(entry: ManifestEntry, rows: Vec<TableRow>) -> Result<CorpusTable> {
    if rows.len() != entry.rows {
        return Err(Error::BadInput(format!(
            "table {} has {} rows, manifest says {}",
            entry.name,
            rows.len(),
            entry.rows
        )));
    }
    Ok(CorpusTable { entry, rows })
}

/// The tables compiled into the binary.
pub fn shipped_tables() -> Result<Vec<CorpusTable>> {
    let manifest = parse_manifest(MANIFEST.as_bytes())?;
    manifest
        .into_iter()
        .map(|entry| {
            let text = SHIPPED
                .iter()
                .find(|(n, _)| *n == entry.name)
                .map(|(_, t)| *t)
                .ok_or_else(|| Error::BadInput(format!("no shipped table {}", entry.name)))?;
            let rows = parse_rows(text.as_bytes())?;
            assemble(entry, rows)
        })
        .collect()
}

/// Load a table directory laid out like the shipped fixtures
/// (`MANIFEST.csv` plus one `<name>.csv` per entry).
pub fn load_tables(dir: &Path) -> Result<Vec<CorpusTable>> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let manifest = parse_manifest(&read(&dir.join("MANIFEST.csv"))?)?;
    manifest
        .into_iter()
        .map(|entry| {
            let rows = parse_rows(&read(&dir.join(format!("{}.csv", entry.name)))?)?;
            assemble(entry, rows)
        })
        .collect()
}

/// Write tables back out in the fixture layout.
pub fn write_tables(dir: &Path, tables: &[CorpusTable]) -> Result<()> {
    let io = |p: &Path, e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mpath = dir.join("MANIFEST.csv");
    let mut w = csv::Writer::from_path(&mpath)?;
    for t in tables {
        w.serialize(&t.entry)?;
    }
    w.flush().map_err(|e| io(&mpath, e))?;
    for t in tables {
        let path = dir.join(format!("{}.csv", t.entry.name));
        let mut w = csv::Writer::from_path(&path)?;
        for r in &t.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCheck {
    pub table: String,
    pub index: usize,
    pub scale: String,
    pub d: u64,
    pub l_d: u64,
    pub l_m: u64,
    pub d_m: u64,
    pub flops_per_token: u64,
    pub active_params: u64,
    pub total_params: u64,
    pub m_over_na: f64,
    pub n_over_na: f64,
    pub m_target: f64,
    pub deviation_m: f64,
    pub within_limit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub limit: f64,
    pub rows: Vec<RowCheck>,
    pub exceeding: usize,
    pub max_deviation: f64,
}

pub fn row_metrics(row: &TableRow) -> Result<ResourceMetrics> {
    compute_metrics(&row.config()?)
}

/// Evaluate every row with its scale's geometry and compare `M` against the
/// scale target.
pub fn validate_tables(tables: &[CorpusTable], limit: f64) -> Result<ValidationReport> {
    let mut rows = Vec::new();
    for t in tables {
        for (index, row) in t.rows.iter().enumerate() {
            let p = row.preset()?;
            let m = row_metrics(row)?;
            let deviation_m = (m.flops_per_token as f64 - p.m_target).abs() / p.m_target;
            rows.push(RowCheck {
                table: t.entry.name.clone(),
                index,
                scale: row.scale.clone(),
                d: row.d,
                l_d: row.l_d,
                l_m: row.l_m,
                d_m: row.d_m,
                flops_per_token: m.flops_per_token,
                active_params: m.active_params,
                total_params: m.total_params,
                m_over_na: m.m_over_na,
                n_over_na: m.n_over_na,
                m_target: p.m_target,
                deviation_m,
                within_limit: deviation_m <= limit,
            });
        }
    }
    let exceeding = rows.iter().filter(|r| !r.within_limit).count();
    let max_deviation = rows.iter().map(|r| r.deviation_m).fold(0.0, f64::max);
    Ok(ValidationReport {
        limit,
        rows,
        exceeding,
        max_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_counts() {
        let tables = shipped_tables().unwrap();
        assert_eq!(tables.len(), 17);
        let total: usize = tables.iter().map(|t| t.rows.len()).sum();
        assert_eq!(total, 667);
        let grid = tables.iter().find(|t| t.entry.name == "grid_1e18").unwrap();
        assert_eq!(grid.rows.len(), 36);
        assert_eq!(grid.rows[0].d, 1496);
    }

    #[test]
    fn rows_follow_shipping_conventions() {
        for t in shipped_tables().unwrap() {
            for r in &t.rows {
                assert_eq!(r.d_d, 3 * r.d, "{} d={}", t.entry.name, r.d);
                assert_eq!(r.d % 8, 0);
                assert_eq!(r.d_m % 8, 0);
                assert!(r.l_d >= 1 && r.l_m >= 1);
            }
        }
    }

    #[test]
    fn bad_layer_sum_rejected() {
        let text = b"scale,d,l_d,d_d,l_m,d_m,l\n1e18,1496,1,4488,2,168,4\n";
        assert!(matches!(parse_rows(text), Err(Error::BadInput(_))));
    }

    #[test]
    fn round_trip_directory() {
        let dir = tempfile::tempdir().unwrap();
        let tables = shipped_tables().unwrap();
        write_tables(dir.path(), &tables).unwrap();
        assert_eq!(load_tables(dir.path()).unwrap(), tables);
    }
}
