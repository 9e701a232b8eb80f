//! Per-scale constants shipped with the crate.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::arch::FixedShape;
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 3.0;

const PRESETS_CSV: &str = include_str!("../fixtures/tables/scale_presets.csv");

/// Published compute-optimal `(C, M in GFLOPs, D in billions of tokens)`.
pub const PUBLISHED_OPTIMA: [(f64, f64, f64); 6] = [
    (1e18, 0.2672, 3.7420),
    (3e18, 0.4856, 6.1775),
    (1e19, 0.9345, 10.7004),
    (3e19, 1.6983, 17.6649),
    (1e20, 3.2681, 30.5985),
    (3e20, 5.9390, 50.5138),
];

/// Published fitted optima of the expansion ratio at the six scales.
pub const PUBLISHED_NNA_OPTIMA: [f64; 6] = [19.23, 19.33, 20.69, 20.78, 21.29, 22.07];

/// Published proxy-validation correlations (Pearson, Spearman, Kendall).
pub const PUBLISHED_PROXY_CORRELATIONS: (f64, f64, f64) = (0.9793, 0.9758, 0.9111);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePreset {
    pub name: String,
    /// Compute budget `C` in FLOPs.
    pub compute: f64,
    /// Target FLOPs per token.
    pub m_target: f64,
    /// Training tokens `D`.
    pub tokens: f64,
    pub shape: FixedShape,
    pub lr: f64,
    pub batch: u64,
    pub nna_preset: f64,
}

#[derive(Deserialize)]
struct PresetRow {
    scale: String,
    compute: f64,
    m_gflops: f64,
    tokens_b: f64,
    d_qkv: u64,
    n_q: u64,
    n_kv: u64,
    seq_len: u64,
    top_k: u64,
    n_experts: u64,
    lr: f64,
    batch: u64,
    nna_preset: f64,
}

fn parse_presets(text: &str) -> Result<Vec<ScalePreset>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: PresetRow = row?;
        let shape = FixedShape {
            head_dim: r.d_qkv,
            q_heads: r.n_q,
            kv_heads: r.n_kv,
            seq_len: r.seq_len,
            experts: r.n_experts,
            top_k: r.top_k,
            gamma: DEFAULT_GAMMA,
        };
        shape.validate()?;
        out.push(ScalePreset {
            name: r.scale,
            compute: r.compute,
            m_target: r.m_gflops * 1e9,
            tokens: r.tokens_b * 1e9,
            shape,
            lr: r.lr,
            batch: r.batch,
            nna_preset: r.nna_preset,
        });
    }
    Ok(out)
}

/// The six shipped presets, ordered by compute.
pub fn presets() -> &'static [ScalePreset] {
    static CELL: OnceLock<Vec<ScalePreset>> = OnceLock::new();
    CELL.get_or_init(|| parse_presets(PRESETS_CSV).expect("shipped preset table is valid"))
}

/// Look up a preset by name (`1e18`, `3e20`, ...) or by numeric compute value.
pub fn preset(name: &str) -> Result<&'static ScalePreset> {
    let all = presets();
    if let Some(p) = all.iter().find(|p| p.name == name) {
        return Ok(p);
    }
    if let Ok(c) = name.parse::<f64>() {
        if let Some(p) = all.iter().find(|p| (p.compute / c - 1.0).abs() < 1e-9) {
            return Ok(p);
        }
    }
    let names: Vec<&str> = all.iter().map(|p| p.name.as_str()).collect();
    Err(Error::BadInput(format!(
        "unknown scale `{name}` (expected one of {})",
        names.join(", ")
    )))
}

/// Preset whose compute is closest to `c` in log space.
pub fn nearest_preset(c: f64) -> &'static ScalePreset {
    presets()
        .iter()
        .min_by(|a, b| {
            let da = (a.compute.ln() - c.ln()).abs();
            let db = (b.compute.ln() - c.ln()).abs();
            da.total_cmp(&db)
        })
        .expect("presets are non-empty")
}
