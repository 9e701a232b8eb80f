//! Architecture description and exact per-token accounting.
//!
//! Every count here is non-embedding. Parameter and FLOP counts are evaluated
//! in 128-bit integer arithmetic and narrowed to `u64`, so two evaluations of
//! the same configuration are always bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training-multiple applied to parameter FLOPs (forward + backward).
pub const PARAM_FLOP_MULTIPLIER: u64 = 6;

/// Constants that stay fixed inside one compute scale: attention geometry,
/// context length, routing sparsity and the dense FFN width multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedShape {
    /// Attention head dimension (`d_qkv`).
    pub head_dim: u64,
    pub q_heads: u64,
    pub kv_heads: u64,
    /// Context length `S` in tokens.
    pub seq_len: u64,
    /// Routed expert count `N_e`.
    pub experts: u64,
    /// Activated experts per token `K`.
    pub top_k: u64,
    /// Dense FFN width multiplier, `d_d = gamma * d`.
    pub gamma: f64,
}

impl FixedShape {
    /// Upper bound of the parameter expansion ratio, `(N_e + 1) / (K + 1)`.
    pub fn max_expansion(&self) -> f64 {
        (self.experts + 1) as f64 / (self.top_k + 1) as f64
    }

    /// Attention logit/softmax FLOPs contributed by one layer.
    pub fn attention_logit_flops_per_layer(&self) -> u64 {
        6 * self.seq_len * self.q_heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("head_dim", self.head_dim),
            ("q_heads", self.q_heads),
            ("kv_heads", self.kv_heads),
            ("seq_len", self.seq_len),
            ("experts", self.experts),
            ("top_k", self.top_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.q_heads.is_multiple_of(self.kv_heads) {
            return Err(Error::InvalidConfig(format!(
                "q_heads ({}) must be a multiple of kv_heads ({})",
                self.q_heads, self.kv_heads
            )));
        }
        if self.experts <= self.top_k {
            return Err(Error::InvalidConfig(format!(
                "experts ({}) must exceed top_k ({})",
                self.experts, self.top_k
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// A fully specified MoE transformer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Hidden dimension `d`.
    pub hidden: u64,
    /// Dense layer count `L_d`.
    pub dense_layers: u64,
    /// MoE layer count `L_m`.
    pub moe_layers: u64,
    /// Dense FFN intermediate dimension `d_d`.
    pub dense_ffn: u64,
    /// Per-expert intermediate dimension `d_m`.
    pub expert_ffn: u64,
    pub head_dim: u64,
    pub q_heads: u64,
    pub kv_heads: u64,
    pub seq_len: u64,
    pub experts: u64,
    pub top_k: u64,
    pub gamma: f64,
}

/// `(M, N_a, N)` plus the derived ratios and allocation fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceMetrics {
    /// `M`, FLOPs per token.
    pub flops_per_token: u64,
    /// `N_a`.
    pub active_params: u64,
    /// `N`.
    pub total_params: u64,
    pub m_over_na: f64,
    pub n_over_na: f64,
    /// Fraction of `M` spent in attention (projections and logits).
    pub r_attn: f64,
    /// Fraction of `M` spent in dense FFNs.
    pub r_dense: f64,
    /// Fraction of `M` spent in MoE FFNs (routed plus shared expert).
    pub r_moe: f64,
    /// Fraction of `N_a` held by the active MoE FFNs.
    pub r_moe_active: f64,
}

/// Per-component parameter counts for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub attention: u64,
    pub dense: u64,
    pub moe_active: u64,
    pub moe_inactive: u64,
    pub attention_logit_flops: u64,
}

fn narrow(v: u128, what: &str) -> Result<u64> {
    u64::try_from(v).map_err(|_| Error::InvalidConfig(format!("{what} overflows u64")))
}

impl ArchConfig {
    pub fn from_shape(
        shape: &FixedShape,
        hidden: u64,
        dense_layers: u64,
        moe_layers: u64,
        dense_ffn: u64,
        expert_ffn: u64,
    ) -> Self {
        Self {
            hidden,
            dense_layers,
            moe_layers,
            dense_ffn,
            expert_ffn,
            head_dim: shape.head_dim,
            q_heads: shape.q_heads,
            kv_heads: shape.kv_heads,
            seq_len: shape.seq_len,
            experts: shape.experts,
            top_k: shape.top_k,
            gamma: shape.gamma,
        }
    }

    pub fn shape(&self) -> FixedShape {
        FixedShape {
            head_dim: self.head_dim,
            q_heads: self.q_heads,
            kv_heads: self.kv_heads,
            seq_len: self.seq_len,
            experts: self.experts,
            top_k: self.top_k,
            gamma: self.gamma,
        }
    }

    pub fn layers(&self) -> u64 {
        self.dense_layers + self.moe_layers
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("dense_ffn", self.dense_ffn),
            ("expert_ffn", self.expert_ffn),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.layers() == 0 {
            return Err(Error::InvalidConfig(
                "dense_layers + moe_layers must be at least 1".into(),
            ));
        }
        // S = 0 is accepted so the attention-free limit can be evaluated.
        let mut shape = self.shape();
        shape.seq_len = shape.seq_len.max(1);
        shape.validate()
    }

    pub fn breakdown(&self) -> Result<ParamBreakdown> {
        self.validate()?;
        let d = self.hidden as u128;
        let layers = self.layers() as u128;
        let per_expert = 3 * d * self.expert_ffn as u128;
        let attn_per_layer =
            2 * d * self.head_dim as u128 * (self.q_heads + self.kv_heads) as u128;
        let attention = attn_per_layer * layers;
        let dense = 3 * d * self.dense_ffn as u128 * self.dense_layers as u128;
        let moe_active = per_expert * (self.top_k as u128 + 1) * self.moe_layers as u128;
        let moe_inactive =
            per_expert * (self.experts - self.top_k) as u128 * self.moe_layers as u128;
        let logits = 6
            * self.seq_len as u128
            * self.q_heads as u128
            * self.head_dim as u128
            * layers;
        Ok(ParamBreakdown {
            attention: narrow(attention, "attention params")?,
            dense: narrow(dense, "dense params")?,
            moe_active: narrow(moe_active, "active MoE params")?,
            moe_inactive: narrow(moe_inactive, "inactive MoE params")?,
            attention_logit_flops: narrow(logits, "attention FLOPs")?,
        })
    }

    /// Expert FFN width relative to the hidden size, `(K+1) * d_m / d`.
    pub fn width_ratio(&self) -> f64 {
        (self.top_k + 1) as f64 * self.expert_ffn as f64 / self.hidden as f64
    }
}

/// `N_a`: attention, dense FFN and active (routed + shared) expert parameters.
pub fn count_active_params(cfg: &ArchConfig) -> Result<u64> {
    let b = cfg.breakdown()?;
    narrow(
        b.attention as u128 + b.dense as u128 + b.moe_active as u128,
        "active params",
    )
}

/// `M = 6 N_a + 6 S N_q d_qkv L`.
pub fn flops_per_token(cfg: &ArchConfig) -> Result<u64> {
    let b = cfg.breakdown()?;
    let active = b.attention as u128 + b.dense as u128 + b.moe_active as u128;
    narrow(
        PARAM_FLOP_MULTIPLIER as u128 * active + b.attention_logit_flops as u128,
        "FLOPs per token",
    )
}

/// `N = N_a + 3 d d_m (N_e - K) L_m`.
pub fn total_params(cfg: &ArchConfig) -> Result<u64> {
    let b = cfg.breakdown()?;
    narrow(
        b.attention as u128 + b.dense as u128 + b.moe_active as u128 + b.moe_inactive as u128,
        "total params",
    )
}

pub fn compute_metrics(cfg: &ArchConfig) -> Result<ResourceMetrics> {
    let b = cfg.breakdown()?;
    let active = count_active_params(cfg)?;
    let total = total_params(cfg)?;
    let m = flops_per_token(cfg)?;
    if active == 0 {
        return Err(Error::InvalidConfig("active parameter count is zero".into()));
    }
    let mf = m as f64;
    let six = PARAM_FLOP_MULTIPLIER as f64;
    let r_dense = six * b.dense as f64 / mf;
    let r_moe = six * b.moe_active as f64 / mf;
    let r_attn = (six * b.attention as f64 + b.attention_logit_flops as f64) / mf;
    Ok(ResourceMetrics {
        flops_per_token: m,
        active_params: active,
        total_params: total,
        m_over_na: mf / active as f64,
        n_over_na: total as f64 / active as f64,
        r_attn,
        r_dense,
        r_moe,
        r_moe_active: b.moe_active as f64 / active as f64,
    })
}

pub fn width_ratio(cfg: &ArchConfig) -> f64 {
    cfg.width_ratio()
}

/// Active compute density recovered from the attention share alone:
/// `M/N_a = 6 / (1 - r_a / (1 + 2 d (1 + N_kv/N_q) / S))`.
pub fn density_from_attention_share(cfg: &ArchConfig, r_attn: f64) -> f64 {
    let kv_over_q = cfg.kv_heads as f64 / cfg.q_heads as f64;
    let denom = 1.0 + 2.0 * cfg.hidden as f64 * (1.0 + kv_over_q) / cfg.seq_len as f64;
    6.0 / (1.0 - r_attn / denom)
}

/// Expansion ratio recovered from the MoE share of active parameters:
/// `N/N_a = 1 + r_m^(N_a) ((N_e+1)/(K+1) - 1)`.
pub fn expansion_from_moe_share(cfg: &ArchConfig, r_moe_active: f64) -> f64 {
    1.0 + r_moe_active * (cfg.shape().max_expansion() - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn shape_1e18() -> FixedShape {
        FixedShape {
            head_dim: 64,
            q_heads: 4,
            kv_heads: 2,
            seq_len: 8192,
            experts: 288,
            top_k: 8,
            gamma: 3.0,
        }
    }

    fn row(d: u64, l_d: u64, l_m: u64, d_m: u64) -> ArchConfig {
        ArchConfig::from_shape(&shape_1e18(), d, l_d, l_m, 3 * d, d_m)
    }

    #[test]
    fn first_grid_row_counts() {
        let cfg = row(1496, 1, 2, 168);
        assert_eq!(count_active_params(&cfg).unwrap(), 37_160_640);
        assert_eq!(flops_per_token(&cfg).unwrap(), 260_712_576);
        assert_eq!(total_params(&cfg).unwrap(), 459_391_680);
    }

    #[test]
    fn narrow_hidden_row_counts() {
        let cfg = row(432, 1, 2, 1456);
        assert_eq!(count_active_params(&cfg).unwrap(), 36_640_512);
        assert_eq!(flops_per_token(&cfg).unwrap(), 257_591_808);
        assert_eq!(total_params(&cfg).unwrap(), 1_093_347_072);
    }

    #[test]
    fn no_moe_layers() {
        let cfg = row(512, 1, 0, 64);
        let attn = 2 * 512 * 64 * 6;
        assert_eq!(count_active_params(&cfg).unwrap(), attn + 3 * 512 * 1536);
        assert_eq!(total_params(&cfg).unwrap(), count_active_params(&cfg).unwrap());
    }

    #[test]
    fn attention_free_limit() {
        let mut cfg = row(1496, 1, 2, 168);
        cfg.seq_len = 0;
        let na = count_active_params(&cfg).unwrap();
        assert_eq!(flops_per_token(&cfg).unwrap(), 6 * na);
    }

    #[test]
    fn metrics_ratios() {
        let m = compute_metrics(&row(1496, 1, 2, 168)).unwrap();
        assert!((m.m_over_na - 7.0158).abs() < 1e-3, "{}", m.m_over_na);
        assert!((m.n_over_na - 12.362).abs() < 1e-3, "{}", m.n_over_na);
        assert!((m.r_attn + m.r_dense + m.r_moe - 1.0).abs() < 1e-12);

        let m = compute_metrics(&row(432, 1, 2, 1456)).unwrap();
        assert!((m.m_over_na - 7.030).abs() < 1e-3);
        assert!((m.n_over_na - 29.84).abs() < 1e-2);
    }

    #[test]
    fn all_moe_limit_reaches_max_expansion() {
        // No attention or dense parameters: every active parameter is MoE.
        let cfg = ArchConfig {
            head_dim: 1,
            ..row(64, 0, 2, 64)
        };
        let b = cfg.breakdown().unwrap();
        let ratio = (b.moe_active + b.moe_inactive) as f64 / b.moe_active as f64;
        assert!((ratio - 289.0 / 9.0).abs() < 1e-12);
        assert!((expansion_from_moe_share(&cfg, 1.0) - 289.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn width_ratio_values() {
        assert!((row(1496, 1, 2, 168).width_ratio() - 1512.0 / 1496.0).abs() < 1e-15);
        assert_eq!(row(512, 1, 2, 512).width_ratio(), 9.0);
        for rho in [3.0, 3.5, 4.0, 4.5, 5.0_f64] {
            // exactly representable sweep targets
            assert_eq!((rho * 2.0).fract(), 0.0);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = row(1496, 1, 2, 168);
        cfg.kv_heads = 3;
        assert!(matches!(
            count_active_params(&cfg),
            Err(Error::InvalidConfig(msg)) if msg.contains("multiple of kv_heads")
        ));
        let mut cfg = row(1496, 0, 0, 168);
        assert!(count_active_params(&cfg).is_err());
        cfg.moe_layers = 1;
        cfg.top_k = 288;
        assert!(matches!(
            flops_per_token(&cfg),
            Err(Error::InvalidConfig(msg)) if msg.contains("must exceed top_k")
        ));
    }

    #[test]
    fn json_field_names() {
        let v = serde_json::to_value(row(1496, 1, 2, 168)).unwrap();
        for key in ["hidden", "dense_layers", "moe_layers", "expert_ffn", "q_heads"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["hidden"].is_u64());
        assert!(v["gamma"].is_f64());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_config() -> impl Strategy<Value = ArchConfig> {
        (
            1u64..=512,
            0u64..=12,
            0u64..=24,
            1u64..=512,
            prop::sample::select(vec![32u64, 64, 128]),
            prop::sample::select(vec![(4u64, 2u64), (8, 4), (16, 8), (8, 8)]),
            1u64..=16384,
        )
            .prop_filter("at least one layer", |t| t.1 + t.2 > 0)
            .prop_map(|(d8, l_d, l_m, dm8, head_dim, (q, kv), seq)| ArchConfig {
                hidden: 8 * d8,
                dense_layers: l_d,
                moe_layers: l_m,
                dense_ffn: 24 * d8,
                expert_ffn: 8 * dm8,
                head_dim,
                q_heads: q,
                kv_heads: kv,
                seq_len: seq,
                experts: 288,
                top_k: 8,
                gamma: 3.0,
            })
    }

    proptest! {
        #[test]
        fn total_at_least_active(cfg in arb_config()) {
            let na = count_active_params(&cfg).unwrap();
            let n = total_params(&cfg).unwrap();
            prop_assert!(n >= na);
            prop_assert_eq!(n == na, cfg.moe_layers == 0);
        }

        #[test]
        fn density_above_six(cfg in arb_config()) {
            let m = compute_metrics(&cfg).unwrap();
            prop_assert!(m.m_over_na > 6.0);
            prop_assert!(m.n_over_na >= 1.0 && m.n_over_na <= 289.0 / 9.0 + 1e-12);
        }

        #[test]
        fn ratio_closure(cfg in arb_config()) {
            let m = compute_metrics(&cfg).unwrap();
            prop_assert!((m.r_attn + m.r_dense + m.r_moe - 1.0).abs() < 1e-12);
            for r in [m.r_attn, m.r_dense, m.r_moe] {
                prop_assert!((0.0..=1.0).contains(&r));
            }
            let density = density_from_attention_share(&cfg, m.r_attn);
            prop_assert!((density / m.m_over_na - 1.0).abs() < 1e-9);
            let expansion = expansion_from_moe_share(&cfg, m.r_moe_active);
            prop_assert!((expansion / m.n_over_na - 1.0).abs() < 1e-9);
        }

        #[test]
        fn deterministic(cfg in arb_config()) {
            prop_assert_eq!(compute_metrics(&cfg).unwrap(), compute_metrics(&cfg).unwrap());
        }
    }
}
