use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Correlation coefficients with two-sided p-values.
///
/// Pearson and Spearman p-values use the `t` statistic with `n - 2` degrees of
/// freedom; Kendall's uses the normal approximation with tie-corrected
/// variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub n: usize,
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    pub p_pearson: f64,
    pub p_spearman: f64,
    pub p_kendall: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the inputs has zero variance".into(),
        ));
    }
    let r = sxy / (sxx * syy).sqrt();
    // round-off snap for exactly linear data
    if 1.0 - r.abs() <= 8.0 * f64::EPSILON {
        return Ok(r.signum());
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub(crate) fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn t_pvalue(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

fn tie_groups(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        if j > i {
            out.push((j - i + 1) as f64);
        }
        i = j + 1;
    }
    out
}

fn kendall(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let sx = (x[j] - x[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            let sy = (y[j] - y[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            match (sx, sy) {
                (0, 0) => {}
                (0, _) => tx += 1,
                (_, 0) => ty += 1,
                _ if sx == sy => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let s = (conc - disc) as f64;
    let tau = (s / (((conc + disc + tx) * (conc + disc + ty)) as f64).sqrt()).clamp(-1.0, 1.0);

    let nf = n as f64;
    let (gx, gy) = (tie_groups(x), tie_groups(y));
    let sum = |g: &[f64], f: &dyn Fn(f64) -> f64| g.iter().map(|t| f(*t)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = sum(&gx, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(&gy, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum(&gx, &|t| t * (t - 1.0)) * sum(&gy, &|t| t * (t - 1.0));
    let v2 = sum(&gx, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&gy, &|t| t * (t - 1.0) * (t - 2.0));
    let var = (v0 - vt - vu) / 18.0
        + v1 / (2.0 * nf * (nf - 1.0))
        + v2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    let z = s / var.sqrt();
    let p = erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    (tau, p)
}

pub fn rank_stats(x: &[f64], y: &[f64]) -> Result<RankStats> {
    if x.len() != y.len() {
        return Err(Error::BadInput(format!(
            "lists differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::BadInput(format!(
            "rank statistics need at least 3 pairs, got {}",
            x.len()
        )));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::BadInput(format!("non-finite value {v}")));
    }
    let n = x.len();
    let pearson_r = pearson(x, y)?;
    let spearman_rho = pearson(&average_ranks(x), &average_ranks(y))?;
    let (kendall_tau, p_kendall) = kendall(x, y);
    Ok(RankStats {
        n,
        pearson_r,
        spearman_rho,
        kendall_tau,
        p_pearson: t_pvalue(pearson_r, n),
        p_spearman: t_pvalue(spearman_rho, n),
        p_kendall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let s = rank_stats(&v, &v).unwrap();
        assert_eq!((s.pearson_r, s.spearman_rho, s.kendall_tau), (1.0, 1.0, 1.0));
        let r: Vec<f64> = v.iter().rev().copied().collect();
        let s = rank_stats(&v, &r).unwrap();
        assert_eq!((s.pearson_r, s.spearman_rho, s.kendall_tau), (-1.0, -1.0, -1.0));
    }

    #[test]
    fn three_point_anchor() {
        let s = rank_stats(&[1.0, 2.0, 3.0], &[6.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.spearman_rho, -0.5);
        assert_eq!(s.kendall_tau, -1.0 / 3.0);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn tie_corrected_kendall() {
        // tau-b with ties in both lists, hand-counted: C = 7, D = 1,
        // ties only in x = 1, ties only in y = 1.
        let x = [1.0, 2.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 2.0, 5.0];
        let s = rank_stats(&x, &y).unwrap();
        let expected = 6.0 / (9.0f64 * 9.0).sqrt();
        assert!((s.kendall_tau - expected).abs() < 1e-15, "{}", s.kendall_tau);
        assert!(s.p_kendall > 0.0 && s.p_kendall < 1.0);
    }

    #[test]
    fn p_values_reference() {
        // reference values from an independent statistics package
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.2, 1.9, 3.4, 3.6, 5.3];
        let s = rank_stats(&x, &y).unwrap();
        assert!((s.pearson_r - 0.978_903_395_461_308_2).abs() < 1e-14);
        assert!((s.p_pearson - 0.003_666_684_923_144_659_6).abs() < 1e-12);
        assert_eq!(s.spearman_rho, 1.0);
        assert_eq!(s.p_spearman, 0.0);
        assert!((s.p_kendall - 0.014_305_878_435_429_648).abs() < 1e-12);

        let s = rank_stats(&[1.0, 2.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 2.0, 5.0]).unwrap();
        assert!((s.p_kendall - 0.118_432_928_916_671_9).abs() < 1e-10, "{}", s.p_kendall);
        assert!((s.spearman_rho - 0.763_157_894_736_842_1).abs() < 1e-14);
        assert!((s.p_spearman - 0.133_339_119_531_806_3).abs() < 1e-10);
    }

    #[test]
    fn zero_variance() {
        assert!(matches!(
            rank_stats(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(rank_stats(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::BadInput(_))));
    }
}
