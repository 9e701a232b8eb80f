use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::linear::lstsq;
use super::{fit_failure, Dataset1D, Family, FitResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturatingInit {
    pub e: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturatingOptions {
    /// Fix `E = 0`, reducing the model to a power law fitted in linear space.
    pub pin_e_zero: bool,
    pub init: Option<SaturatingInit>,
    /// Exponent start grid `[b_min, b_max]` with `b_steps` points.
    pub b_min: f64,
    pub b_max: f64,
    pub b_steps: usize,
    pub max_iter: usize,
}

impl Default for SaturatingOptions {
    fn default() -> Self {
        Self {
            pin_e_zero: false,
            init: None,
            b_min: -3.0,
            b_max: 3.0,
            b_steps: 121,
            max_iter: 200,
        }
    }
}

struct Profile {
    ssr: f64,
    e: f64,
    a: f64,
}

struct Problem<'a> {
    data: &'a Dataset1D,
    /// `x` divided by its geometric mean.
    u: Vec<f64>,
    pinned: bool,
}

impl Problem<'_> {
    fn ssr(&self, e: f64, a: f64, b: f64) -> f64 {
        self.data
            .points
            .iter()
            .zip(&self.u)
            .enumerate()
            .map(|(i, ((_, y), u))| self.data.weight(i) * (y - e - a * u.powf(b)).powi(2))
            .sum()
    }

    /// Best `(E, A)` for a fixed exponent, with `E >= 0`.
    fn profile(&self, b: f64) -> Profile {
        let scaled = Dataset1D {
            points: self
                .u
                .iter()
                .zip(&self.data.points)
                .map(|(u, (_, y))| (*u, *y))
                .collect(),
            weights: self.data.weights.clone(),
        };
        let only_a = || {
            lstsq(Family::SaturatingPower, &scaled, 1, |u| vec![u.powf(b)])
                .map(|c| (0.0, c[0]))
        };
        let coef = if self.pinned {
            only_a()
        } else {
            match lstsq(Family::SaturatingPower, &scaled, 2, |u| vec![1.0, u.powf(b)]) {
                Ok(c) if c[0] >= 0.0 => Ok((c[0], c[1])),
                Ok(_) => only_a(),
                Err(e) => Err(e),
            }
        };
        match coef {
            Ok((e, a)) => Profile {
                ssr: self.ssr(e, a, b),
                e,
                a,
            },
            Err(_) => Profile {
                ssr: f64::INFINITY,
                e: 0.0,
                a: 0.0,
            },
        }
    }

    /// Golden-section refinement of the profiled objective on `[lo, hi]`.
    fn refine(&self, mut lo: f64, mut hi: f64) -> f64 {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let mut f1 = self.profile(x1).ssr;
        let mut f2 = self.profile(x2).ssr;
        for _ in 0..200 {
            if (hi - lo).abs() <= 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
                break;
            }
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = self.profile(x1).ssr;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = self.profile(x2).ssr;
            }
        }
        if f1 <= f2 {
            x1
        } else {
            x2
        }
    }

    /// Levenberg-Marquardt polish of `(E, A, B)`; `E` stays fixed when it
    /// is pinned or sits on its bound.
    fn polish(&self, mut p: [f64; 3], max_iter: usize) -> ([f64; 3], f64) {
        let fix_e = self.pinned || p[0] <= 0.0;
        let mut cur = self.ssr(p[0], p[1], p[2]);
        let mut lambda = 1e-6;
        for _ in 0..max_iter {
            if cur == 0.0 {
                break;
            }
            let mut jtj = Matrix3::<f64>::zeros();
            let mut jtr = Vector3::<f64>::zeros();
            for (i, ((_, y), u)) in self.data.points.iter().zip(&self.u).enumerate() {
                let w = self.data.weight(i);
                let ub = u.powf(p[2]);
                let r = y - p[0] - p[1] * ub;
                let j = Vector3::new(
                    if fix_e { 0.0 } else { 1.0 },
                    ub,
                    p[1] * ub * u.ln(),
                );
                jtj += w * j * j.transpose();
                jtr += w * r * j;
            }
            let mut improved = false;
            for _ in 0..30 {
                let mut m = jtj;
                for k in 0..3 {
                    m[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
                }
                if fix_e {
                    m[(0, 0)] = 1.0;
                }
                let Some(step) = m.lu().solve(&jtr) else {
                    lambda *= 10.0;
                    continue;
                };
                let next = [
                    if fix_e { p[0] } else { (p[0] + step[0]).max(0.0) },
                    p[1] + step[1],
                    p[2] + step[2],
                ];
                let s = self.ssr(next[0], next[1], next[2]);
                if s.is_finite() && s < cur {
                    let small = (0..3).all(|k| (next[k] - p[k]).abs() <= 1e-15 * (1.0 + p[k].abs()));
                    p = next;
                    let rel = (cur - s) / cur;
                    cur = s;
                    lambda = (lambda * 0.1).max(1e-15);
                    improved = !(small || rel < 1e-15);
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        (p, cur)
    }
}

/// `y = E + A x^B` with `E >= 0`.
///
/// The exponent is searched on a fixed start grid with `(E, A)` solved
/// linearly at each grid value; the best local minima are refined by golden
/// section and then polished jointly.
pub fn fit_saturating_power(data: &Dataset1D, opts: &SaturatingOptions) -> Result<FitResult> {
    let family = Family::SaturatingPower;
    if let Some((x, y)) = data.points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Domain(format!(
            "saturating power needs positive x and y, got ({x}, {y})"
        )));
    }
    data.require(family, if opts.pin_e_zero { 2 } else { 3 })?;
    if opts.b_steps < 2 || !(opts.b_min < opts.b_max) {
        return Err(Error::BadInput("exponent grid needs b_min < b_max and >= 2 steps".into()));
    }
    let log_gm = data.points.iter().map(|(x, _)| x.ln()).sum::<f64>() / data.len() as f64;
    let gm = log_gm.exp();
    let prob = Problem {
        data,
        u: data.points.iter().map(|(x, _)| x / gm).collect(),
        pinned: opts.pin_e_zero,
    };

    let step = (opts.b_max - opts.b_min) / (opts.b_steps - 1) as f64;
    let mut seeds: Vec<f64> = (0..opts.b_steps).map(|k| opts.b_min + k as f64 * step).collect();
    let grid: Vec<f64> = seeds.iter().map(|b| prob.profile(*b).ssr).collect();

    let mut starts: Vec<(f64, f64, f64)> = Vec::new();
    for k in 0..grid.len() {
        let left = if k == 0 { f64::INFINITY } else { grid[k - 1] };
        let right = grid.get(k + 1).copied().unwrap_or(f64::INFINITY);
        if grid[k].is_finite() && grid[k] <= left && grid[k] <= right {
            starts.push((grid[k], seeds[k] - step, seeds[k] + step));
        }
    }
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));
    starts.truncate(3);
    if let Some(init) = opts.init {
        seeds.push(init.b);
        starts.push((0.0, init.b - step, init.b + step));
    }
    if starts.is_empty() {
        return Err(fit_failure(family, "objective is non-finite on the whole exponent grid"));
    }

    let mut best: Option<([f64; 3], f64)> = None;
    for (_, lo, hi) in &starts {
        let b = prob.refine(*lo, *hi);
        let pr = prob.profile(b);
        if !pr.ssr.is_finite() {
            continue;
        }
        let (p, s) = prob.polish([pr.e, pr.a, b], opts.max_iter);
        if best.as_ref().is_none_or(|(_, bs)| s < *bs) {
            best = Some((p, s));
        }
    }
    let Some((p, _)) = best else {
        return Err(fit_failure(
            family,
            format!("no start among {} converged to a finite objective", starts.len()),
        ));
    };
    let a = p[1] * gm.powf(-p[2]);
    if !a.is_finite() {
        return Err(fit_failure(family, "amplitude overflow after rescaling"));
    }
    let mut fit = FitResult::new(family, &[("E", p[0]), ("A", a), ("B", p[2])]);
    fit.seeds = seeds;
    if opts.pin_e_zero {
        fit.notes.push("E pinned to 0".into());
    }
    Ok(fit.finish(data))
}
