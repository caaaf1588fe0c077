//! Estimators and intervals shared by the Monte Carlo modules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Share of the weight sum above which a moment estimate is flagged.
pub const HEAVY_TAIL_SHARE: f64 = 0.2;

/// Monte Carlo estimate of `E[W]` for non-negative weights `W = exp(l)`,
/// aggregated in log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replicas: usize,
    pub log_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Largest single weight divided by the weight sum.
    pub max_weight_share: f64,
    pub heavy_tail: bool,
    /// Replicas dropped before aggregation (e.g. window violations).
    pub excluded: usize,
}

impl MomentEstimate {
    /// Aggregates per-replica log-weights with log-sum-exp.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        let n = log_weights.len();
        if n == 0 {
            return Err(Error::InvalidParameter("no replicas to aggregate".into()));
        }
        if let Some(bad) = log_weights.iter().find(|l| l.is_nan() || **l == f64::INFINITY) {
            return Err(Error::NonFinite(format!("log-weight {bad}")));
        }
        let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Ok(MomentEstimate {
                mean: 0.0,
                std_error: 0.0,
                replicas: n,
                log_mean: f64::NEG_INFINITY,
                ci_low: 0.0,
                ci_high: 0.0,
                max_weight_share: 0.0,
                heavy_tail: false,
                excluded: 0,
            });
        }
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for &l in log_weights {
            let e = (l - m).exp();
            s1 += e;
            s2 += e * e;
        }
        let nf = n as f64;
        let scale = m.exp();
        let mean_rel = s1 / nf;
        let var_rel = if n > 1 { ((s2 / nf - mean_rel * mean_rel) * nf / (nf - 1.0)).max(0.0) } else { 0.0 };
        let mean = scale * mean_rel;
        let std_error = scale * (var_rel / nf).sqrt();
        let max_weight_share = 1.0 / s1;
        Ok(MomentEstimate {
            mean,
            std_error,
            replicas: n,
            log_mean: m + mean_rel.ln(),
            ci_low: mean - Z95 * std_error,
            ci_high: mean + Z95 * std_error,
            max_weight_share,
            heavy_tail: n > 1 && max_weight_share > HEAVY_TAIL_SHARE,
            excluded: 0,
        })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite(format!("weight {bad}")));
        }
        let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        Self::from_log_weights(&logs)
    }

    pub fn with_excluded(mut self, excluded: usize) -> Self {
        self.excluded = excluded;
        self
    }

    /// Standard error of `log(mean)` by the delta method.
    pub fn log_std_error(&self) -> f64 {
        if self.mean > 0.0 {
            self.std_error / self.mean
        } else {
            f64::INFINITY
        }
    }
}

/// Plain sample mean with standard error, for signed observables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replicas: usize,
}

impl MeanEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let mut acc = Running::default();
        for &v in values {
            acc.push(v);
        }
        acc.estimate()
    }

    pub fn ci(&self) -> (f64, f64) {
        (self.mean - Z95 * self.std_error, self.mean + Z95 * self.std_error)
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: f64, other_se: f64, k: f64) -> bool {
        (self.mean - other).abs() <= k * (self.std_error.powi(2) + other_se.powi(2)).sqrt()
    }
}

/// Welford accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct Running {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn estimate(&self) -> MeanEstimate {
        let se = if self.n > 0 { (self.variance() / self.n as f64).sqrt() } else { f64::NAN };
        MeanEstimate { mean: self.mean, std_error: se, replicas: self.n }
    }
}

/// Binomial proportion with a Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub hits: usize,
    pub trials: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub std_error: f64,
}

impl Proportion {
    pub fn new(hits: usize, trials: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(hits, trials, Z95);
        let p_hat = if trials > 0 { hits as f64 / trials as f64 } else { f64::NAN };
        let std_error = if trials > 0 { (p_hat * (1.0 - p_hat) / trials as f64).sqrt() } else { f64::NAN };
        Proportion { hits, trials, p_hat, ci_low, ci_high, std_error }
    }

    /// Errors with [`Error::ZeroHits`] carrying the one-sided 95% bound.
    pub fn require_hits(self) -> Result<Self> {
        if self.hits == 0 {
            Err(Error::ZeroHits { upper_bound: zero_hit_upper_bound(self.trials), replicas: self.trials })
        } else {
            Ok(self)
        }
    }
}

pub fn wilson_interval(hits: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// One-sided 95% upper bound on a probability after zero hits in `trials`.
pub fn zero_hit_upper_bound(trials: usize) -> f64 {
    if trials == 0 {
        1.0
    } else {
        1.0 - 0.05f64.powf(1.0 / trials as f64)
    }
}

/// Weighted least squares fit of `y = X beta`; returns the coefficients,
/// their standard errors (from the weights, taken as inverse variances) and
/// the weighted residual sum of squares.
pub fn weighted_least_squares(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = rows.len();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(Error::InvalidParameter("least squares needs matching non-empty inputs".into()));
    }
    let k = rows[0].len();
    if n < k {
        return Err(Error::InvalidParameter(format!("{n} points cannot fit {k} coefficients")));
    }
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for ((row, &yi), &wi) in rows.iter().zip(y).zip(w) {
        for i in 0..k {
            b[i] += wi * row[i] * yi;
            for j in 0..k {
                a[i][j] += wi * row[i] * row[j];
            }
        }
    }
    let inv = invert(&a).ok_or_else(|| Error::InvalidParameter("singular normal equations".into()))?;
    let beta: Vec<f64> = (0..k).map(|i| (0..k).map(|j| inv[i][j] * b[j]).sum()).collect();
    let se: Vec<f64> = (0..k).map(|i| inv[i][i].max(0.0).sqrt()).collect();
    let rss = rows
        .iter()
        .zip(y)
        .zip(w)
        .map(|((row, &yi), &wi)| {
            let fit: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
            wi * (yi - fit).powi(2)
        })
        .sum();
    Ok((beta, se, rss))
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let k = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..k).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..k {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * k {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[k..].to_vec()).collect())
}

/// Ordinary least squares slope of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let rows: Vec<Vec<f64>> = x.iter().map(|&xi| vec![1.0, xi]).collect();
    let (beta, _, _) = weighted_least_squares(&rows, y, &vec![1.0; x.len()])?;
    Ok((beta[0], beta[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_space_matches_direct_mean() {
        let v = [1.0, 2.0, 4.0, 0.5];
        let e = MomentEstimate::from_values(&v).unwrap();
        assert!((e.mean - 1.875).abs() < 1e-14);
        let direct_var = v.iter().map(|x| (x - 1.875f64).powi(2)).sum::<f64>() / 3.0;
        assert!((e.std_error - (direct_var / 4.0).sqrt()).abs() < 1e-14);
        assert!((e.log_mean - 1.875f64.ln()).abs() < 1e-14);
        assert!((e.max_weight_share - 4.0 / 7.5).abs() < 1e-14);
        assert!(e.heavy_tail);
        assert!(e.ci_low <= e.ci_high);
    }

    #[test]
    fn huge_log_weights_do_not_overflow() {
        let e = MomentEstimate::from_log_weights(&[1000.0; 10]).unwrap();
        assert!((e.log_mean - 1000.0).abs() < 1e-12);
        assert!(!e.heavy_tail);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(MomentEstimate::from_log_weights(&[0.0, f64::NAN]).is_err());
        assert!(MomentEstimate::from_log_weights(&[]).is_err());
    }

    #[test]
    fn wilson_brackets_the_estimate() {
        let p = Proportion::new(30, 100);
        assert!(p.ci_low < 0.3 && 0.3 < p.ci_high);
        let z = Proportion::new(0, 1000);
        assert!(z.ci_low < 1e-15);
        match z.require_hits() {
            Err(Error::ZeroHits { upper_bound, replicas }) => {
                assert_eq!(replicas, 1000);
                assert!((upper_bound - 0.0029914).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn least_squares_recovers_a_line() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|t| 0.7 - 0.3 / t).collect();
        let rows: Vec<Vec<f64>> = x.iter().map(|t| vec![1.0, 1.0 / t]).collect();
        let (beta, _, rss) = weighted_least_squares(&rows, &y, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((beta[0] - 0.7).abs() < 1e-12);
        assert!((beta[1] + 0.3).abs() < 1e-12);
        assert!(rss < 1e-20);
    }

    #[test]
    fn welford_matches_two_pass() {
        let mut r = Running::default();
        for v in [3.0, 5.0, 9.0] {
            r.push(v);
        }
        assert!((r.mean() - 17.0 / 3.0).abs() < 1e-14);
        assert!((r.variance() - 9.333333333333334).abs() < 1e-12);
    }
}
