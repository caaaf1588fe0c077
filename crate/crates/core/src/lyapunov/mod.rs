//! Lyapunov exponents from finite-time moment estimates, plus the
//! closed-form envelopes and bounds they must respect, phrased as
//! predicates with `3σ` slack.

use serde::{Deserialize, Serialize};

use crate::anderson::{
    direct_log_weights, direct_moment_grid, dual_log_weights, dual_moment_grid, DualSetup, MomentParams, MomentReport,
};
use crate::error::{Error, Result};
use crate::kernels::make_simple_random_walk;
use crate::lattice::Lattice;
use crate::rng::Replication;
use crate::stats::weighted_least_squares;
use crate::voter::VoterConfig;

/// `I(M) = M ln M - M + 1`.
pub fn rate_function_i(m: f64) -> Result<f64> {
    if !(m >= 1.0) {
        return Err(Error::DomainError(format!("I(M) needs M >= 1, got {m}")));
    }
    if m == 1.0 {
        return Ok(0.0);
    }
    Ok(m * m.ln() - m + 1.0)
}

/// The `M > 1` with `I(M) = (1-ρ)γ / (2dκ)`, by bisection.
pub fn envelope_m(kappa: f64, gamma: f64, rho: f64, dim: usize) -> Result<f64> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa {kappa} must be positive")));
    }
    if !(gamma > 0.0) || !(rho >= 0.0 && rho < 1.0) || dim == 0 {
        return Err(Error::InvalidParameter("need gamma > 0, 0 <= rho < 1, d >= 1".into()));
    }
    let target = (1.0 - rho) * gamma / (2.0 * dim as f64 * kappa);
    let f = |m: f64| rate_function_i(m).unwrap() - target;
    // I(1 + x) ≈ x²/2 for small x, so start just above the root of that
    let mut lo = 1.0;
    let mut hi = 1.0 + (2.0 * target).sqrt().max(1e-300) * 2.0 + 1e-300;
    while f(hi) < 0.0 {
        hi = 1.0 + 2.0 * (hi - 1.0);
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (hi - 1.0).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEnvelope {
    pub kappas: Vec<f64>,
    pub m: Vec<f64>,
    /// `(M(κ) - 1) · 2d`.
    pub upper_slope: Vec<f64>,
    /// `-2d`.
    pub lower_slope: f64,
}

pub fn lipschitz_envelope(kappas: &[f64], gamma: f64, rho: f64, dim: usize) -> Result<LipschitzEnvelope> {
    let m: Vec<f64> = kappas.iter().map(|&k| envelope_m(k, gamma, rho, dim)).collect::<Result<_>>()?;
    let upper_slope = m.iter().map(|m| (m - 1.0) * 2.0 * dim as f64).collect();
    Ok(LipschitzEnvelope { kappas: kappas.to_vec(), m, upper_slope, lower_slope: -2.0 * dim as f64 })
}

/// Outcome of a one-sided check `statistic <= bound` (or `>=`) with slack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateReport {
    pub name: String,
    pub passed: bool,
    /// Hard predicates are exact at finite `t`; a failure is an error.
    pub hard: bool,
    pub statistic: f64,
    pub bound: f64,
    pub sigma: f64,
    pub detail: String,
}

impl PredicateReport {
    fn at_least(name: &str, hard: bool, statistic: f64, bound: f64, sigma: f64, detail: String) -> Self {
        PredicateReport {
            name: name.into(),
            passed: statistic >= bound - 3.0 * sigma,
            hard,
            statistic,
            bound,
            sigma,
            detail,
        }
    }

    fn at_most(name: &str, hard: bool, statistic: f64, bound: f64, sigma: f64, detail: String) -> Self {
        PredicateReport {
            name: name.into(),
            passed: statistic <= bound + 3.0 * sigma,
            hard,
            statistic,
            bound,
            sigma,
            detail,
        }
    }

    pub fn margin(&self) -> f64 {
        (self.statistic - self.bound).abs()
    }
}

/// `Λ̂_p(t) ∈ [ργ - 3σ, γ + 3σ]`.
pub fn sandwich_check(r: &MomentReport) -> PredicateReport {
    let (lo, hi) = (r.rho * r.params.gamma, r.params.gamma);
    let s = r.lambda_std_error;
    let detail = format!("p={} kappa={} t={} lambda={} in [{lo}, {hi}]", r.params.p, r.params.kappa, r.params.t, r.lambda_hat);
    let ok_lo = r.lambda_hat >= lo - 3.0 * s;
    let ok_hi = r.lambda_hat <= hi + 3.0 * s;
    let bound = if ok_lo { hi } else { lo };
    PredicateReport { name: "sandwich".into(), passed: ok_lo && ok_hi, hard: true, statistic: r.lambda_hat, bound, sigma: s, detail }
}

/// `Λ̂_p(t) >= Λ̂_{p-1}(t) - 3σ`.
pub fn monotonicity_check(lower: &MomentReport, upper: &MomentReport) -> PredicateReport {
    let s = lower.lambda_std_error.hypot(upper.lambda_std_error);
    PredicateReport::at_least(
        "monotonicity",
        true,
        upper.lambda_hat,
        lower.lambda_hat,
        s,
        format!("p={} vs p={} at kappa={} t={}", upper.params.p, lower.params.p, upper.params.kappa, upper.params.t),
    )
}

/// Runs sandwich and monotonicity over a batch of reports.
pub fn hard_checks(reports: &[MomentReport]) -> Vec<PredicateReport> {
    let mut out: Vec<PredicateReport> = reports.iter().map(sandwich_check).collect();
    for a in reports {
        for b in reports {
            let same = a.estimator == b.estimator
                && a.params.kappa == b.params.kappa
                && a.params.gamma == b.params.gamma
                && a.params.t == b.params.t
                && a.rho == b.rho
                && a.warmup == b.warmup;
            if same && b.params.p == a.params.p + 1 {
                out.push(monotonicity_check(a, b));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtrapolationModel {
    /// `λ + c/t`.
    #[default]
    InverseT,
    /// `λ + c/t + b ln(t)/t`.
    InverseTLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub lambda_hat: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCurve {
    pub p: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub rho: f64,
    pub dim: usize,
    pub points: Vec<CurvePoint>,
    pub model: ExtrapolationModel,
    pub lambda_hat: f64,
    pub lambda_std_error: f64,
    /// Weighted residual sum of squares of the fit.
    pub residual: f64,
    pub reports: Vec<MomentReport>,
}

impl LyapunovCurve {
    /// Extrapolated value inside the envelope of the point CIs widened by
    /// the residual.
    pub fn extrapolation_is_sane(&self) -> bool {
        let pad = self.residual.sqrt();
        let lo = self.points.iter().map(|p| p.ci_low).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.ci_high).fold(f64::NEG_INFINITY, f64::max);
        let w = (hi - lo).max(0.0);
        self.lambda_hat >= lo - pad - w && self.lambda_hat <= hi + pad + w
    }
}

/// Builds a curve from moment reports on an increasing `t` grid.
pub fn curve_from_reports(reports: Vec<MomentReport>, dim: usize, model: ExtrapolationModel) -> Result<LyapunovCurve> {
    if reports.len() < 3 {
        return Err(Error::InvalidParameter("need at least three t values".into()));
    }
    if reports.windows(2).any(|w| !(w[1].params.t > w[0].params.t)) {
        return Err(Error::InvalidParameter("t grid must be increasing".into()));
    }
    let points: Vec<CurvePoint> = reports
        .iter()
        .map(|r| CurvePoint {
            t: r.params.t,
            lambda_hat: r.lambda_hat,
            std_error: r.lambda_std_error,
            ci_low: r.lambda_hat - crate::stats::Z95 * r.lambda_std_error,
            ci_high: r.lambda_hat + crate::stats::Z95 * r.lambda_std_error,
        })
        .collect();
    let floor = points.iter().map(|p| p.std_error).filter(|s| *s > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| match model {
            ExtrapolationModel::InverseT => vec![1.0, 1.0 / p.t],
            ExtrapolationModel::InverseTLog => vec![1.0, 1.0 / p.t, p.t.ln() / p.t],
        })
        .collect();
    let y: Vec<f64> = points.iter().map(|p| p.lambda_hat).collect();
    let w: Vec<f64> = points.iter().map(|p| 1.0 / p.std_error.max(floor).powi(2)).collect();
    let (lambda_hat, lambda_std_error, residual) = if rows.len() > rows[0].len() || model == ExtrapolationModel::InverseT {
        let (beta, se, rss) = weighted_least_squares(&rows, &y, &w)?;
        (beta[0], se[0], rss)
    } else {
        return Err(Error::InvalidParameter("too few t values for the model".into()));
    };
    let first = &reports[0];
    Ok(LyapunovCurve {
        p: first.params.p,
        kappa: first.params.kappa,
        gamma: first.params.gamma,
        rho: first.rho,
        dim,
        points,
        model,
        lambda_hat,
        lambda_std_error,
        residual,
        reports,
    })
}

/// Which moment estimator feeds the curves.
#[derive(Clone, Debug)]
pub enum EstimatorChoice {
    Direct(VoterConfig),
    Dual(DualSetup),
}

impl EstimatorChoice {
    pub fn dim(&self) -> usize {
        match self {
            EstimatorChoice::Direct(c) => c.torus.dim(),
            EstimatorChoice::Dual(s) => s.kernel.dim(),
        }
    }

    pub fn rho(&self) -> f64 {
        match self {
            EstimatorChoice::Direct(c) => c.rho,
            EstimatorChoice::Dual(s) => s.rho,
        }
    }

    pub fn run(&self, grid: &[MomentParams], rep: &Replication) -> Result<Vec<MomentReport>> {
        match self {
            EstimatorChoice::Direct(c) => direct_moment_grid(c, grid, rep),
            EstimatorChoice::Dual(s) => dual_moment_grid(s, grid, rep),
        }
    }

    /// Per-replica log-moments `ln W` on the scale of `E[u^p]`; replicas
    /// that violate the torus window are `None`.
    fn log_moments(&self, grid: &[MomentParams], rep: &Replication) -> Result<Vec<Vec<Option<f64>>>> {
        match self {
            EstimatorChoice::Direct(c) => direct_log_weights(c, grid, rep),
            EstimatorChoice::Dual(s) => {
                let w = dual_log_weights(s, grid, rep)?;
                Ok(w.into_iter()
                    .map(|row| row.into_iter().zip(grid).map(|(l, g)| Some(l + g.p as f64 * s.rho * g.gamma * g.t)).collect())
                    .collect())
            }
        }
    }
}

pub fn estimate_lyapunov(
    p: usize,
    kappa: f64,
    gamma: f64,
    t_grid: &[f64],
    choice: &EstimatorChoice,
    model: ExtrapolationModel,
    rep: &Replication,
) -> Result<LyapunovCurve> {
    if t_grid.len() < 3 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("t grid must be increasing with at least three points".into()));
    }
    let grid: Vec<MomentParams> = t_grid.iter().map(|&t| MomentParams::new(p, kappa, gamma, t)).collect();
    let reports = choice.run(&grid, rep)?;
    curve_from_reports(reports, choice.dim(), model)
}

/// `λ̂_1 - ργ >= T ρ(1-ρ)γ²/4 - 3σ`.
pub fn clumping_check_value(lambda: f64, sigma: f64, rho: f64, gamma: f64, t_probe: f64) -> PredicateReport {
    let required = 0.25 * t_probe * rho * (1.0 - rho) * gamma * gamma;
    let gap = lambda - rho * gamma;
    PredicateReport::at_least(
        "clumping",
        false,
        gap,
        required,
        sigma,
        format!("gap {gap} vs required {required}; 95% CI excludes 0: {}", gap_excludes_zero(gap, sigma)),
    )
}

/// Whether the 95% interval `gap ± z σ` lies strictly above 0.
pub fn gap_excludes_zero(gap: f64, sigma: f64) -> bool {
    gap - crate::stats::Z95 * sigma > 0.0
}

pub fn clumping_check(curve: &LyapunovCurve, t_probe: f64) -> Result<PredicateReport> {
    if curve.p != 1 {
        return Err(Error::InvalidParameter("clumping is a statement about p = 1".into()));
    }
    Ok(clumping_check_value(curve.lambda_hat, curve.lambda_std_error, curve.rho, curve.gamma, t_probe))
}

/// Difference of two `log mean(W)/scale` with a delta-method standard
/// error that keeps the covariance of common random numbers.
fn paired_log_difference(a: &[f64], scale_a: f64, b: &[f64], scale_b: f64) -> Result<(f64, f64)> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return Err(Error::InvalidParameter("need at least two paired replicas".into()));
    }
    let ma = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mb = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let wa: Vec<f64> = a.iter().map(|l| (l - ma).exp()).collect();
    let wb: Vec<f64> = b.iter().map(|l| (l - mb).exp()).collect();
    let meana = wa.iter().sum::<f64>() / n as f64;
    let meanb = wb.iter().sum::<f64>() / n as f64;
    let psi: Vec<f64> = wa.iter().zip(&wb).map(|(x, y)| x / meana / scale_a - y / meanb / scale_b).collect();
    let mpsi = psi.iter().sum::<f64>() / n as f64;
    let var = psi.iter().map(|v| (v - mpsi).powi(2)).sum::<f64>() / (n - 1) as f64;
    let diff = (ma + meana.ln()) / scale_a - (mb + meanb.ln()) / scale_b;
    Ok((diff, (var / n as f64).sqrt()))
}

fn paired_columns(rows: &[Vec<Option<f64>>], i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    rows.iter().filter_map(|r| Some((r[i]?, r[j]?))).unzip()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub p: usize,
    pub gap: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub monotone: PredicateReport,
}

/// `λ̂_p - λ̂_{p-1}` at time `t` with common random numbers across `p`.
pub fn intermittency_gap(
    p: usize,
    kappa: f64,
    gamma: f64,
    t: f64,
    choice: &EstimatorChoice,
    rep: &Replication,
) -> Result<GapEstimate> {
    if p < 2 {
        return Err(Error::InvalidParameter("intermittency gap needs p >= 2".into()));
    }
    let grid = [MomentParams::new(p - 1, kappa, gamma, t), MomentParams::new(p, kappa, gamma, t)];
    let rows = choice.log_moments(&grid, rep)?;
    let (lo, hi) = paired_columns(&rows, 0, 1);
    let (gap, se) = paired_log_difference(&hi, p as f64 * t, &lo, (p - 1) as f64 * t)?;
    let monotone = PredicateReport::at_least("monotonicity", true, gap, 0.0, se, format!("lambda_{p} - lambda_{}", p - 1));
    Ok(GapEstimate {
        p,
        gap,
        std_error: se,
        ci_low: gap - crate::stats::Z95 * se,
        ci_high: gap + crate::stats::Z95 * se,
        monotone,
    })
}

/// `pt Λ̂_p(t; γ) <= t Λ̂_1(t; pγ) + 3σ`.
pub fn jensen_bound_check(
    p: usize,
    kappa: f64,
    gamma: f64,
    t: f64,
    choice: &EstimatorChoice,
    rep: &Replication,
) -> Result<PredicateReport> {
    if p < 2 {
        return Err(Error::InvalidParameter("Jensen bound needs p >= 2".into()));
    }
    let grid = [MomentParams::new(p, kappa, gamma, t), MomentParams::new(1, kappa, p as f64 * gamma, t)];
    let rows = choice.log_moments(&grid, rep)?;
    let (lhs, rhs) = paired_columns(&rows, 0, 1);
    let (diff, se) = paired_log_difference(&lhs, 1.0, &rhs, 1.0)?;
    Ok(PredicateReport::at_most(
        "jensen",
        false,
        diff,
        0.0,
        se,
        format!("log E[u^{p}](gamma) - log E[u]({p} gamma) at t={t}"),
    ))
}

/// Finite-difference slopes against `[-2d, (M(κ₁)-1)·2d]` for adjacent
/// `κ` values that are both at least 0.5.
pub fn slope_bound_checks(
    kappas: &[f64],
    lambdas: &[f64],
    sigmas: &[f64],
    gamma: f64,
    rho: f64,
    dim: usize,
) -> Result<Vec<PredicateReport>> {
    let mut out = Vec::new();
    for i in 1..kappas.len() {
        let (k1, k2) = (kappas[i - 1], kappas[i]);
        if k1 < 0.5 || k2 <= k1 {
            continue;
        }
        let slope = (lambdas[i] - lambdas[i - 1]) / (k2 - k1);
        let s = sigmas[i].hypot(sigmas[i - 1]) / (k2 - k1);
        let upper = (envelope_m(k1, gamma, rho, dim)? - 1.0) * 2.0 * dim as f64;
        let lower = -2.0 * dim as f64;
        let detail = format!("kappa {k1} -> {k2}");
        out.push(PredicateReport::at_least("slope_lower", false, slope, lower, s, detail.clone()));
        out.push(PredicateReport::at_most("slope_upper", false, slope, upper, s, detail));
    }
    Ok(out)
}

/// `|λ̂(h) - λ̂(0)| <= 2dh + 3σ`.
pub fn continuity_check(lambda0: f64, sigma0: f64, lambda_h: f64, sigma_h: f64, h: f64, dim: usize) -> PredicateReport {
    PredicateReport::at_most(
        "continuity",
        false,
        (lambda_h - lambda0).abs(),
        2.0 * dim as f64 * h,
        sigma0.hypot(sigma_h),
        format!("kappa 0 -> {h}"),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyConfig {
    pub dims: Vec<usize>,
    pub kappas: Vec<f64>,
    pub p: usize,
    pub gamma: f64,
    pub rho: f64,
    pub t: f64,
    pub warmup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyRow {
    pub dim: usize,
    pub kappa: f64,
    pub lambda_hat: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyScan {
    pub rows: Vec<DichotomyRow>,
    pub checks: Vec<PredicateReport>,
}

/// `λ̂_p(κ)` from the dual estimator on `Z^d` with simple random walk, for
/// every dimension and `κ`, followed by the expected-shape checks.
pub fn dichotomy_scan(cfg: &DichotomyConfig, rep: &Replication) -> Result<DichotomyScan> {
    if cfg.kappas.is_empty() || cfg.kappas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("kappa grid must be increasing and non-empty".into()));
    }
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for &d in &cfg.dims {
        let setup = DualSetup { kernel: make_simple_random_walk(d)?, lattice: Lattice::Free(d), rho: cfg.rho, warmup: cfg.warmup };
        let grid: Vec<MomentParams> = cfg.kappas.iter().map(|&k| MomentParams::new(cfg.p, k, cfg.gamma, cfg.t)).collect();
        let reports = dual_moment_grid(&setup, &grid, rep)?;
        for r in &reports {
            checks.push(sandwich_check(r));
        }
        let lam: Vec<f64> = reports.iter().map(|r| r.lambda_hat).collect();
        let sig: Vec<f64> = reports.iter().map(|r| r.lambda_std_error).collect();
        for r in &reports {
            rows.push(DichotomyRow {
                dim: d,
                kappa: r.params.kappa,
                lambda_hat: r.lambda_hat,
                std_error: r.lambda_std_error,
                ci_low: r.lambda_hat - crate::stats::Z95 * r.lambda_std_error,
                ci_high: r.lambda_hat + crate::stats::Z95 * r.lambda_std_error,
            });
        }
        let last = reports.len() - 1;
        if d <= 4 {
            for i in 1..reports.len() {
                checks.push(PredicateReport::at_least(
                    "recurrent_not_decreasing",
                    false,
                    lam[i],
                    lam[i - 1],
                    sig[i].hypot(sig[i - 1]),
                    format!("d={d} kappa {} -> {}", cfg.kappas[i - 1], cfg.kappas[i]),
                ));
            }
        } else if last > 0 {
            let sep = (lam[0] - crate::stats::Z95 * sig[0]) - (lam[last] + crate::stats::Z95 * sig[last]);
            checks.push(PredicateReport {
                name: "transient_ordering".into(),
                passed: sep > 0.0,
                hard: false,
                statistic: lam[0] - lam[last],
                bound: 0.0,
                sigma: sig[0].hypot(sig[last]),
                detail: format!("d={d}: lambda({}) vs lambda({}), CI separation {sep}", cfg.kappas[0], cfg.kappas[last]),
            });
            checks.extend(slope_bound_checks(&cfg.kappas, &lam, &sig, cfg.gamma, cfg.rho, d)?);
            if cfg.kappas[0] == 0.0 && cfg.kappas.len() > 1 && cfg.kappas[1] <= 0.1 {
                checks.push(continuity_check(lam[0], sig[0], lam[1], sig[1], cfg.kappas[1], d));
            }
        }
    }
    Ok(DichotomyScan { rows, checks })
}
