//! Moments of the solution of `∂u/∂t = κΔu + γξu`, `u(·,0) ≡ 1`.
//!
//! Two estimators of `E[u(0,t)^p]`:
//! * **direct**: Feynman-Kac over a simulated voter field, read backwards in
//!   time from its flip log;
//! * **dual**: `e^{pργt} E[ρ^{-N^coal}]`, with coalescing walkers seeded on
//!   Poisson marks along the `p` random-walk paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::coalescing::{Engine, WalkerSeed};
use crate::error::{Error, Result};
use crate::kernels::{dual, Kernel};
use crate::lattice::{Lattice, Site};
use crate::rng::Replication;
use crate::stats::MomentEstimate;
use crate::voter::{init_field, VoterConfig};

/// Path of a simple random walk with jump rate `2dκ` started at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub kappa: f64,
    pub t: f64,
    /// Jump times, increasing, in `(0, t]`.
    pub times: Vec<f64>,
    /// `positions[0]` is the origin, `positions[i + 1]` the site after jump `i`.
    pub positions: Vec<Site>,
}

impl PathSample {
    pub fn jump_count(&self) -> usize {
        self.times.len()
    }

    pub fn endpoint(&self) -> Site {
        *self.positions.last().unwrap()
    }

    pub fn position_at(&self, s: f64) -> Site {
        self.positions[self.times.partition_point(|&j| j <= s)]
    }

    /// Largest coordinate modulus visited.
    pub fn max_excursion(&self) -> i32 {
        self.positions.iter().map(|p| p.norm_inf()).max().unwrap_or(0)
    }

    /// `(start, end, site)` pieces covering `[0, t]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, Site)> + '_ {
        (0..self.positions.len()).map(move |i| {
            let a = if i == 0 { 0.0 } else { self.times[i - 1] };
            let b = if i < self.times.len() { self.times[i] } else { self.t };
            (a, b, self.positions[i])
        })
    }
}

pub fn sample_walk<R: Rng + ?Sized>(dim: usize, kappa: f64, t: f64, rng: &mut R) -> Result<PathSample> {
    if !(kappa >= 0.0) || !kappa.is_finite() || !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("need kappa >= 0 and t >= 0, got {kappa}, {t}")));
    }
    if dim == 0 || dim > crate::lattice::MAX_DIM {
        return Err(Error::InvalidDimension(dim));
    }
    let mut path = PathSample { kappa, t, times: Vec::new(), positions: vec![Site::ORIGIN] };
    let rate = 2.0 * dim as f64 * kappa;
    if rate == 0.0 {
        return Ok(path);
    }
    let mut now = <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate;
    let mut pos = Site::ORIGIN;
    while now <= t {
        let dir = rng.random_range(0..2 * dim);
        pos = pos + Site::unit(dir / 2, if dir % 2 == 0 { 1 } else { -1 });
        path.times.push(now);
        path.positions.push(pos);
        now += <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate;
    }
    Ok(path)
}

/// Points of a homogeneous Poisson process on `[0, t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonMarks {
    pub intensity: f64,
    pub times: Vec<f64>,
}

pub fn sample_marks<R: Rng + ?Sized>(intensity: f64, t: f64, rng: &mut R) -> Result<PoissonMarks> {
    if !(intensity >= 0.0) || !(t >= 0.0) || !(intensity * t).is_finite() {
        return Err(Error::InvalidParameter(format!("bad Poisson intensity {intensity} or horizon {t}")));
    }
    let mean = intensity * t;
    let count = if mean > 0.0 {
        Poisson::new(mean).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng) as usize
    } else {
        0
    };
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * t).collect();
    times.sort_by(f64::total_cmp);
    Ok(PoissonMarks { intensity, times })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentParams {
    pub p: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub t: f64,
}

impl MomentParams {
    pub fn new(p: usize, kappa: f64, gamma: f64, t: f64) -> Self {
        MomentParams { p, kappa, gamma, t }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 1 {
            return Err(Error::InvalidParameter("p must be at least 1".into()));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidParameter(format!("kappa {} must be >= 0", self.kappa)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(Error::InvalidParameter(format!("t {} must be positive", self.t)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Direct,
    Dual,
    Pinned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub estimator: Estimator,
    pub params: MomentParams,
    pub rho: f64,
    pub warmup: f64,
    /// `E[u(0,t)^p]` for direct, `E[ρ^{-N^coal}]` for dual.
    pub estimate: MomentEstimate,
    /// Implied `Λ_p(t) = log E[u(0,t)^p] / (pt)`.
    pub lambda_hat: f64,
    pub lambda_std_error: f64,
}

impl MomentReport {
    fn new(estimator: Estimator, params: MomentParams, rho: f64, warmup: f64, estimate: MomentEstimate) -> Self {
        let pt = params.p as f64 * params.t;
        let shift = if estimator == Estimator::Dual { rho * params.gamma } else { 0.0 };
        MomentReport {
            estimator,
            params,
            rho,
            warmup,
            lambda_hat: shift + estimate.log_mean / pt,
            lambda_std_error: estimate.log_std_error() / pt,
            estimate,
        }
    }

    /// Aggregates one grid column of per-replica log-weights; `None`
    /// entries count as excluded replicas.
    pub fn from_log_weights(
        estimator: Estimator,
        params: MomentParams,
        rho: f64,
        warmup: f64,
        column: &[Option<f64>],
    ) -> Result<Self> {
        Ok(MomentReport::new(estimator, params, rho, warmup, aggregate(column.iter().copied())?))
    }

    /// `log E[u(0,t)^p]`, on the same scale for both estimators.
    pub fn log_moment(&self) -> f64 {
        self.lambda_hat * self.params.p as f64 * self.params.t
    }
}

fn walk_rng(seed: u64, q: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(q as u64 + 1);
    r
}

/// Per-replica log-weights `γ Σ_q ∫_0^t ξ(X_q(s), t-s) ds` for every grid
/// point, from one voter field per replica. `None` marks a walk that left
/// the window `|x_i| < L/2`.
///
/// The `p` walks of a grid point are driven by streams shared across grid
/// points, so the grid is evaluated with common random numbers.
pub fn direct_log_weights(cfg: &VoterConfig, grid: &[MomentParams], rep: &Replication) -> Result<Vec<Vec<Option<f64>>>> {
    cfg.validate()?;
    for g in grid {
        g.validate()?;
    }
    let horizon = grid.iter().map(|g| g.t).fold(0.0, f64::max);
    let dim = cfg.torus.dim();
    let half = (cfg.torus.side() / 2) as i32;
    rep.run(|_, rng| {
        let mut field = init_field(cfg, rng).expect("validated config");
        field.enable_log();
        field.evolve(horizon, rng);
        let log = field.log().expect("log enabled");
        let walk_seed: u64 = rng.random();
        grid.iter()
            .map(|g| {
                let mut total = 0.0;
                for q in 0..g.p {
                    let path = sample_walk(dim, g.kappa, g.t, &mut walk_rng(walk_seed, q)).expect("validated");
                    if path.max_excursion() >= half {
                        return None;
                    }
                    for (a, b, x) in path.segments() {
                        total += log.integral(cfg.torus.index(x), g.t - b, g.t - a);
                    }
                }
                Some(g.gamma * total)
            })
            .collect()
    })
}

fn aggregate(column: impl Iterator<Item = Option<f64>>) -> Result<MomentEstimate> {
    let mut logs = Vec::new();
    let mut excluded = 0;
    for w in column {
        match w {
            Some(l) => logs.push(l),
            None => excluded += 1,
        }
    }
    if logs.is_empty() {
        return Err(Error::InvalidParameter("every replica violated the torus window".into()));
    }
    Ok(MomentEstimate::from_log_weights(&logs)?.with_excluded(excluded))
}

pub fn direct_moment_grid(cfg: &VoterConfig, grid: &[MomentParams], rep: &Replication) -> Result<Vec<MomentReport>> {
    let weights = direct_log_weights(cfg, grid, rep)?;
    grid.iter()
        .enumerate()
        .map(|(i, g)| {
            let est = aggregate(weights.iter().map(|r| r[i]))?;
            Ok(MomentReport::new(Estimator::Direct, *g, cfg.rho, cfg.warmup(), est))
        })
        .collect()
}

pub fn direct_moment(params: MomentParams, cfg: &VoterConfig, rep: &Replication) -> Result<MomentReport> {
    Ok(direct_moment_grid(cfg, &[params], rep)?.remove(0))
}

/// Settings of the dual estimator that are not part of [`MomentParams`].
#[derive(Clone, Debug)]
pub struct DualSetup {
    /// The voter kernel `p`; dual walkers jump with `p*`.
    pub kernel: Kernel,
    pub lattice: Lattice,
    pub rho: f64,
    /// Warm-up `T`; the coalescing system runs to `T + t`.
    pub warmup: f64,
}

impl DualSetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("density {} must lie in (0, 1)", self.rho)));
        }
        if !(self.warmup >= 0.0) || !self.warmup.is_finite() {
            return Err(Error::InvalidParameter(format!("warm-up {} must be finite and >= 0", self.warmup)));
        }
        if self.kernel.dim() != self.lattice.dim() {
            return Err(Error::InvalidDimension(self.kernel.dim()));
        }
        Ok(())
    }
}

/// Per-replica log-weights `N^coal_{T+t} · ln(1/ρ)` for every grid point,
/// with walks and marks on streams shared across the grid.
pub fn dual_log_weights(setup: &DualSetup, grid: &[MomentParams], rep: &Replication) -> Result<Vec<Vec<f64>>> {
    setup.validate()?;
    for g in grid {
        g.validate()?;
    }
    let pstar = dual(&setup.kernel);
    let dim = setup.kernel.dim();
    let lnr = -setup.rho.ln();
    rep.run(|_, rng| {
        let walk_seed: u64 = rng.random();
        let mark_seed: u64 = rng.random();
        let mut engine = Engine::new();
        let mut seeds = Vec::new();
        grid.iter()
            .map(|g| {
                seeds.clear();
                for q in 0..g.p {
                    let path = sample_walk(dim, g.kappa, g.t, &mut walk_rng(walk_seed, q)).expect("validated");
                    let marks = sample_marks(setup.rho * g.gamma, g.t, &mut walk_rng(mark_seed, q)).expect("validated");
                    for &s in &marks.times {
                        seeds.push(WalkerSeed::new(path.position_at(s), s));
                    }
                }
                if seeds.len() < 2 {
                    return 0.0;
                }
                seeds.sort_by(|a, b| a.birth_time.total_cmp(&b.birth_time));
                let out = engine.run(&pstar, &setup.lattice, &seeds, &[], setup.warmup + g.t, false, rng);
                out.coalesced() as f64 * lnr
            })
            .collect()
    })
}

pub fn dual_moment_grid(setup: &DualSetup, grid: &[MomentParams], rep: &Replication) -> Result<Vec<MomentReport>> {
    let weights = dual_log_weights(setup, grid, rep)?;
    grid.iter()
        .enumerate()
        .map(|(i, g)| {
            let est = MomentEstimate::from_log_weights(&weights.iter().map(|r| r[i]).collect::<Vec<_>>())?;
            Ok(MomentReport::new(Estimator::Dual, *g, setup.rho, setup.warmup, est))
        })
        .collect()
}

pub fn dual_moment(params: MomentParams, setup: &DualSetup, rep: &Replication) -> Result<MomentReport> {
    Ok(dual_moment_grid(setup, &[params], rep)?.remove(0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PinnedReport {
    /// Estimate for every candidate end point.
    pub candidates: Vec<(Site, MomentEstimate)>,
    pub best_site: Site,
    pub best: MomentReport,
    /// Unpinned estimate from the same replicas.
    pub unpinned: MomentEstimate,
}

/// Origin and its nearest neighbours.
pub fn default_candidates(dim: usize) -> Vec<Site> {
    let mut c = vec![Site::ORIGIN];
    for a in 0..dim {
        c.push(Site::unit(a, 1));
        c.push(Site::unit(a, -1));
    }
    c
}

/// `max_x E[exp(γ Σ_q ∫ξ(X_q(s), t-s) ds) Π_q 1{X_q(t) = x}]` over the
/// candidate end points.
pub fn pinned_moment(params: MomentParams, cfg: &VoterConfig, candidates: &[Site], rep: &Replication) -> Result<PinnedReport> {
    cfg.validate()?;
    params.validate()?;
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidate end points".into()));
    }
    let dim = cfg.torus.dim();
    let half = (cfg.torus.side() / 2) as i32;
    let runs = rep.run(|_, rng| {
        let mut field = init_field(cfg, rng).expect("validated config");
        field.enable_log();
        field.evolve(params.t, rng);
        let log = field.log().expect("log enabled");
        let walk_seed: u64 = rng.random();
        let mut total = 0.0;
        let mut end = None;
        let mut common = true;
        for q in 0..params.p {
            let path = sample_walk(dim, params.kappa, params.t, &mut walk_rng(walk_seed, q)).expect("validated");
            if path.max_excursion() >= half {
                return None;
            }
            for (a, b, x) in path.segments() {
                total += log.integral(cfg.torus.index(x), params.t - b, params.t - a);
            }
            match end {
                None => end = Some(path.endpoint()),
                Some(e) if e != path.endpoint() => common = false,
                _ => {}
            }
        }
        Some((params.gamma * total, if common { end } else { None }))
    })?;
    let excluded = runs.iter().filter(|r| r.is_none()).count();
    let kept: Vec<(f64, Option<Site>)> = runs.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::InvalidParameter("every replica violated the torus window".into()));
    }
    let unpinned = MomentEstimate::from_log_weights(&kept.iter().map(|r| r.0).collect::<Vec<_>>())?.with_excluded(excluded);
    let mut out = Vec::with_capacity(candidates.len());
    for &x in candidates {
        let logs: Vec<f64> = kept.iter().map(|&(l, e)| if e == Some(x) { l } else { f64::NEG_INFINITY }).collect();
        out.push((x, MomentEstimate::from_log_weights(&logs)?.with_excluded(excluded)));
    }
    let (best_site, best_est) =
        out.iter().max_by(|a, b| a.1.mean.total_cmp(&b.1.mean)).map(|(s, e)| (*s, e.clone())).unwrap();
    let best = MomentReport::new(Estimator::Pinned, params, cfg.rho, cfg.warmup(), best_est);
    Ok(PinnedReport { candidates: out, best_site, best, unpinned })
}
