//! The dual side of the voter model: coalescing random walks with kernel
//! `p*`, duality-based correlation estimators, the pair-correlation closed
//! form, and the block-decoupling machinery (`δ(K)`, K-good walkers,
//! meeting probabilities, the block inequality).

pub mod engine;

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

pub use engine::{Engine, Interval, RunOutcome, Source, SurvivorRule, WalkerSeed};

use crate::error::{Error, Result};
use crate::kernels::fourier::{lattice_green, QuadratureOptions};
use crate::kernels::{dual, symmetrize, Kernel};
use crate::lattice::{Lattice, Site};
use crate::rng::Replication;
use crate::stats::{linear_fit, MomentEstimate, Proportion};

/// Seeds plus horizon: one realisation of `ξ*_t{(x_1,s_1),…}`.
#[derive(Clone, Debug)]
pub struct CoalescingSystem {
    pub seeds: Vec<WalkerSeed>,
    pub horizon: f64,
    /// Kernel the walkers jump with (already the dual `p*`).
    pub kernel: Kernel,
    pub lattice: Lattice,
}

impl CoalescingSystem {
    pub fn new(seeds: Vec<WalkerSeed>, horizon: f64, kernel: Kernel, lattice: Lattice) -> Result<Self> {
        if seeds.windows(2).any(|w| w[0].birth_time > w[1].birth_time) {
            return Err(Error::InvalidParameter("seeds must be sorted by birth time".into()));
        }
        if seeds.iter().any(|s| !s.birth_time.is_finite()) {
            return Err(Error::InvalidParameter("birth times must be finite".into()));
        }
        if let Some(last) = seeds.last() {
            if horizon < last.birth_time {
                return Err(Error::InvalidParameter(format!(
                    "horizon {horizon} precedes the last birth at {}",
                    last.birth_time
                )));
            }
        }
        if kernel.dim() != lattice.dim() {
            return Err(Error::InvalidDimension(lattice.dim()));
        }
        Ok(CoalescingSystem { seeds, horizon, kernel, lattice })
    }

    /// Returns the step function `t ↦ N_t` and the final coalesced count.
    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<(f64, usize)>, usize) {
        let out = Engine::new().run(&self.kernel, &self.lattice, &self.seeds, &[], self.horizon, true, rng);
        let coalesced = out.coalesced();
        (out.trajectory, coalesced)
    }
}

/// Parses `"x1,x2@s;y1,y2@s'"` into walker seeds sorted by birth time.
pub fn parse_points(text: &str) -> Result<Vec<WalkerSeed>> {
    let mut seeds = Vec::new();
    let mut dim = None;
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (coords, time) = part
            .split_once('@')
            .ok_or_else(|| Error::Parse(format!("point `{part}` lacks `@time`")))?;
        let coords: Vec<i32> = coords
            .split(',')
            .map(|c| c.trim().parse::<i32>().map_err(|e| Error::Parse(format!("coordinate `{c}`: {e}"))))
            .collect::<Result<_>>()?;
        let time: f64 = time.trim().parse().map_err(|e| Error::Parse(format!("time `{time}`: {e}")))?;
        if !time.is_finite() {
            return Err(Error::Parse(format!("time `{time}` is not finite")));
        }
        match dim {
            None => dim = Some(coords.len()),
            Some(d) if d != coords.len() => {
                return Err(Error::Parse(format!("point `{part}` has {} coordinates, expected {d}", coords.len())))
            }
            _ => {}
        }
        seeds.push(WalkerSeed::new(Site::from_slice(&coords).map_err(|e| Error::Parse(e.to_string()))?, time));
    }
    if seeds.is_empty() {
        return Err(Error::Parse("no points given".into()));
    }
    seeds.sort_by(|a, b| a.birth_time.total_cmp(&b.birth_time));
    Ok(seeds)
}

/// Dimension of a parsed point list (the highest non-zero axis is not
/// enough, so it is passed alongside).
pub fn points_dimension(text: &str) -> Option<usize> {
    text.split(';').map(str::trim).find(|p| !p.is_empty()).and_then(|p| p.split_once('@')).map(|(c, _)| c.split(',').count())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualCorrelation {
    /// Estimate of `E*[ρ^{N_{T+t}}]`.
    pub estimate: MomentEstimate,
    /// Mean number of walkers alive at the horizon.
    pub mean_alive: f64,
    pub bracket_low: f64,
    pub bracket_high: f64,
}

/// `P_{ν_ρ S_T}(ξ(x_m, t - s_m) = 1 ∀m) = E*[ρ^{N_{T+t}}]`, estimated by
/// running the coalescing dual with kernel `p*` to dual time `T + t`.
///
/// `kernel` is the voter kernel `p`. Because `N` is non-increasing the
/// `T = ∞` value is bracketed by `[est, min(ρ, est · ρ^{-(N̄-1)})]`.
pub fn correlation_dual(
    points: &[WalkerSeed],
    rho: f64,
    warmup: f64,
    t: f64,
    kernel: &Kernel,
    lattice: &Lattice,
    rep: &Replication,
) -> Result<DualCorrelation> {
    check_density(rho)?;
    if points.is_empty() {
        return Err(Error::InvalidParameter("at least one point is required".into()));
    }
    let mut seeds = points.to_vec();
    seeds.sort_by(|a, b| a.birth_time.total_cmp(&b.birth_time));
    if seeds.last().unwrap().birth_time > t || !(warmup >= 0.0) {
        return Err(Error::InvalidParameter("need s_m <= t and T >= 0".into()));
    }
    if seeds.len() == 1 {
        let estimate = MomentEstimate::from_log_weights(&vec![rho.ln(); rep.replicas.max(1)])?;
        return Ok(DualCorrelation { estimate, mean_alive: 1.0, bracket_low: rho, bracket_high: rho });
    }
    let pstar = dual(kernel);
    let horizon = warmup + t;
    let alive = rep.run(|_, rng| {
        let mut e = Engine::new();
        e.run(&pstar, lattice, &seeds, &[], horizon, false, rng).alive
    })?;
    let logs: Vec<f64> = alive.iter().map(|&n| n as f64 * rho.ln()).collect();
    let estimate = MomentEstimate::from_log_weights(&logs)?;
    let mean_alive = alive.iter().sum::<usize>() as f64 / alive.len() as f64;
    let bracket_high = (estimate.mean * rho.powf(-(mean_alive - 1.0))).min(rho);
    Ok(DualCorrelation { bracket_low: estimate.mean, bracket_high, mean_alive, estimate })
}

fn check_density(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("density {rho} must lie in (0, 1)")));
    }
    Ok(())
}

/// Cache of `w(z) = G(z)/G(0)`, the probability that the difference walk
/// started at `z` ever hits the origin.
pub struct HittingProbabilities {
    kernel: Kernel,
    g0: f64,
    opts: QuadratureOptions,
    cubic: bool,
    cache: Mutex<HashMap<Site, f64>>,
}

impl HittingProbabilities {
    /// `kernel` is the voter kernel; the difference of two independent dual
    /// walkers moves with its symmetrization.
    pub fn new(kernel: &Kernel, opts: QuadratureOptions) -> Result<Self> {
        let sym = symmetrize(kernel);
        let g0 = lattice_green(&sym, Site::ORIGIN, 0.0, &opts)?.value;
        let cubic = sym.is_cubic_symmetric();
        Ok(HittingProbabilities { kernel: sym, g0, opts, cubic, cache: Mutex::new(HashMap::new()) })
    }

    pub fn green_at_origin(&self) -> f64 {
        self.g0
    }

    fn canonical(&self, z: Site) -> Site {
        if !self.cubic {
            return z;
        }
        let d = self.kernel.dim();
        let mut c = z;
        for v in c.0[..d].iter_mut() {
            *v = v.abs();
        }
        c.0[..d].sort_unstable();
        c
    }

    pub fn get(&self, z: Site) -> Result<f64> {
        if z == Site::ORIGIN {
            return Ok(1.0);
        }
        let key = self.canonical(z);
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let v = lattice_green(&self.kernel, key, 0.0, &self.opts)?.value / self.g0;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

/// `ρ(1-ρ)/G_d · ∫_0^∞ p_{s+u}(x1, x2) du`, the equilibrium covariance
/// `E_{μ_ρ}[(ξ(x1,s)-ρ)(ξ(x2,0)-ρ)]` for a symmetric transient kernel.
pub fn pair_correlation_closed_form(k: &Kernel, x1: Site, x2: Site, s: f64, rho: f64) -> Result<f64> {
    pair_correlation_closed_form_with(k, x1, x2, s, rho, &QuadratureOptions::default())
}

pub fn pair_correlation_closed_form_with(
    k: &Kernel,
    x1: Site,
    x2: Site,
    s: f64,
    rho: f64,
    opts: &QuadratureOptions,
) -> Result<f64> {
    check_density(rho)?;
    if k.dim() <= 2 {
        return Err(Error::RecurrentKernel(k.dim()));
    }
    if !k.is_symmetric() {
        return Err(Error::InvalidKernel("pair correlation closed form needs a symmetric kernel".into()));
    }
    let g0 = lattice_green(k, Site::ORIGIN, 0.0, opts)?.value;
    if x1 == x2 && s == 0.0 {
        return Ok(rho * (1.0 - rho));
    }
    let g = lattice_green(k, x2 - x1, s, opts)?.value;
    Ok(rho * (1.0 - rho) * g / g0)
}

/// `exp[-m(ln m - 1) - 1]` with `0 ln 0 = 0`.
fn delta_term_log(m: u64) -> f64 {
    if m == 0 {
        -1.0
    } else {
        let mf = m as f64;
        -mf * (mf.ln() - 1.0) - 1.0
    }
}

/// `⌊K ln j⌋`.
fn k_floor(k: f64, j: u64) -> u64 {
    (k * (j as f64).ln()).floor() as u64
}

/// Smallest `j >= 5` with `⌊K ln j⌋ >= m`, or `None` if it exceeds 2^52.
fn first_j(k: f64, m: u64) -> Option<u64> {
    let guess = (m as f64 / k).exp();
    if !(guess < 4.0e15) {
        return None;
    }
    let mut j = (guess.ceil() as u64).max(5).saturating_sub(2).max(5);
    while k_floor(k, j) < m {
        j += 1;
    }
    while j > 5 && k_floor(k, j - 1) >= m {
        j -= 1;
    }
    Some(j)
}

/// `δ(K) = Σ_{j≥5} exp[-⌊K ln j⌋ (ln⌊K ln j⌋ - 1) - 1]`.
///
/// Terms depend on `j` only through `m = ⌊K ln j⌋`, so the sum runs over
/// `m` with the number of `j` in each level set, in log space once the
/// counts become astronomically large.
pub fn delta_of_k(k: f64) -> Result<f64> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("K = {k} must be positive")));
    }
    let m0 = k_floor(k, 5);
    let mut total = 0.0f64;
    let mut m = m0;
    let cap = 10_000_000u64;
    while m < m0 + cap {
        let log_count = match (first_j(k, m), first_j(k, m + 1)) {
            (Some(a), Some(b)) => {
                if b <= a {
                    m += 1;
                    continue;
                }
                ((b - a) as f64).ln()
            }
            _ => {
                // count ≈ e^{(m+1)/K} - e^{m/K}
                (m + 1) as f64 / k + (-(-1.0 / k).exp_m1()).ln()
            }
        };
        let contrib = (log_count + delta_term_log(m)).exp();
        total += contrib;
        // beyond the peak of the level-set contributions the sum decays
        // super-geometrically
        let mf = m.max(1) as f64;
        let decreasing = mf.ln() > 1.0 / k + 0.5;
        if decreasing && contrib <= 1e-17 * total.max(f64::MIN_POSITIVE) {
            return Ok(total);
        }
        if !total.is_finite() {
            return Err(Error::NonConvergent);
        }
        m += 1;
    }
    Err(Error::NonConvergent)
}

/// Number of distinct sites in a short list.
fn distinct(sites: &mut Vec<Site>) -> usize {
    sites.sort_unstable();
    sites.dedup();
    sites.len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KGoodReport {
    pub k: f64,
    pub horizon: usize,
    /// `P(∃ j: |R_j| > K ln(j+5))`.
    pub deficiency: Proportion,
    pub delta: f64,
    /// Mean unit-interval range over all intervals and replicas.
    pub mean_range: f64,
    pub passes: bool,
}

/// Simulates one rate-1 walker with kernel `p*` over `horizon` unit
/// intervals and records the range of each.
fn unit_ranges<R: Rng + ?Sized>(pstar: &Kernel, start_offset: f64, horizon: usize, rng: &mut R, out: &mut Vec<usize>) {
    out.clear();
    let mut pos = Site::ORIGIN;
    let mut t = start_offset;
    let mut next = t + <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
    let mut visited = Vec::new();
    for j in 0..horizon {
        let end = (j + 1) as f64;
        visited.clear();
        visited.push(pos);
        while next <= end {
            pos = pos + pstar.sample_step(rng);
            visited.push(pos);
            t = next;
            next = t + <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
        }
        out.push(distinct(&mut visited));
    }
}

/// Estimates the probability that a dual walker fails to be K-good within
/// `horizon` unit intervals and compares it with `δ(K)`.
pub fn k_good_deficiency(kernel: &Kernel, k: f64, horizon: usize, rep: &Replication) -> Result<KGoodReport> {
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let delta = delta_of_k(k)?;
    let pstar = dual(kernel);
    let per = rep.run(|_, rng| {
        let mut ranges = Vec::with_capacity(horizon);
        unit_ranges(&pstar, 0.0, horizon, rng, &mut ranges);
        let bad = ranges.iter().enumerate().any(|(j, &r)| r as f64 > k * ((j + 5) as f64).ln());
        (bad, ranges.iter().sum::<usize>())
    })?;
    let hits = per.iter().filter(|p| p.0).count();
    let deficiency = Proportion::new(hits, per.len());
    let mean_range = per.iter().map(|p| p.1).sum::<usize>() as f64 / (per.len() * horizon) as f64;
    let passes = deficiency.p_hat <= delta + 3.0 * deficiency.std_error.max(0.0);
    Ok(KGoodReport { k, horizon, deficiency, delta, mean_range, passes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeetingReport {
    pub gaps: Vec<f64>,
    /// `P(M^{u,v} ∩ G_K^v)` per gap.
    pub estimates: Vec<Proportion>,
    /// `-slope` of `ln P` against `ln gap`.
    pub decay_exponent: f64,
    pub k: f64,
}

/// Two independent dual walkers from the same path point born `gap` apart:
/// did they meet after the second birth, with the later walker K-good?
fn meet_once<R: Rng + ?Sized>(pstar: &Kernel, gap: f64, k: f64, horizon: f64, rng: &mut R) -> bool {
    let mut first = Site::ORIGIN;
    let mut t = 0.0;
    loop {
        let dt = <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
        if t + dt > gap {
            break;
        }
        t += dt;
        first = first + pstar.sample_step(rng);
    }
    let mut second = Site::ORIGIN;
    let mut met = first == second;
    // later walker's unit-interval ranges, measured from its birth
    let mut t = gap;
    let mut block = 0usize;
    let mut visited = vec![second];
    let end = gap + horizon;
    loop {
        let dt = <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / 2.0;
        let tn = t + dt;
        while tn > gap + (block + 1) as f64 && gap + ((block + 1) as f64) <= end {
            if distinct(&mut visited) as f64 > k * ((block + 5) as f64).ln() {
                return false;
            }
            block += 1;
            visited.clear();
            visited.push(second);
        }
        if tn > end {
            break;
        }
        t = tn;
        if rng.random::<bool>() {
            first = first + pstar.sample_step(rng);
        } else {
            second = second + pstar.sample_step(rng);
            visited.push(second);
        }
        if first == second {
            met = true;
        }
    }
    met
}

/// Meeting probability of delayed walker pairs across a grid of gaps,
/// with common random numbers across gaps (same replica stream per gap).
pub fn meeting_probability(kernel: &Kernel, gaps: &[f64], k: f64, horizon: f64, rep: &Replication) -> Result<MeetingReport> {
    if kernel.dim() < 5 {
        return Err(Error::DimensionTooLow(kernel.dim()));
    }
    let pstar = dual(kernel);
    let mut estimates = Vec::with_capacity(gaps.len());
    for &gap in gaps {
        if !(gap >= 0.0) {
            return Err(Error::InvalidParameter(format!("gap {gap} must be non-negative")));
        }
        let hits = rep.run(|_, rng| meet_once(&pstar, gap, k, horizon, rng))?;
        estimates.push(Proportion::new(hits.iter().filter(|&&h| h).count(), hits.len()));
    }
    let usable: Vec<(f64, f64)> =
        gaps.iter().zip(&estimates).filter(|(g, e)| **g > 0.0 && e.hits > 0).map(|(g, e)| (g.ln(), e.p_hat.ln())).collect();
    let decay_exponent = if usable.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
        -linear_fit(&x, &y)?.1
    } else {
        f64::NAN
    };
    Ok(MeetingReport { gaps: gaps.to_vec(), estimates, decay_exponent, k })
}

/// Smallest `C_ε` with `P̂(gap) + 3σ <= C_ε K / gap^{1+ε}` on every gap.
pub fn calibrate_c_epsilon(report: &MeetingReport, epsilon: f64) -> f64 {
    report
        .gaps
        .iter()
        .zip(&report.estimates)
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, e)| (e.p_hat + 3.0 * e.std_error) * g.powf(1.0 + epsilon) / report.k)
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    /// Piecewise-constant path `ψ`: `(from_time, site)`, times increasing.
    pub path: Vec<(f64, Vec<i32>)>,
    /// Ordered, disjoint finite time sets.
    pub sets: Vec<Vec<f64>>,
    pub rho: f64,
    pub k: f64,
    pub r: f64,
    pub r_prime: f64,
    pub epsilon: f64,
    pub c_epsilon: f64,
}

impl BlockConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        check_density(self.rho)?;
        if dim < 5 {
            return Err(Error::DimensionTooLow(dim));
        }
        if !(self.r > 1.0 && self.r_prime > 1.0) || (1.0 / self.r + 1.0 / self.r_prime - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("r, r' must be a Hölder pair".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < (dim as f64 - 4.0) / 2.0) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0, {})", (dim as f64 - 4.0) / 2.0)));
        }
        if self.sets.is_empty() || self.sets.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidParameter("every block needs at least one time".into()));
        }
        for w in self.sets.windows(2) {
            let max_prev = w[0].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min_next = w[1].iter().cloned().fold(f64::INFINITY, f64::min);
            if !(max_prev < min_next) {
                return Err(Error::InvalidParameter("time sets must be ordered and disjoint".into()));
            }
        }
        if self.path.is_empty() || self.path.iter().any(|(_, s)| s.len() != dim) {
            return Err(Error::InvalidParameter("path must be non-empty with d coordinates".into()));
        }
        Ok(())
    }

    fn position(&self, t: f64) -> Site {
        let mut cur = &self.path[0].1;
        for (from, site) in &self.path {
            if *from <= t {
                cur = site;
            }
        }
        Site::from_slice(cur).expect("validated path")
    }

    fn seeds(&self, which: &[usize]) -> Vec<WalkerSeed> {
        let mut seeds: Vec<WalkerSeed> = which
            .iter()
            .flat_map(|&j| self.sets[j].iter().map(|&s| WalkerSeed::new(self.position(s), s)))
            .collect();
        seeds.sort_by(|a, b| a.birth_time.total_cmp(&b.birth_time));
        seeds
    }

    /// Blocks of `sizes[j]` times `spacing` apart, consecutive blocks `gap`
    /// apart, on a path that stays at the origin. The remaining fields take
    /// `ρ = 1/2`, `K = 4`, `r = r' = 2`, `ε = 1/4`, `C_ε = 1`.
    pub fn evenly_spaced(dim: usize, sizes: &[usize], spacing: f64, gap: f64) -> Self {
        let mut sets = Vec::with_capacity(sizes.len());
        let mut t = 0.0;
        for &n in sizes {
            let set: Vec<f64> = (0..n).map(|i| t + i as f64 * spacing).collect();
            t = set.last().copied().unwrap_or(t) + gap;
            sets.push(set);
        }
        BlockConfig {
            path: vec![(0.0, vec![0; dim])],
            sets,
            rho: 0.5,
            k: 4.0,
            r: 2.0,
            r_prime: 2.0,
            epsilon: 0.25,
            c_epsilon: 1.0,
        }
    }

    /// `min |s - s'|` over `s ∈ S_j`, `s' ∈ S_k`.
    pub fn separation(&self, j: usize, k: usize) -> f64 {
        let mut best = f64::INFINITY;
        for a in &self.sets[j] {
            for b in &self.sets[k] {
                best = best.min((a - b).abs());
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub lhs: MomentEstimate,
    pub rhs: f64,
    pub rhs_std_error: f64,
    /// `E*[ρ^{-r N^coal(S_j)}]` per block.
    pub block_moments: Vec<MomentEstimate>,
    /// Product of the per-block `E*[ρ^{-N^coal(S_j)}]`, for the
    /// independence check at large separation.
    pub product_of_blocks: f64,
    pub product_std_error: f64,
    pub passes: bool,
}

/// Monte Carlo check of the block decoupling inequality. The infinite-time
/// coalescence count is truncated at `horizon` past the last birth.
pub fn block_inequality_check(kernel: &Kernel, cfg: &BlockConfig, horizon: f64, rep: &Replication) -> Result<BlockReport> {
    cfg.validate(kernel.dim())?;
    let pstar = dual(kernel);
    let lattice = Lattice::Free(kernel.dim());
    let all: Vec<usize> = (0..cfg.sets.len()).collect();
    let full = cfg.seeds(&all);
    let per_block: Vec<Vec<WalkerSeed>> = (0..cfg.sets.len()).map(|j| cfg.seeds(&[j])).collect();
    let end = full.last().unwrap().birth_time + horizon;
    let single = cfg.sets.len() == 1;
    let lnr = -cfg.rho.ln();
    let runs = rep.run(|_, rng| {
        let mut e = Engine::new();
        let n_all = e.run(&pstar, &lattice, &full, &[], end, false, rng).coalesced();
        let blocks: Vec<usize> = if single {
            vec![n_all]
        } else {
            per_block.iter().map(|s| e.run(&pstar, &lattice, s, &[], end, false, rng).coalesced()).collect()
        };
        (n_all, blocks)
    })?;
    let lhs = MomentEstimate::from_log_weights(&runs.iter().map(|r| r.0 as f64 * lnr).collect::<Vec<_>>())?;
    let mut block_moments = Vec::new();
    let mut log_prod = 0.0;
    let mut rel_var = 0.0;
    let mut plain_log_prod = 0.0;
    let mut plain_rel_var = 0.0;
    for j in 0..cfg.sets.len() {
        let logs: Vec<f64> = runs.iter().map(|r| cfg.r * r.1[j] as f64 * lnr).collect();
        let m = MomentEstimate::from_log_weights(&logs)?;
        log_prod += m.log_mean / cfg.r;
        rel_var += (m.log_std_error() / cfg.r).powi(2);
        let plain = MomentEstimate::from_log_weights(&runs.iter().map(|r| r.1[j] as f64 * lnr).collect::<Vec<_>>())?;
        plain_log_prod += plain.log_mean;
        plain_rel_var += plain.log_std_error().powi(2);
        block_moments.push(m);
    }
    let delta = delta_of_k(cfg.k)?;
    let total: f64 = cfg.sets.iter().map(|s| s.len() as f64).sum();
    let mut cross = 0.0;
    for j in 0..cfg.sets.len() {
        for k in j + 1..cfg.sets.len() {
            cross += (cfg.sets[j].len() * cfg.sets[k].len()) as f64 / cfg.separation(j, k).powf(1.0 + cfg.epsilon);
        }
    }
    let exponent = delta / cfg.rho * total
        + cfg.c_epsilon * cfg.k * (cfg.rho.powf(-cfg.r_prime) - 1.0) / cfg.r_prime * cross;
    let rhs = (exponent + log_prod).exp();
    let rhs_std_error = rhs * rel_var.sqrt();
    let product_of_blocks = plain_log_prod.exp();
    let product_std_error = product_of_blocks * plain_rel_var.sqrt();
    let passes = lhs.mean - rhs <= 3.0 * (lhs.std_error.powi(2) + rhs_std_error.powi(2)).sqrt();
    Ok(BlockReport { lhs, rhs, rhs_std_error, block_moments, product_of_blocks, product_std_error, passes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::make_simple_random_walk;
    use crate::lattice::Torus;
    use crate::rng::replica_rng;

    fn brute_delta(k: f64, jmax: u64) -> f64 {
        (5..jmax).map(|j| delta_term_log(k_floor(k, j)).exp()).sum()
    }

    #[test]
    fn delta_matches_brute_force_summation() {
        for k in [4.0, 8.0, 16.0] {
            let fast = delta_of_k(k).unwrap();
            let slow = brute_delta(k, 200_000);
            assert!((fast - slow).abs() <= 1e-12 * slow.max(1e-300) + 1e-300, "K={k}: {fast} vs {slow}");
        }
    }

    #[test]
    fn delta_is_decreasing_and_vanishes() {
        let grid = [2.0, 4.0, 8.0, 16.0];
        let vals: Vec<f64> = grid.iter().map(|&k| delta_of_k(k).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[1] <= w[0], "{vals:?}");
        }
        assert!(vals[3] < 1e-3 * vals[0], "{vals:?}");
        for &k in &[8.0, 16.0] {
            let first = delta_term_log(k_floor(k, 5)).exp();
            assert!(delta_of_k(k).unwrap() / first < 1.5);
        }
        assert!(delta_of_k(0.0).is_err());
    }

    #[test]
    fn parse_points_examples() {
        let p = parse_points("0,0@0;1,0@0.5").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].site, Site::unit(0, 1));
        assert_eq!(p[1].birth_time, 0.5);
        assert!(parse_points("0,0@0;1@0.5").is_err());
        assert!(parse_points("0,0").is_err());
        assert!(parse_points("").is_err());
        assert!(parse_points("a,0@1").is_err());
        assert!(parse_points("0@inf").is_err());
        let q = parse_points("3@2; 1@1").unwrap();
        assert_eq!(q[0].birth_time, 1.0);
    }

    #[test]
    fn single_point_correlation_is_rho() {
        let k = make_simple_random_walk(2).unwrap();
        let lat = Lattice::Torus(Torus::new(16, 2).unwrap());
        let c = correlation_dual(&[WalkerSeed::new(Site::ORIGIN, 0.0)], 0.3, 8.0, 1.0, &k, &lat, &Replication::new(1, 10)).unwrap();
        assert!((c.estimate.mean - 0.3).abs() < 1e-15);
        let same = [WalkerSeed::new(Site::ORIGIN, 0.5), WalkerSeed::new(Site::ORIGIN, 0.5)];
        let c2 = correlation_dual(&same, 0.3, 8.0, 1.0, &k, &lat, &Replication::new(1, 100)).unwrap();
        assert!((c2.estimate.mean - 0.3).abs() < 1e-12);
    }

    #[test]
    fn far_apart_points_are_independent() {
        let k = make_simple_random_walk(2).unwrap();
        let lat = Lattice::Torus(Torus::new(64, 2).unwrap());
        let pts = [WalkerSeed::new(Site::ORIGIN, 0.0), WalkerSeed::new(Site::from_slice(&[32, 32]).unwrap(), 0.0)];
        let c = correlation_dual(&pts, 0.4, 0.5, 0.5, &k, &lat, &Replication::new(3, 2000)).unwrap();
        assert!((c.estimate.mean - 0.16).abs() < 1e-12);
    }

    #[test]
    fn correlation_non_increasing_in_warmup() {
        let k = make_simple_random_walk(1).unwrap();
        let lat = Lattice::Free(1);
        let pts = [WalkerSeed::new(Site::ORIGIN, 0.0), WalkerSeed::new(Site::unit(0, 2), 0.0)];
        let rep = Replication::new(5, 4000);
        let a = correlation_dual(&pts, 0.5, 1.0, 0.5, &k, &lat, &rep).unwrap().estimate.mean;
        let b = correlation_dual(&pts, 0.5, 8.0, 0.5, &k, &lat, &rep).unwrap().estimate.mean;
        // common random numbers: each replica's N can only drop with more time
        assert!(b >= a);
    }

    #[test]
    fn births_minus_alive_identity() {
        let k = make_simple_random_walk(2).unwrap();
        let seeds: Vec<WalkerSeed> = (0..5).map(|i| WalkerSeed::new(Site::unit(i % 2, 1), 0.2 * i as f64)).collect();
        let sys = CoalescingSystem::new(seeds.clone(), 5.0, dual(&k), Lattice::Free(2)).unwrap();
        for r in 0..100 {
            let (traj, coal) = sys.run(&mut replica_rng(9, r));
            let last = traj.last().unwrap().1;
            assert_eq!(last + coal, seeds.len());
            // N jumps up by exactly one at a birth and down by one at a merge
            for w in traj.windows(2) {
                assert!((w[1].1 as i64 - w[0].1 as i64).abs() == 1);
            }
        }
        assert!(CoalescingSystem::new(vec![WalkerSeed::new(Site::ORIGIN, 2.0)], 1.0, k.clone(), Lattice::Free(2)).is_err());
    }

    #[test]
    fn closed_form_normalisation() {
        let k = make_simple_random_walk(3).unwrap();
        let v = pair_correlation_closed_form(&k, Site::ORIGIN, Site::ORIGIN, 0.0, 0.3).unwrap();
        assert_eq!(v, 0.3 * 0.7);
        let h = HittingProbabilities::new(&k, QuadratureOptions::default()).unwrap();
        assert_eq!(h.get(Site::ORIGIN).unwrap(), 1.0);
        let w1 = h.get(Site::unit(0, 1)).unwrap();
        let near = pair_correlation_closed_form(&k, Site::ORIGIN, Site::unit(2, -1), 0.0, 0.3).unwrap();
        assert!((near - 0.21 * w1).abs() < 1e-12);
        assert!(matches!(
            pair_correlation_closed_form(&make_simple_random_walk(2).unwrap(), Site::ORIGIN, Site::ORIGIN, 0.0, 0.3),
            Err(Error::RecurrentKernel(2))
        ));
    }

    #[test]
    fn closed_form_stable_under_node_doubling() {
        let k = make_simple_random_walk(3).unwrap();
        let x2 = Site::unit(0, 1);
        let a = pair_correlation_closed_form_with(&k, Site::ORIGIN, x2, 0.0, 0.5, &QuadratureOptions::fast()).unwrap();
        let b = pair_correlation_closed_form_with(&k, Site::ORIGIN, x2, 0.0, 0.5, &QuadratureOptions::fast().with_nodes(12))
            .unwrap();
        assert!((a - b).abs() < 1e-8);
        // G(e1)/G(0) = 1 - 1/G(0) for a rate-1 walk
        let g0 = lattice_green(&k, Site::ORIGIN, 0.0, &QuadratureOptions::default()).unwrap().value;
        assert!((b - 0.25 * (1.0 - 1.0 / g0)).abs() < 1e-7);
    }

    #[test]
    fn k_good_large_k_is_never_bad() {
        let k = make_simple_random_walk(5).unwrap();
        let r = k_good_deficiency(&k, 50.0, 16, &Replication::new(2, 2000)).unwrap();
        assert_eq!(r.deficiency.hits, 0);
        assert!(r.mean_range <= 2.0 + 0.05);
        assert!(r.passes);
    }

    #[test]
    fn same_birth_means_meeting() {
        let k = make_simple_random_walk(5).unwrap();
        let r = meeting_probability(&k, &[0.0], 100.0, 10.0, &Replication::new(1, 50)).unwrap();
        assert_eq!(r.estimates[0].hits, 50);
        assert!(matches!(
            meeting_probability(&make_simple_random_walk(3).unwrap(), &[1.0], 3.0, 10.0, &Replication::new(1, 5)),
            Err(Error::DimensionTooLow(3))
        ));
    }

    fn small_block(sets: Vec<Vec<f64>>, rho: f64) -> BlockConfig {
        BlockConfig { sets, rho, ..BlockConfig::evenly_spaced(5, &[], 0.0, 0.0) }
    }

    #[test]
    fn evenly_spaced_blocks() {
        let c = BlockConfig::evenly_spaced(5, &[2, 1, 3], 0.5, 4.0);
        assert_eq!(c.sets, vec![vec![0.0, 0.5], vec![4.5], vec![8.5, 9.0, 9.5]]);
        assert_eq!(c.separation(0, 1), 4.0);
        assert!(c.validate(5).is_ok());
    }

    #[test]
    fn single_block_passes_by_jensen() {
        let k = make_simple_random_walk(5).unwrap();
        let cfg = small_block(vec![vec![0.0, 0.5, 1.0]], 0.3);
        let r = block_inequality_check(&k, &cfg, 32.0, &Replication::new(4, 3000)).unwrap();
        assert!(r.passes);
        assert!(r.rhs >= r.lhs.mean);
    }

    #[test]
    fn density_near_one_leaves_only_the_delta_term() {
        let k = make_simple_random_walk(5).unwrap();
        let cfg = small_block(vec![vec![0.0, 0.5], vec![3.0, 3.5]], 1.0 - 1e-9);
        let r = block_inequality_check(&k, &cfg, 16.0, &Replication::new(4, 500)).unwrap();
        assert!((r.lhs.mean - 1.0).abs() < 1e-6);
        let floor = (4.0 * delta_of_k(cfg.k).unwrap()).exp();
        assert!((r.rhs / floor - 1.0).abs() < 1e-6);
        assert!(r.passes);
    }

    #[test]
    fn block_config_validation() {
        let mut cfg = small_block(vec![vec![1.0], vec![0.5]], 0.3);
        assert!(cfg.validate(5).is_err());
        cfg.sets = vec![vec![0.0], vec![1.0]];
        assert!(cfg.validate(5).is_ok());
        assert!(matches!(cfg.validate(4), Err(Error::DimensionTooLow(4))));
        cfg.r_prime = 3.0;
        assert!(cfg.validate(5).is_err());
    }
}
