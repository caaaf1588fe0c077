//! Voter-model statistics read off the dual lineages instead of a full
//! forward field: occupation times, persistence and equilibrium pair
//! correlations.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::VoterConfig;
use crate::coalescing::{Engine, HittingProbabilities, RunOutcome, Source};
use crate::error::{Error, Result};
use crate::kernels::fourier::QuadratureOptions;
use crate::kernels::{dual, BoxRegion};
use crate::lattice::{Lattice, Site};
use crate::rng::Replication;
use crate::stats::{MeanEstimate, Proportion};

/// Draws one Bernoulli(ρ) bit per root and returns `bit(root)` for each
/// interval of the run.
fn root_bits<R: Rng + ?Sized>(out: &RunOutcome, rho: f64, rng: &mut R) -> Vec<u8> {
    let bits: Vec<(usize, u8)> = out.roots.iter().map(|&r| (r, rng.random_bool(rho) as u8)).collect();
    out.intervals
        .iter()
        .map(|iv| bits.iter().find(|(r, _)| *r == iv.walker).map(|b| b.1).expect("interval root is alive"))
        .collect()
}

fn lineage_run<R: Rng + ?Sized>(cfg: &VoterConfig, sites: &[Site], t: f64, rng: &mut R) -> RunOutcome {
    let pstar = dual(&cfg.kernel);
    let sources: Vec<Source> = sites.iter().map(|&s| Source::fixed(s, t)).collect();
    Engine::new().run(&pstar, &Lattice::Torus(cfg.torus), &[], &sources, t + cfg.warmup(), false, rng)
}

/// One draw of `T_t = ∫_0^t ξ(site, s) ds` per replica, from the dual
/// lineages of `{site} × [0, t]` on the configured torus.
pub fn occupation_samples(cfg: &VoterConfig, site: Site, t: f64, rep: &Replication) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {t} must be positive")));
    }
    rep.run(|_, rng| {
        let out = lineage_run(cfg, &[site], t, rng);
        let bits = root_bits(&out, cfg.rho, rng);
        out.intervals.iter().zip(bits).map(|(iv, b)| b as f64 * (iv.end - iv.start)).sum::<f64>().min(t)
    })
}

/// Speed of the large deviations of `T_t / t`; none in `d = 1`.
pub fn occupation_speed(dim: usize, t: f64) -> Option<f64> {
    match dim {
        1 => None,
        2 => Some(t.ln()),
        3 => Some(t.sqrt()),
        4 => Some(t / t.ln()),
        _ => Some(t),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationTail {
    pub alpha: f64,
    pub t: f64,
    /// Hits of `T_t / t >= α`.
    pub estimate: Proportion,
    pub speed: Option<f64>,
    /// `-ln P̂ / b_t`.
    pub decay: Option<f64>,
}

pub fn occupation_tail(cfg: &VoterConfig, alpha: f64, t: f64, rep: &Replication) -> Result<OccupationTail> {
    if !(alpha > cfg.rho && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} must lie in (rho, 1)")));
    }
    let samples = occupation_samples(cfg, Site::ORIGIN, t, rep)?;
    OccupationTail::from_samples(&samples, alpha, t, cfg.torus.dim())
}

impl OccupationTail {
    /// Tail estimate from occupation times `T_t` already sampled.
    pub fn from_samples(samples: &[f64], alpha: f64, t: f64, dim: usize) -> Result<Self> {
        let hits = samples.iter().filter(|&&v| v / t >= alpha).count();
        let estimate = Proportion::new(hits, samples.len()).require_hits()?;
        let speed = occupation_speed(dim, t);
        let decay = speed.filter(|b| *b > 0.0).map(|b| -estimate.p_hat.ln() / b);
        Ok(OccupationTail { alpha, t, estimate, speed, decay })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persistence {
    pub t: f64,
    pub estimate: Proportion,
    /// `-(1/t) ln P̂`.
    pub rate: f64,
    /// Mean of `ρ^{#roots}`, the same probability with the root bits
    /// integrated out.
    pub conditional: MeanEstimate,
}

/// `P(ξ ≡ 1 on Q × [0, t])` with `Q` a box anchored at the origin.
pub fn persistence_probability(cfg: &VoterConfig, q: &BoxRegion, t: f64, rep: &Replication) -> Result<Persistence> {
    cfg.validate()?;
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {t} must be positive")));
    }
    if q.site_count() == 0 {
        return Err(Error::EmptyBox);
    }
    if q.dim() != cfg.torus.dim() || q.sides.iter().any(|&s| s > cfg.torus.side()) {
        return Err(Error::InvalidParameter("box must fit inside the torus".into()));
    }
    let sites: Vec<Site> = (0..q.site_count())
        .map(|mut i| {
            let mut c = vec![0i32; q.dim()];
            for (a, side) in q.sides.iter().enumerate() {
                c[a] = (i % side) as i32;
                i /= side;
            }
            Site::from_slice(&c).expect("box dimension")
        })
        .collect();
    let runs = rep.run(|_, rng| {
        let out = lineage_run(cfg, &sites, t, rng);
        let mut roots: Vec<usize> = out.intervals.iter().map(|iv| iv.walker).collect();
        roots.sort_unstable();
        roots.dedup();
        let all_one = roots.iter().all(|_| rng.random_bool(cfg.rho));
        (all_one, cfg.rho.powi(roots.len() as i32))
    })?;
    let hits = runs.iter().filter(|r| r.0).count();
    let estimate = Proportion::new(hits, runs.len()).require_hits()?;
    let conditional = MeanEstimate::from_values(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(Persistence { t, rate: -estimate.p_hat.ln() / t, estimate, conditional })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    /// Covariance `E[(ξ(x1,s)-ρ)(ξ(x2,0)-ρ)]` under the equilibrium.
    pub estimate: MeanEstimate,
    pub warmup: f64,
    /// Covariance under the warmed product law after `T` and `2T`.
    pub warmed: MeanEstimate,
    pub warmed_double: MeanEstimate,
    /// Whether the warmed values at `T` and `2T` agree within 3σ.
    pub stabilized: bool,
}

/// Equilibrium pair correlation from the two dual lineages of `(x1, s)`
/// and `(x2, 0)` on `Z^d`.
///
/// The lineages run until they meet, until their difference leaves a box
/// of radius `box_radius`, or until dual time `s + 2T`. A pair that has not
/// met is completed with the exact probability that the difference walk
/// ever hits the origin from where it stands.
pub fn pair_correlation_empirical(
    cfg: &VoterConfig,
    x1: Site,
    x2: Site,
    s: f64,
    rep: &Replication,
) -> Result<PairCorrelation> {
    let hits = HittingProbabilities::new(&cfg.kernel, QuadratureOptions::default())?;
    pair_correlation_with(cfg, x1, x2, s, 8, &hits, rep)
}

pub fn pair_correlation_with(
    cfg: &VoterConfig,
    x1: Site,
    x2: Site,
    s: f64,
    box_radius: i32,
    hits: &HittingProbabilities,
    rep: &Replication,
) -> Result<PairCorrelation> {
    cfg.validate()?;
    let d = cfg.torus.dim();
    if d < 3 {
        return Err(Error::RecurrentKernel(d));
    }
    if !cfg.kernel.is_symmetric() {
        return Err(Error::InvalidKernel("pair correlation needs a symmetric kernel".into()));
    }
    let warm = match cfg.init {
        super::InitialLaw::Warmed(t) => t,
        super::InitialLaw::Bernoulli => {
            return Err(Error::InvalidParameter("pair correlation needs a warmed initial law".into()))
        }
    };
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!("lag {s} must be non-negative")));
    }
    let pstar = dual(&cfg.kernel);
    let runs = rep.run(|_, rng| {
        // lineage of (x1, s) alone on [0, s]
        let mut a = x1;
        let mut clock = <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
        while clock <= s {
            a = a + pstar.sample_step(rng);
            clock += <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
        }
        let mut diff = a - x2;
        let mut met_at = if diff == Site::ORIGIN { Some(s) } else { None };
        let mut exit: Option<Site> = None;
        let mut now = s;
        let end = s + 2.0 * warm;
        while met_at.is_none() {
            if exit.is_none() && diff.norm_inf() > box_radius {
                exit = Some(diff);
            }
            now += <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / 2.0;
            if now > end {
                break;
            }
            let step = pstar.sample_step(rng);
            diff = if rng.random::<bool>() { diff + step } else { diff - step };
            if diff == Site::ORIGIN {
                met_at = Some(now);
            }
        }
        let warmed = met_at.is_some_and(|m| m <= s + warm);
        let warmed_double = met_at.is_some();
        let completion = match (met_at, exit) {
            (Some(_), None) => Ok(1.0),
            (_, Some(z)) => hits.get(z),
            (None, None) => hits.get(diff),
        };
        completion.map(|c| (c, warmed as u8 as f64, warmed_double as u8 as f64))
    })?;
    let scale = cfg.rho * (1.0 - cfg.rho);
    let mut comp = Vec::with_capacity(runs.len());
    let mut w1 = Vec::with_capacity(runs.len());
    let mut w2 = Vec::with_capacity(runs.len());
    for r in runs {
        let (c, a, b) = r?;
        comp.push(scale * c);
        w1.push(scale * a);
        w2.push(scale * b);
    }
    let estimate = MeanEstimate::from_values(&comp);
    let warmed = MeanEstimate::from_values(&w1);
    let warmed_double = MeanEstimate::from_values(&w2);
    let diff: Vec<f64> = w2.iter().zip(&w1).map(|(b, a)| b - a).collect();
    let gap = MeanEstimate::from_values(&diff);
    let stabilized = gap.mean.abs() <= 3.0 * gap.std_error.max(f64::MIN_POSITIVE);
    Ok(PairCorrelation { estimate, warmup: warm, warmed, warmed_double, stabilized })
}

#[cfg(test)]
mod tests {
    use super::super::InitialLaw;
    use super::*;
    use crate::coalescing::pair_correlation_closed_form;
    use crate::kernels::make_simple_random_walk;
    use crate::lattice::Torus;

    fn cfg(side: usize, dim: usize, rho: f64, init: InitialLaw) -> VoterConfig {
        VoterConfig::new(Torus::new(side, dim).unwrap(), make_simple_random_walk(dim).unwrap(), rho, init).unwrap()
    }

    #[test]
    fn occupation_is_within_range_and_has_mean_rho() {
        let c = cfg(8, 2, 0.3, InitialLaw::Bernoulli);
        let v = occupation_samples(&c, Site::ORIGIN, 5.0, &Replication::new(1, 4000)).unwrap();
        assert!(v.iter().all(|x| (0.0..=5.0).contains(x)));
        let m = MeanEstimate::from_values(&v.iter().map(|x| x / 5.0).collect::<Vec<_>>());
        assert!(m.agrees_with(0.3, 0.0, 4.0), "{m:?}");
    }

    #[test]
    fn dual_occupation_matches_forward_field() {
        let c = cfg(6, 1, 0.4, InitialLaw::Warmed(2.0));
        let rep = Replication::new(2, 6000);
        let dual_sq = occupation_samples(&c, Site::ORIGIN, 3.0, &rep).unwrap();
        let fwd = rep
            .run(|_, rng| {
                let mut f = super::super::init_field(&c, rng).unwrap();
                super::super::occupation_time(&mut f, Site::ORIGIN, 3.0, rng).unwrap().value
            })
            .unwrap();
        let sq = |v: &[f64]| MeanEstimate::from_values(&v.iter().map(|x| x * x).collect::<Vec<_>>());
        let (a, b) = (sq(&dual_sq), sq(&fwd));
        assert!(a.agrees_with(b.mean, b.std_error, 4.0), "{a:?} vs {b:?}");
    }

    #[test]
    fn tail_requires_level_above_density() {
        let c = cfg(8, 2, 0.3, InitialLaw::Bernoulli);
        assert!(occupation_tail(&c, 0.2, 4.0, &Replication::new(1, 10)).is_err());
        let r = occupation_tail(&c, 0.35, 1.0, &Replication::new(1, 4000)).unwrap();
        assert!(r.estimate.p_hat > 0.05 && r.estimate.p_hat < 0.6);
        assert!(r.estimate.ci_low <= r.estimate.p_hat && r.estimate.p_hat <= r.estimate.ci_high);
        assert!(matches!(
            occupation_tail(&cfg(8, 2, 0.01, InitialLaw::Bernoulli), 0.99, 50.0, &Replication::new(1, 50)),
            Err(Error::ZeroHits { .. })
        ));
    }

    #[test]
    fn persistence_small_time_is_rho() {
        let c = cfg(8, 2, 0.4, InitialLaw::Bernoulli);
        let r = persistence_probability(&c, &BoxRegion::singleton(2), 1e-9, &Replication::new(3, 5000)).unwrap();
        assert!((r.conditional.mean - 0.4).abs() < 1e-6);
        assert!(r.estimate.ci_low <= 0.4 && 0.4 <= r.estimate.ci_high);
        let near_one = cfg(8, 2, 0.999, InitialLaw::Bernoulli);
        let r = persistence_probability(&near_one, &BoxRegion::cube(2, 2), 0.5, &Replication::new(3, 2000)).unwrap();
        assert!(r.estimate.p_hat > 0.98);
    }

    #[test]
    fn persistence_decays_with_time() {
        let c = cfg(16, 2, 0.5, InitialLaw::Bernoulli);
        let rep = Replication::new(4, 4000);
        let p1 = persistence_probability(&c, &BoxRegion::singleton(2), 1.0, &rep).unwrap();
        let p4 = persistence_probability(&c, &BoxRegion::singleton(2), 4.0, &rep).unwrap();
        assert!(p4.conditional.mean < p1.conditional.mean);
        assert!(p4.rate < p1.rate);
    }

    #[test]
    fn pair_correlation_on_diagonal_and_vs_closed_form() {
        let c = cfg(8, 3, 0.3, InitialLaw::Warmed(8.0));
        let hits = HittingProbabilities::new(&c.kernel, QuadratureOptions::fast()).unwrap();
        let rep = Replication::new(5, 20_000);
        let same = pair_correlation_with(&c, Site::ORIGIN, Site::ORIGIN, 0.0, 6, &hits, &rep).unwrap();
        assert!((same.estimate.mean - 0.21).abs() < 1e-15);
        let x2 = Site::unit(0, 1);
        let r = pair_correlation_with(&c, Site::ORIGIN, x2, 0.5, 6, &hits, &rep).unwrap();
        let exact = pair_correlation_closed_form(&c.kernel, Site::ORIGIN, x2, 0.5, 0.3).unwrap();
        assert!(r.estimate.agrees_with(exact, 0.0, 4.0), "{r:?} vs {exact}");
        assert!(r.warmed.mean <= r.warmed_double.mean);
        assert!(r.warmed_double.mean <= r.estimate.mean + 4.0 * r.estimate.std_error);
    }

    #[test]
    fn pair_correlation_preconditions() {
        let hits = HittingProbabilities::new(&make_simple_random_walk(3).unwrap(), QuadratureOptions::fast()).unwrap();
        let rep = Replication::new(1, 10);
        let b = cfg(8, 3, 0.3, InitialLaw::Bernoulli);
        assert!(pair_correlation_with(&b, Site::ORIGIN, Site::ORIGIN, 0.0, 4, &hits, &rep).is_err());
        let two = cfg(8, 2, 0.3, InitialLaw::Warmed(1.0));
        assert!(matches!(
            pair_correlation_with(&two, Site::ORIGIN, Site::ORIGIN, 0.0, 4, &hits, &rep),
            Err(Error::RecurrentKernel(2))
        ));
    }
}
