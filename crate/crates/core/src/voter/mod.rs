//! Forward simulation of the voter model on a torus.
//!
//! Every site rings at rate 1; at a ring of `y` an increment `Z ~ p(0,·)` is
//! drawn and `y` copies the opinion of `y - Z`. The whole torus is driven by
//! one exponential clock of rate `L^d` with a uniform site choice.

pub mod lineage;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

pub use lineage::{
    occupation_samples, occupation_tail, pair_correlation_empirical, pair_correlation_with, persistence_probability,
    OccupationTail, PairCorrelation, Persistence,
};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::lattice::{Site, Torus};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    /// Product Bernoulli(ρ).
    Bernoulli,
    /// Bernoulli(ρ) evolved for the given time before the clock is reset.
    Warmed(f64),
}

#[derive(Clone, Debug)]
pub struct VoterConfig {
    pub torus: Torus,
    pub kernel: Kernel,
    pub rho: f64,
    pub init: InitialLaw,
}

impl VoterConfig {
    pub fn new(torus: Torus, kernel: Kernel, rho: f64, init: InitialLaw) -> Result<Self> {
        let cfg = VoterConfig { torus, kernel, rho, init };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("density {} must lie in (0, 1)", self.rho)));
        }
        if let InitialLaw::Warmed(t) = self.init {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::InvalidParameter(format!("warm-up time {t} must be finite and >= 0")));
            }
        }
        if self.kernel.dim() != self.torus.dim() {
            return Err(Error::InvalidDimension(self.kernel.dim()));
        }
        Ok(())
    }

    /// `4 L^2 / (2d)`, a few diffusive relaxation times of the torus.
    pub fn default_warmup(torus: &Torus) -> f64 {
        4.0 * (torus.side() * torus.side()) as f64 / (2.0 * torus.dim() as f64)
    }

    pub fn warmup(&self) -> f64 {
        match self.init {
            InitialLaw::Bernoulli => 0.0,
            InitialLaw::Warmed(t) => t,
        }
    }
}

/// Initial state plus the flip times of every site, so that `ξ(x, s)` and
/// its time integrals can be read off for any `s` in the logged window.
#[derive(Clone, Debug)]
pub struct FlipLog {
    start: f64,
    initial: Vec<u8>,
    flips: Vec<Vec<f64>>,
}

impl FlipLog {
    fn new(state: &[u8], start: f64) -> Self {
        FlipLog { start, initial: state.to_vec(), flips: vec![Vec::new(); state.len()] }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn flip_times(&self, idx: usize) -> &[f64] {
        &self.flips[idx]
    }

    /// `ξ(idx, s)`; flips take effect at their own time.
    pub fn value(&self, idx: usize, s: f64) -> u8 {
        let n = self.flips[idx].partition_point(|&f| f <= s);
        self.initial[idx] ^ (n as u8 & 1)
    }

    /// `∫_a^b ξ(idx, s) ds` for `start <= a <= b`.
    pub fn integral(&self, idx: usize, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let flips = &self.flips[idx];
        let first = flips.partition_point(|&f| f <= a);
        let mut bit = self.initial[idx] ^ (first as u8 & 1);
        let mut last = a;
        let mut acc = 0.0;
        for &f in &flips[first..] {
            if f >= b {
                break;
            }
            if bit == 1 {
                acc += f - last;
            }
            bit ^= 1;
            last = f;
        }
        if bit == 1 {
            acc += b - last;
        }
        acc
    }
}

#[derive(Clone, Copy, Debug)]
struct Tracker {
    integral: f64,
    last: f64,
}

/// Record of `T_t = ∫_0^t ξ(site, s) ds`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OccupationRecord {
    pub site: Site,
    pub horizon: f64,
    pub value: f64,
}

const TABLE_LIMIT: usize = 1 << 22;

#[derive(Clone, Debug)]
pub struct VoterField {
    torus: Torus,
    kernel: Kernel,
    state: Vec<u8>,
    ones: usize,
    time: f64,
    event_count: u64,
    /// `neighbours[y * |S| + k]` is the index of `y - offset_k`.
    neighbours: Option<Vec<u32>>,
    snapshot_every: Option<f64>,
    next_snapshot: f64,
    snapshots: Vec<(f64, Vec<u8>)>,
    log: Option<FlipLog>,
    trackers: Vec<Tracker>,
    tracker_slot: Vec<u32>,
}

impl VoterField {
    pub fn from_state(torus: Torus, kernel: Kernel, state: Vec<u8>) -> Result<Self> {
        if state.len() != torus.site_count() {
            return Err(Error::InvalidParameter(format!(
                "state has {} sites, torus has {}",
                state.len(),
                torus.site_count()
            )));
        }
        if state.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParameter("states must be 0 or 1".into()));
        }
        if kernel.dim() != torus.dim() {
            return Err(Error::InvalidDimension(kernel.dim()));
        }
        let n = state.len();
        let k = kernel.offsets().len();
        let neighbours = (n * k <= TABLE_LIMIT).then(|| {
            let mut t = Vec::with_capacity(n * k);
            for y in 0..n {
                let s = torus.site(y);
                for off in kernel.offsets() {
                    t.push(torus.index(s - *off) as u32);
                }
            }
            t
        });
        let ones = state.iter().filter(|&&b| b == 1).count();
        Ok(VoterField {
            torus,
            kernel,
            state,
            ones,
            time: 0.0,
            event_count: 0,
            neighbours,
            snapshot_every: None,
            next_snapshot: f64::INFINITY,
            snapshots: Vec::new(),
            log: None,
            trackers: Vec::new(),
            tracker_slot: Vec::new(),
        })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn state(&self) -> &[u8] {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    pub fn ones(&self) -> usize {
        self.ones
    }

    pub fn density(&self) -> f64 {
        self.ones as f64 / self.state.len() as f64
    }

    pub fn is_consensus(&self) -> bool {
        self.ones == 0 || self.ones == self.state.len()
    }

    pub fn get(&self, site: Site) -> u8 {
        self.state[self.torus.index(site)]
    }

    /// Starts recording snapshots every `every` time units from now.
    pub fn set_snapshot_cadence(&mut self, every: f64) {
        assert!(every > 0.0);
        self.snapshot_every = Some(every);
        self.snapshots.push((self.time, self.state.clone()));
        self.next_snapshot = self.time + every;
    }

    pub fn snapshots(&self) -> &[(f64, Vec<u8>)] {
        &self.snapshots
    }

    /// Starts logging flips from the current time.
    pub fn enable_log(&mut self) {
        self.log = Some(FlipLog::new(&self.state, self.time));
    }

    pub fn log(&self) -> Option<&FlipLog> {
        self.log.as_ref()
    }

    /// `ξ(site, s)` for any `s` in the logged window, or at a snapshot time,
    /// or now.
    pub fn value_at(&self, site: Site, s: f64) -> Option<u8> {
        let idx = self.torus.index(site);
        if s == self.time {
            return Some(self.state[idx]);
        }
        if s > self.time {
            return None;
        }
        if let Some(log) = &self.log {
            if s >= log.start {
                return Some(log.value(idx, s));
            }
        }
        self.snapshots.iter().find(|(t, _)| *t == s).map(|(_, st)| st[idx])
    }

    /// Accumulates `∫ ξ(site, s) ds` from now on.
    pub fn track(&mut self, site: Site) {
        let idx = self.torus.index(site);
        if self.tracker_slot.is_empty() {
            self.tracker_slot = vec![u32::MAX; self.state.len()];
        }
        if self.tracker_slot[idx] == u32::MAX {
            self.tracker_slot[idx] = self.trackers.len() as u32;
            self.trackers.push(Tracker { integral: 0.0, last: self.time });
        }
    }

    /// Accumulated occupation of a tracked site up to the current time.
    pub fn occupation(&self, site: Site) -> Option<f64> {
        let idx = self.torus.index(site);
        let slot = *self.tracker_slot.get(idx)?;
        let tr = self.trackers.get(slot as usize)?;
        Some(tr.integral + self.state[idx] as f64 * (self.time - tr.last))
    }

    #[inline]
    fn source_of<R: Rng + ?Sized>(&self, y: usize, rng: &mut R) -> usize {
        let k = self.kernel.sample_index(rng);
        match &self.neighbours {
            Some(t) => t[y * self.kernel.offsets().len() + k] as usize,
            None => self.torus.index(self.torus.site(y) - self.kernel.offsets()[k]),
        }
    }

    fn snapshot_until(&mut self, t: f64) {
        if let Some(every) = self.snapshot_every {
            while self.next_snapshot < t {
                self.snapshots.push((self.next_snapshot, self.state.clone()));
                self.next_snapshot += every;
            }
        }
    }

    /// Sets `ξ(y) ← v` at time `now`.
    #[inline]
    fn write(&mut self, y: usize, v: u8, now: f64) {
        let old = self.state[y];
        if old == v {
            return;
        }
        self.state[y] = v;
        if v == 1 {
            self.ones += 1;
        } else {
            self.ones -= 1;
        }
        if let Some(log) = &mut self.log {
            log.flips[y].push(now);
        }
        if !self.tracker_slot.is_empty() {
            let slot = self.tracker_slot[y];
            if slot != u32::MAX {
                let tr = &mut self.trackers[slot as usize];
                tr.integral += old as f64 * (now - tr.last);
                tr.last = now;
            }
        }
    }

    /// Runs the dynamics for `dt` time units.
    pub fn evolve<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) {
        assert!(dt >= 0.0, "negative time step");
        let end = self.time + dt;
        let rate = self.state.len() as f64;
        while !self.is_consensus() {
            let next = self.time + <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate;
            if next > end {
                break;
            }
            self.snapshot_until(next);
            self.time = next;
            self.event_count += 1;
            let y = rng.random_range(0..self.state.len());
            let x = self.source_of(y, rng);
            let v = self.state[x];
            self.write(y, v, next);
        }
        self.snapshot_until(end);
        if self.snapshot_every.is_some() && self.next_snapshot == end {
            self.snapshots.push((end, self.state.clone()));
            self.next_snapshot += self.snapshot_every.unwrap();
        }
        self.time = end;
    }
}

/// Draws the initial field of `cfg` and resets the clock to 0.
pub fn init_field<R: Rng + ?Sized>(cfg: &VoterConfig, rng: &mut R) -> Result<VoterField> {
    cfg.validate()?;
    let n = cfg.torus.site_count();
    let state: Vec<u8> = (0..n).map(|_| rng.random_bool(cfg.rho) as u8).collect();
    let mut field = VoterField::from_state(cfg.torus, cfg.kernel.clone(), state)?;
    if let InitialLaw::Warmed(t) = cfg.init {
        field.evolve(t, rng);
        field.time = 0.0;
        field.event_count = 0;
    }
    Ok(field)
}

/// Evolves two fields on the same torus with identical ring times, sites
/// and increments.
pub fn evolve_coupled<R: Rng + ?Sized>(a: &mut VoterField, b: &mut VoterField, dt: f64, rng: &mut R) -> Result<()> {
    if a.torus != b.torus || a.kernel != b.kernel {
        return Err(Error::InvalidParameter("coupled fields must share torus and kernel".into()));
    }
    if a.time != b.time {
        return Err(Error::InvalidParameter("coupled fields must share the current time".into()));
    }
    let end = a.time + dt;
    let rate = a.state.len() as f64;
    while !(a.is_consensus() && b.is_consensus()) {
        let next = a.time + <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate;
        if next > end {
            break;
        }
        a.time = next;
        b.time = next;
        a.event_count += 1;
        b.event_count += 1;
        let y = rng.random_range(0..a.state.len());
        let x = a.source_of(y, rng);
        let (va, vb) = (a.state[x], b.state[x]);
        a.write(y, va, next);
        b.write(y, vb, next);
    }
    a.time = end;
    b.time = end;
    Ok(())
}

/// Evolves `field` for `t` while integrating `ξ(site, ·)` exactly over the
/// holding intervals.
pub fn occupation_time<R: Rng + ?Sized>(field: &mut VoterField, site: Site, t: f64, rng: &mut R) -> Result<OccupationRecord> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {t} must be positive")));
    }
    let before = match field.occupation(site) {
        Some(v) => v,
        None => {
            field.track(site);
            0.0
        }
    };
    field.evolve(t, rng);
    let value = field.occupation(site).unwrap() - before;
    Ok(OccupationRecord { site, horizon: t, value: value.clamp(0.0, t) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::make_simple_random_walk;
    use crate::rng::{replica_rng, Replication};
    use crate::stats::MeanEstimate;
    use proptest::prelude::*;

    fn cfg(side: usize, dim: usize, rho: f64, init: InitialLaw) -> VoterConfig {
        VoterConfig::new(Torus::new(side, dim).unwrap(), make_simple_random_walk(dim).unwrap(), rho, init).unwrap()
    }

    #[test]
    fn config_validation() {
        let t = Torus::new(8, 2).unwrap();
        let k = make_simple_random_walk(2).unwrap();
        assert!(VoterConfig::new(t, k.clone(), 0.0, InitialLaw::Bernoulli).is_err());
        assert!(VoterConfig::new(t, k.clone(), 1.0, InitialLaw::Bernoulli).is_err());
        assert!(VoterConfig::new(t, k.clone(), 0.5, InitialLaw::Warmed(-1.0)).is_err());
        assert!(VoterConfig::new(t, make_simple_random_walk(3).unwrap(), 0.5, InitialLaw::Bernoulli).is_err());
        assert_eq!(VoterConfig::default_warmup(&Torus::new(16, 2).unwrap()), 256.0);
    }

    #[test]
    fn bernoulli_site_mean() {
        let c = cfg(16, 2, 0.5, InitialLaw::Bernoulli);
        let vals = Replication::new(11, 4000).run(|_, rng| init_field(&c, rng).unwrap().get(Site::ORIGIN) as f64).unwrap();
        let m = MeanEstimate::from_values(&vals);
        assert!(m.agrees_with(0.5, 0.0, 4.0), "{m:?}");
    }

    #[test]
    fn warmed_zero_is_bernoulli() {
        let a = init_field(&cfg(8, 2, 0.3, InitialLaw::Bernoulli), &mut replica_rng(1, 2)).unwrap();
        let b = init_field(&cfg(8, 2, 0.3, InitialLaw::Warmed(0.0)), &mut replica_rng(1, 2)).unwrap();
        assert_eq!(a.state(), b.state());
        assert_eq!(b.time(), 0.0);
    }

    #[test]
    fn density_is_a_martingale() {
        let c = cfg(8, 2, 0.3, InitialLaw::Warmed(5.0));
        let vals = Replication::new(12, 3000)
            .run(|_, rng| {
                let mut f = init_field(&c, rng).unwrap();
                let d0 = f.density();
                f.evolve(3.0, rng);
                (d0, f.density(), f.get(Site::ORIGIN) as f64)
            })
            .unwrap();
        for pick in [0usize, 1, 2] {
            let xs: Vec<f64> = vals.iter().map(|v| [v.0, v.1, v.2][pick]).collect();
            let m = MeanEstimate::from_values(&xs);
            assert!(m.agrees_with(0.3, 0.0, 4.0), "{pick}: {m:?}");
        }
    }

    #[test]
    fn consensus_is_absorbing() {
        let t = Torus::new(6, 2).unwrap();
        let k = make_simple_random_walk(2).unwrap();
        for bit in [0u8, 1] {
            let mut f = VoterField::from_state(t, k.clone(), vec![bit; 36]).unwrap();
            f.track(Site::ORIGIN);
            f.evolve(50.0, &mut replica_rng(3, bit as u64));
            assert!(f.state().iter().all(|&b| b == bit));
            assert_eq!(f.time(), 50.0);
            assert_eq!(f.occupation(Site::ORIGIN).unwrap(), 50.0 * bit as f64);
        }
        let mut f = VoterField::from_state(t, k, vec![1; 36]).unwrap();
        let r = occupation_time(&mut f, Site::ORIGIN, 7.5, &mut replica_rng(3, 9)).unwrap();
        assert_eq!(r.value, 7.5);
    }

    #[test]
    fn small_torus_reaches_consensus() {
        let c = cfg(4, 1, 0.5, InitialLaw::Bernoulli);
        let mut f = init_field(&c, &mut replica_rng(4, 0)).unwrap();
        f.evolve(1e4, &mut replica_rng(4, 1));
        assert!(f.is_consensus());
    }

    #[test]
    fn log_replay_matches_accumulators() {
        let c = cfg(8, 2, 0.5, InitialLaw::Bernoulli);
        let mut rng = replica_rng(5, 0);
        let mut f = init_field(&c, &mut rng).unwrap();
        f.enable_log();
        let sites = [Site::ORIGIN, Site::unit(0, 3), Site::from_slice(&[5, 7]).unwrap()];
        for s in sites {
            f.track(s);
        }
        f.evolve(20.0, &mut rng);
        let log = f.log().unwrap();
        for s in sites {
            let idx = f.torus().index(s);
            let a = log.integral(idx, 0.0, 20.0);
            let b = f.occupation(s).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            assert_eq!(log.value(idx, 20.0), f.get(s));
            let split = log.integral(idx, 0.0, 7.3) + log.integral(idx, 7.3, 20.0);
            assert!((split - a).abs() < 1e-12);
        }
    }

    #[test]
    fn snapshots_agree_with_log() {
        let c = cfg(8, 2, 0.5, InitialLaw::Bernoulli);
        let mut rng = replica_rng(6, 0);
        let mut f = init_field(&c, &mut rng).unwrap();
        f.enable_log();
        f.set_snapshot_cadence(0.5);
        f.evolve(3.0, &mut rng);
        let snaps = f.snapshots();
        assert_eq!(snaps.len(), 7);
        for w in snaps.windows(2) {
            assert!(w[1].0 > w[0].0);
        }
        let log = f.log().unwrap();
        for (t, st) in snaps {
            for (i, &b) in st.iter().enumerate() {
                assert_eq!(log.value(i, *t), b);
            }
        }
    }

    #[test]
    fn occupation_mean_is_rho_under_warm_start() {
        let c = cfg(8, 2, 0.3, InitialLaw::Warmed(10.0));
        let vals = Replication::new(7, 2000)
            .run(|_, rng| {
                let mut f = init_field(&c, rng).unwrap();
                occupation_time(&mut f, Site::ORIGIN, 4.0, rng).unwrap().value / 4.0
            })
            .unwrap();
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(MeanEstimate::from_values(&vals).agrees_with(0.3, 0.0, 4.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn coupling_preserves_order(seed in 0u64..1000, rho in 0.1f64..0.9) {
            let c = cfg(6, 2, rho, InitialLaw::Bernoulli);
            let mut rng = replica_rng(seed, 0);
            let mut lo = init_field(&c, &mut rng).unwrap();
            let hi_state: Vec<u8> = lo.state().iter().map(|&b| b | rand::Rng::random_bool(&mut rng, 0.3) as u8).collect();
            let mut hi = VoterField::from_state(*lo.torus(), c.kernel.clone(), hi_state).unwrap();
            for _ in 0..10 {
                evolve_coupled(&mut lo, &mut hi, 0.5, &mut rng).unwrap();
                prop_assert!(lo.state().iter().zip(hi.state()).all(|(a, b)| a <= b));
            }
        }

        #[test]
        fn flips_only_at_logged_times(seed in 0u64..1000) {
            let c = cfg(4, 2, 0.5, InitialLaw::Bernoulli);
            let mut rng = replica_rng(seed, 1);
            let mut f = init_field(&c, &mut rng).unwrap();
            f.enable_log();
            f.evolve(5.0, &mut rng);
            let log = f.log().unwrap();
            for i in 0..16 {
                let times = log.flip_times(i);
                prop_assert!(times.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(times.iter().all(|&t| t > 0.0 && t <= 5.0));
            }
        }
    }
}
