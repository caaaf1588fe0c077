//! Event-driven coalescing random walks with births, plus "sources".
//!
//! A source is a space-time curve `s ↦ X(s)` whose points are to be traced
//! back through the graphical representation. While a source is active, the
//! walker sitting at `X(s)` represents it; whenever that walker jumps away,
//! or `X` itself moves, a fresh walker is born at the source position. Each
//! stretch of dual time owned by one walker is recorded as an
//! [`Interval`]; at the end every interval is mapped to its surviving root.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::kernels::Kernel;
use crate::lattice::{Lattice, Site};

/// Birth of a dual walker at `site` at dual time `birth_time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkerSeed {
    pub site: Site,
    pub birth_time: f64,
}

impl WalkerSeed {
    pub fn new(site: Site, birth_time: f64) -> Self {
        WalkerSeed { site, birth_time }
    }
}

/// Piecewise-constant curve in dual time, active on `[0, until)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Source {
    /// `(from_time, position)`, times increasing, the first one 0.
    pub path: Vec<(f64, Site)>,
    pub until: f64,
}

impl Source {
    pub fn fixed(site: Site, until: f64) -> Self {
        Source { path: vec![(0.0, site)], until }
    }
}

/// Dual time `[start, end)` of source `source` owned by walker `walker`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub source: usize,
    pub start: f64,
    pub end: f64,
    pub walker: usize,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    /// `(time, N_t)` after every change of the alive count.
    pub trajectory: Vec<(f64, usize)>,
    pub births: usize,
    pub alive: usize,
    /// Intervals with `walker` replaced by the root (an alive walker id).
    pub intervals: Vec<Interval>,
    /// Ids of the walkers alive at the horizon.
    pub roots: Vec<usize>,
}

impl RunOutcome {
    /// `births - alive`.
    pub fn coalesced(&self) -> usize {
        self.births - self.alive
    }
}

#[derive(Clone, Copy, Debug)]
struct Walker {
    pos: Site,
    id: usize,
}

/// Which walker keeps its identity when two walkers meet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SurvivorRule {
    #[default]
    LaterBorn,
    EarlierBorn,
}

/// Reusable simulation state; buffers are kept between runs.
#[derive(Default)]
pub struct Engine {
    pub survivor: SurvivorRule,
    alive: Vec<Walker>,
    parent: Vec<usize>,
    open: Vec<Option<(f64, usize)>>,
    cursor: Vec<usize>,
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn new_id(&mut self) -> usize {
        let id = self.parent.len();
        self.parent.push(id);
        id
    }

    fn occupant(&self, pos: Site) -> Option<usize> {
        self.alive.iter().position(|w| w.pos == pos)
    }

    /// Places a newborn walker; returns the id owning the site afterwards.
    /// A birth on an occupied site merges at once into the newborn.
    fn birth(&mut self, pos: Site, time: f64, out: &mut RunOutcome, record: bool) -> usize {
        let id = self.new_id();
        out.births += 1;
        match self.occupant(pos) {
            Some(i) => {
                let old = self.alive[i].id;
                self.parent[old] = id;
                self.alive[i].id = id;
            }
            None => {
                self.alive.push(Walker { pos, id });
                if record {
                    out.trajectory.push((time, self.alive.len()));
                }
            }
        }
        id
    }

    fn close(&mut self, source: usize, time: f64, out: &mut RunOutcome) {
        if let Some((start, walker)) = self.open[source].take() {
            if time > start {
                out.intervals.push(Interval { source, start, end: time, walker });
            }
        }
    }

    /// Runs the system up to `horizon`. Walkers jump at rate 1 with
    /// increments drawn from `kernel` (pass the dual kernel `p*`). Seeds must
    /// be sorted by birth time. The survivor of a collision is the
    /// later-born walker.
    pub fn run<R: Rng + ?Sized>(
        &mut self,
        kernel: &Kernel,
        lattice: &Lattice,
        seeds: &[WalkerSeed],
        sources: &[Source],
        horizon: f64,
        record: bool,
        rng: &mut R,
    ) -> RunOutcome {
        self.alive.clear();
        self.parent.clear();
        self.open.clear();
        self.open.resize(sources.len(), None);
        self.cursor.clear();
        self.cursor.resize(sources.len(), 0);
        let mut out = RunOutcome::default();
        if record {
            out.trajectory.push((0.0, 0));
        }
        let mut next_seed = 0;
        let mut now = 0.0;
        let mut touched: Vec<usize> = Vec::new();

        loop {
            // next scheduled event: a seed birth or a source move/activation
            let mut sched = f64::INFINITY;
            if next_seed < seeds.len() {
                sched = seeds[next_seed].birth_time.max(now);
            }
            for (q, src) in sources.iter().enumerate() {
                let c = self.cursor[q];
                if c < src.path.len() && src.path[c].0 < src.until {
                    sched = sched.min(src.path[c].0.max(now));
                } else if self.open[q].is_some() {
                    sched = sched.min(src.until.max(now));
                }
            }
            let rate = self.alive.len() as f64;
            let jump_at = if rate > 0.0 {
                now + <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate
            } else {
                f64::INFINITY
            };
            if sched <= jump_at && sched <= horizon {
                now = sched;
                while next_seed < seeds.len() && seeds[next_seed].birth_time <= now {
                    let pos = lattice.normalize(seeds[next_seed].site);
                    self.birth(pos, now, &mut out, record);
                    next_seed += 1;
                }
                for (q, src) in sources.iter().enumerate() {
                    let c = self.cursor[q];
                    if c < src.path.len() && src.path[c].0 <= now && src.path[c].0 < src.until {
                        self.cursor[q] = c + 1;
                        self.close(q, now, &mut out);
                        let pos = lattice.normalize(src.path[c].1);
                        let owner = match self.occupant(pos) {
                            Some(i) => self.alive[i].id,
                            None => self.birth(pos, now, &mut out, record),
                        };
                        self.open[q] = Some((now, owner));
                    } else if (c >= src.path.len() || src.path[c].0 >= src.until) && src.until <= now {
                        self.close(q, src.until, &mut out);
                    }
                }
                continue;
            }
            if jump_at > horizon {
                break;
            }
            now = jump_at;
            let i = rng.random_range(0..self.alive.len());
            let from = self.alive[i].pos;
            let to = lattice.step(from, kernel.sample_step(rng));
            if to == from {
                continue;
            }
            let mover = self.alive[i].id;

            // sources currently sitting at `from` lose their owner
            touched.clear();
            for (q, src) in sources.iter().enumerate() {
                if now < src.until && self.open[q].is_some() {
                    let c = self.cursor[q];
                    if lattice.normalize(src.path[c - 1].1) == from {
                        touched.push(q);
                    }
                }
            }

            match self.occupant(to) {
                Some(j) => {
                    let other = self.alive[j].id;
                    let (survivor, loser) = match self.survivor {
                        SurvivorRule::LaterBorn => (mover.max(other), mover.min(other)),
                        SurvivorRule::EarlierBorn => (mover.min(other), mover.max(other)),
                    };
                    self.parent[loser] = survivor;
                    self.alive[j].id = survivor;
                    self.alive.swap_remove(i);
                    if record {
                        out.trajectory.push((now, self.alive.len()));
                    }
                }
                None => self.alive[i].pos = to,
            }

            if !touched.is_empty() {
                let id = self.birth(from, now, &mut out, record);
                for &q in &touched {
                    self.close(q, now, &mut out);
                    self.open[q] = Some((now, id));
                }
            }
        }
        for q in 0..sources.len() {
            let end = sources[q].until.min(horizon);
            self.close(q, end, &mut out);
        }
        out.alive = self.alive.len();
        out.roots = self.alive.iter().map(|w| w.id).collect();
        let mut intervals = std::mem::take(&mut out.intervals);
        for iv in intervals.iter_mut() {
            iv.walker = self.find(iv.walker);
        }
        out.intervals = intervals;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::make_simple_random_walk;
    use crate::lattice::Torus;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_seed_never_coalesces() {
        let k = make_simple_random_walk(2).unwrap();
        let mut e = Engine::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = e.run(&k, &Lattice::Free(2), &[WalkerSeed::new(Site::ORIGIN, 0.0)], &[], 50.0, true, &mut rng);
        assert_eq!(out.alive, 1);
        assert_eq!(out.coalesced(), 0);
        assert!(out.trajectory.iter().skip(1).all(|&(_, n)| n == 1));
    }

    #[test]
    fn same_site_same_time_merges_immediately() {
        let k = make_simple_random_walk(3).unwrap();
        let mut e = Engine::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = WalkerSeed::new(Site::ORIGIN, 0.5);
        let out = e.run(&k, &Lattice::Free(3), &[s, s], &[], 0.5, true, &mut rng);
        assert_eq!(out.births, 2);
        assert_eq!(out.alive, 1);
    }

    #[test]
    fn fixed_source_intervals_tile_the_window() {
        let k = make_simple_random_walk(3).unwrap();
        let mut e = Engine::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let out = e.run(&k, &Lattice::Free(3), &[], &[Source::fixed(Site::ORIGIN, 4.0)], 10.0, false, &mut rng);
            let mut t = 0.0;
            for iv in &out.intervals {
                assert!((iv.start - t).abs() < 1e-15);
                assert!(out.roots.contains(&iv.walker));
                t = iv.end;
            }
            assert!((t - 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn survivor_rule_does_not_change_counts() {
        let k = make_simple_random_walk(1).unwrap();
        let seeds: Vec<WalkerSeed> =
            (0..6).map(|i| WalkerSeed::new(Site::unit(0, 2 * i - 5), 0.3 * i as f64)).collect();
        let mut later = Engine::new();
        let mut earlier = Engine { survivor: SurvivorRule::EarlierBorn, ..Engine::new() };
        for seed in 0..50 {
            let a = later.run(&k, &Lattice::Free(1), &seeds, &[], 20.0, true, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = earlier.run(&k, &Lattice::Free(1), &seeds, &[], 20.0, true, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(a.trajectory, b.trajectory);
            assert_eq!(a.coalesced(), b.coalesced());
        }
    }

    #[test]
    fn two_walkers_on_small_torus_always_merge() {
        let k = make_simple_random_walk(1).unwrap();
        let lat = Lattice::Torus(Torus::new(4, 1).unwrap());
        let mut e = Engine::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let seeds = [WalkerSeed::new(Site::ORIGIN, 0.0), WalkerSeed::new(Site::unit(0, 2), 0.0)];
        for _ in 0..200 {
            let out = e.run(&k, &lat, &seeds, &[], 500.0, false, &mut rng);
            assert_eq!(out.alive, 1);
        }
    }
}
