//! Lattice points, the periodic torus proxy and the geometry switch used by
//! every simulation engine.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 8;

/// A point of `Z^d`, zero padded beyond the active dimension.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Site(pub [i32; MAX_DIM]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIM]);

    pub fn from_slice(coords: &[i32]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::InvalidDimension(coords.len()));
        }
        let mut s = [0; MAX_DIM];
        s[..coords.len()].copy_from_slice(coords);
        Ok(Site(s))
    }

    /// Unit vector along `axis` with the given sign.
    pub fn unit(axis: usize, sign: i32) -> Self {
        let mut s = [0; MAX_DIM];
        s[axis] = sign;
        Site(s)
    }

    pub fn coords(&self, d: usize) -> &[i32] {
        &self.0[..d]
    }

    pub fn norm2(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    pub fn norm_inf(&self) -> i32 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    /// Highest non-zero coordinate index plus one (0 for the origin).
    pub fn support_dim(&self) -> usize {
        self.0.iter().rposition(|&c| c != 0).map_or(0, |i| i + 1)
    }
}

impl Add for Site {
    type Output = Site;
    #[inline]
    fn add(self, o: Site) -> Site {
        let mut s = self.0;
        for (a, b) in s.iter_mut().zip(o.0.iter()) {
            *a += *b;
        }
        Site(s)
    }
}

impl Sub for Site {
    type Output = Site;
    #[inline]
    fn sub(self, o: Site) -> Site {
        let mut s = self.0;
        for (a, b) in s.iter_mut().zip(o.0.iter()) {
            *a -= *b;
        }
        Site(s)
    }
}

impl Neg for Site {
    type Output = Site;
    #[inline]
    fn neg(self) -> Site {
        let mut s = self.0;
        for a in s.iter_mut() {
            *a = -*a;
        }
        Site(s)
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.support_dim().max(1);
        write!(f, "{:?}", &self.0[..d])
    }
}

/// Periodic box `(Z / L Z)^d`, the finite stand-in for `Z^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Torus {
    side: usize,
    dim: usize,
}

impl Torus {
    pub fn new(side: usize, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidDimension(dim));
        }
        if side < 4 || side % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "torus side must be even and at least 4, got {side}"
            )));
        }
        let sites = (side as u128).checked_pow(dim as u32);
        match sites {
            Some(n) if n <= (u32::MAX as u128) => {}
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "torus {side}^{dim} is too large to address"
                )))
            }
        }
        Ok(Torus { side, dim })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn site_count(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    /// Reduce every coordinate into `[0, L)`.
    #[inline]
    pub fn wrap(&self, s: Site) -> Site {
        let l = self.side as i32;
        let mut out = s.0;
        for c in out.iter_mut().take(self.dim) {
            *c = c.rem_euclid(l);
        }
        Site(out)
    }

    #[inline]
    pub fn index(&self, s: Site) -> usize {
        let w = self.wrap(s);
        let mut idx = 0usize;
        for axis in (0..self.dim).rev() {
            idx = idx * self.side + w.0[axis] as usize;
        }
        idx
    }

    #[inline]
    pub fn site(&self, mut index: usize) -> Site {
        let mut s = [0; MAX_DIM];
        for c in s.iter_mut().take(self.dim) {
            *c = (index % self.side) as i32;
            index /= self.side;
        }
        Site(s)
    }

    /// Minimum-image displacement, each coordinate in `(-L/2, L/2]`.
    pub fn min_image(&self, s: Site) -> Site {
        let l = self.side as i32;
        let w = self.wrap(s);
        let mut out = w.0;
        for c in out.iter_mut().take(self.dim) {
            if *c > l / 2 {
                *c -= l;
            }
        }
        Site(out)
    }

    /// Smallest even side with `side >= c * sqrt(rate * t * d) + safety`,
    /// the diffusive sizing rule for a walker that must not wrap.
    pub fn diffusive_side(rate: f64, horizon: f64, dim: usize, c: f64, safety: usize) -> usize {
        let raw = c * (rate * horizon * dim as f64).max(0.0).sqrt() + safety as f64;
        let mut side = raw.ceil().max(4.0) as usize;
        if side % 2 == 1 {
            side += 1;
        }
        side
    }
}

/// Where walkers and fields live: the infinite lattice or a torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lattice {
    Free(usize),
    Torus(Torus),
}

impl Lattice {
    pub fn dim(&self) -> usize {
        match self {
            Lattice::Free(d) => *d,
            Lattice::Torus(t) => t.dim(),
        }
    }

    #[inline]
    pub fn normalize(&self, s: Site) -> Site {
        match self {
            Lattice::Free(_) => s,
            Lattice::Torus(t) => t.wrap(s),
        }
    }

    #[inline]
    pub fn step(&self, s: Site, z: Site) -> Site {
        self.normalize(s + z)
    }
}
