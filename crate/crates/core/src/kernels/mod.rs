//! Finite-support random-walk transition kernels `p(x, y) = p(0, y - x)`.
//!
//! A [`Kernel`] is validated on construction (normalisation, positivity,
//! irreducibility) and carries an alias table so that sampling an increment
//! costs O(1). The analytic side lives in [`fourier`] (return probabilities,
//! Green constants, lattice Green function) and [`spectral`] (principal
//! Dirichlet eigenvalue of `kappa * Laplacian` on a box).

pub mod fourier;
pub mod spectral;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Site, MAX_DIM};

pub use fourier::{green_constants, heat_kernel_diagonal, GreenConstants, QuadratureOptions};
pub use spectral::{dirichlet_eigenvalue, BoxRegion};

const NORMALIZATION_TOL: f64 = 1e-12;

/// Walker alias table over the kernel support.
#[derive(Clone, Debug)]
struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        AliasTable { prob, alias }
    }

    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.prob.len();
        let i = rng.random_range(0..n);
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

/// Serialized form: `{"d": .., "offsets": [[..], ..], "weights": [..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub d: usize,
    pub offsets: Vec<Vec<i32>>,
    pub weights: Vec<f64>,
}

/// Shift-invariant transition kernel with finite support.
#[derive(Clone, Debug)]
pub struct Kernel {
    dim: usize,
    offsets: Vec<Site>,
    weights: Vec<f64>,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    zero_mean: bool,
    alias: AliasTable,
}

impl PartialEq for Kernel {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.offsets == other.offsets && self.weights == other.weights
    }
}

impl Kernel {
    /// Builds a kernel, merging repeated offsets and dropping zero weights.
    pub fn new(dim: usize, offsets: Vec<Site>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidDimension(dim));
        }
        if offsets.len() != weights.len() {
            return Err(Error::InvalidKernel(format!(
                "{} offsets but {} weights",
                offsets.len(),
                weights.len()
            )));
        }
        let mut pairs: Vec<(Site, f64)> = Vec::with_capacity(offsets.len());
        for (z, w) in offsets.into_iter().zip(weights) {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidKernel(format!("weight {w} is not a probability")));
            }
            if z.support_dim() > dim {
                return Err(Error::InvalidKernel(format!("offset {z:?} exceeds dimension {dim}")));
            }
            if w > 0.0 {
                pairs.push((z, w));
            }
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(Site, f64)> = Vec::with_capacity(pairs.len());
        for (z, w) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == z => last.1 += w,
                _ => merged.push((z, w)),
            }
        }
        if merged.is_empty() {
            return Err(Error::InvalidKernel("empty support".into()));
        }
        let total: f64 = merged.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidKernel(format!("weights sum to {total}, not 1")));
        }
        let (offsets, weights): (Vec<Site>, Vec<f64>) = merged.into_iter().unzip();
        if !generates_lattice(dim, &offsets) {
            return Err(Error::InvalidKernel("support does not generate Z^d".into()));
        }

        let mut mean = vec![0.0; dim];
        for (z, w) in offsets.iter().zip(&weights) {
            for (a, m) in mean.iter_mut().enumerate() {
                *m += w * z.0[a] as f64;
            }
        }
        let mut covariance = vec![vec![0.0; dim]; dim];
        for (z, w) in offsets.iter().zip(&weights) {
            for a in 0..dim {
                for b in 0..dim {
                    covariance[a][b] += w * (z.0[a] as f64 - mean[a]) * (z.0[b] as f64 - mean[b]);
                }
            }
        }
        let zero_mean = mean.iter().all(|m| m.abs() < 1e-12);
        let alias = AliasTable::new(&weights);
        Ok(Kernel { dim, offsets, weights, mean, covariance, zero_mean, alias })
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        let offsets = spec
            .offsets
            .iter()
            .map(|o| {
                if o.len() != spec.d {
                    Err(Error::InvalidKernel(format!("offset {o:?} has wrong length for d={}", spec.d)))
                } else {
                    Site::from_slice(o)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Kernel::new(spec.d, offsets, spec.weights.clone())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: KernelSpec = serde_json::from_str(text)?;
        if spec.d == 0 || spec.d > MAX_DIM {
            return Err(Error::InvalidDimension(spec.d));
        }
        Kernel::from_spec(&spec)
    }

    pub fn to_spec(&self) -> KernelSpec {
        KernelSpec {
            d: self.dim,
            offsets: self.offsets.iter().map(|z| z.coords(self.dim).to_vec()).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_spec()).expect("kernel spec serializes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offsets(&self) -> &[Site] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[Vec<f64>] {
        &self.covariance
    }

    pub fn zero_mean(&self) -> bool {
        self.zero_mean
    }

    /// Finite support always has finite variance.
    pub fn finite_variance(&self) -> bool {
        true
    }

    /// Always true for a constructed kernel; construction fails otherwise.
    pub fn irreducible(&self) -> bool {
        true
    }

    /// `p(0, z)`.
    pub fn prob(&self, z: Site) -> f64 {
        match self.offsets.binary_search(&z) {
            Ok(i) => self.weights[i],
            Err(_) => 0.0,
        }
    }

    /// `p(x, y)`.
    pub fn transition(&self, x: Site, y: Site) -> f64 {
        self.prob(y - x)
    }

    pub fn is_symmetric(&self) -> bool {
        self.offsets
            .iter()
            .zip(&self.weights)
            .all(|(z, w)| (self.prob(-*z) - w).abs() <= 1e-15)
    }

    fn invariant_under(&self, f: &dyn Fn(Site) -> Site) -> bool {
        self.offsets
            .iter()
            .zip(&self.weights)
            .all(|(z, w)| (self.prob(f(*z)) - w).abs() <= 1e-15)
    }

    /// Invariance under each single-axis reflection.
    pub fn is_reflection_symmetric(&self) -> bool {
        (0..self.dim).all(|a| {
            self.invariant_under(&|mut z: Site| {
                z.0[a] = -z.0[a];
                z
            })
        })
    }

    /// Invariance under coordinate permutations and reflections.
    pub fn is_cubic_symmetric(&self) -> bool {
        let d = self.dim;
        let same = |f: &dyn Fn(Site) -> Site| self.invariant_under(f);
        if !self.is_reflection_symmetric() {
            return false;
        }
        for a in 0..d {
            if a + 1 < d
                && !same(&|mut z: Site| {
                    z.0.swap(a, a + 1);
                    z
                })
            {
                return false;
            }
        }
        true
    }

    /// Characteristic function `p̂(θ) = Σ_z p(0,z) e^{iθ·z}` as (re, im).
    pub fn characteristic(&self, theta: &[f64]) -> (f64, f64) {
        let mut re = 0.0;
        let mut im = 0.0;
        for (z, w) in self.offsets.iter().zip(&self.weights) {
            let phase: f64 = theta.iter().zip(z.0.iter()).map(|(t, &c)| t * c as f64).sum();
            re += w * phase.cos();
            im += w * phase.sin();
        }
        (re, im)
    }

    /// Draw an increment `Z ~ p(0, ·)`.
    #[inline]
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> Site {
        self.offsets[self.alias.sample(rng)]
    }

    /// Draw the support index of an increment.
    #[inline]
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.alias.sample(rng)
    }

    /// Largest absolute coordinate over the support.
    pub fn range(&self) -> i32 {
        self.offsets.iter().map(|z| z.norm_inf()).max().unwrap_or(0)
    }
}

/// Simple random walk: the `2d` nearest neighbours, each with weight `1/(2d)`.
pub fn make_simple_random_walk(dim: usize) -> Result<Kernel> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidDimension(dim));
    }
    let mut offsets = Vec::with_capacity(2 * dim);
    for axis in 0..dim {
        offsets.push(Site::unit(axis, 1));
        offsets.push(Site::unit(axis, -1));
    }
    let w = 1.0 / (2 * dim) as f64;
    Kernel::new(dim, offsets, vec![w; 2 * dim])
}

/// `p*(x, y) = p(y, x)`: every offset negated.
pub fn dual(k: &Kernel) -> Kernel {
    let offsets = k.offsets.iter().map(|z| -*z).collect();
    Kernel::new(k.dim, offsets, k.weights.clone()).expect("dual of a valid kernel is valid")
}

/// `p^(s) = (p + p*) / 2` on the merged support.
pub fn symmetrize(k: &Kernel) -> Kernel {
    let mut offsets = k.offsets.clone();
    let mut weights: Vec<f64> = k.weights.iter().map(|w| 0.5 * w).collect();
    offsets.extend(k.offsets.iter().map(|z| -*z));
    weights.extend(k.weights.iter().map(|w| 0.5 * w));
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Kernel::new(k.dim, offsets, weights).expect("symmetrization of a valid kernel is valid")
}

/// Whether the integer vectors generate `Z^d` as a group: integer row
/// reduction to echelon form, then every pivot must be a unit.
fn generates_lattice(dim: usize, vectors: &[Site]) -> bool {
    let mut rows: Vec<Vec<i64>> = vectors
        .iter()
        .map(|z| z.0[..dim].iter().map(|&c| c as i64).collect())
        .collect();
    let mut pivot_row = 0;
    for col in 0..dim {
        // Euclid on the column until a single non-zero entry remains below pivot_row.
        loop {
            let nonzero: Vec<usize> = (pivot_row..rows.len()).filter(|&r| rows[r][col] != 0).collect();
            if nonzero.len() <= 1 {
                if let Some(&r) = nonzero.first() {
                    rows.swap(pivot_row, r);
                }
                break;
            }
            let min_r = *nonzero.iter().min_by_key(|&&r| rows[r][col].abs()).unwrap();
            for &r in &nonzero {
                if r != min_r {
                    let q = rows[r][col] / rows[min_r][col];
                    for c in 0..dim {
                        rows[r][c] -= q * rows[min_r][c];
                    }
                }
            }
        }
        if pivot_row >= rows.len() || rows[pivot_row][col] == 0 {
            return false;
        }
        if rows[pivot_row][col].abs() != 1 {
            return false;
        }
        pivot_row += 1;
    }
    true
}
