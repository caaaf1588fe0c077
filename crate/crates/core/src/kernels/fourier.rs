//! Fourier-side quantities of a kernel: `p_t(0, z)`, the Green constants
//! `G = ∫ p_t(0,0) dt`, `G* = ∫ t p_t(0,0) dt` and the lattice Green function.
//!
//! All of them are integrals over the Brillouin zone of a function of the
//! characteristic function `p̂`. The zone is cut into nested dyadic shells
//! around `θ = 0`; each shell is a union of boxes integrated with tensor
//! Gauss–Legendre rules, and the innermost core is added as a geometric tail
//! `S_K r / (1 - r)` using the known power-law scaling of the integrand near
//! the origin. Running the whole scheme at `n` and `2n` nodes per axis gives
//! the reported error.

use std::ops::{Add, Mul};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::lattice::Site;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureOptions {
    /// Gauss–Legendre nodes per axis and box for the coarse pass.
    pub nodes: usize,
    /// Largest accepted difference between the `n` and `2n` passes.
    pub tolerance: f64,
    pub max_levels: usize,
    /// Skip the `2n` pass (error reported as NaN).
    pub single_pass: bool,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions { nodes: 6, tolerance: 1e-6, max_levels: 60, single_pass: false }
    }
}

impl QuadratureOptions {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn fast() -> Self {
        QuadratureOptions { single_pass: true, ..Default::default() }
    }
}

/// A quadrature value with its refinement error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GreenConstants {
    pub g: f64,
    pub g_star: f64,
    pub quadrature_error: f64,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct C {
    re: f64,
    im: f64,
}

impl C {
    fn inv(self) -> C {
        let m = self.re * self.re + self.im * self.im;
        C { re: self.re / m, im: -self.im / m }
    }

    fn exp(self) -> C {
        let e = self.re.exp();
        if self.im == 0.0 {
            C { re: e, im: 0.0 }
        } else {
            C { re: e * self.im.cos(), im: e * self.im.sin() }
        }
    }

    fn scale(self, s: f64) -> C {
        C { re: self.re * s, im: self.im * s }
    }
}

impl Mul for C {
    type Output = C;
    #[inline]
    fn mul(self, o: C) -> C {
        C { re: self.re * o.re - self.im * o.im, im: self.re * o.im + self.im * o.re }
    }
}

impl Add for C {
    type Output = C;
    #[inline]
    fn add(self, o: C) -> C {
        C { re: self.re + o.re, im: self.im + o.im }
    }
}

/// Real arithmetic when the integrand is even in every coordinate,
/// complex otherwise.
trait Field: Copy + Mul<Output = Self> + Add<Output = Self> {
    const ZERO: Self;
    const ONE: Self;
    fn real(x: f64) -> Self;
    fn angle(x: f64) -> Self;
    fn to_c(self) -> C;
}

impl Field for f64 {
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;
    fn real(x: f64) -> f64 {
        x
    }
    fn angle(x: f64) -> f64 {
        x.cos()
    }
    fn to_c(self) -> C {
        C { re: self, im: 0.0 }
    }
}

impl Field for C {
    const ZERO: C = C { re: 0.0, im: 0.0 };
    const ONE: C = C { re: 1.0, im: 0.0 };
    fn real(x: f64) -> C {
        C { re: x, im: 0.0 }
    }
    fn angle(x: f64) -> C {
        C { re: x.cos(), im: x.sin() }
    }
    fn to_c(self) -> C {
        self
    }
}

/// Per-box, per-axis tables: GL weights, `e^{iθ c}` for every coordinate
/// value of the support, and the phase `e^{-iθ Δ}`.
struct AxisTable<F> {
    weights: Vec<f64>,
    vals: Vec<F>,
    phase: Vec<F>,
}

struct ZoneIntegrator<'a> {
    dim: usize,
    range: i32,
    ncoord: usize,
    kw: &'a [f64],
    cidx: Vec<usize>,
    delta: Site,
    /// `t |mean_a|`: oscillation rate of `e^{-t(1-p̂)}` along each axis.
    drift: Vec<f64>,
    reflective: bool,
}

impl<'a> ZoneIntegrator<'a> {
    fn new(k: &'a Kernel, delta: Site, time: f64, reflective: bool) -> Self {
        let d = k.dim();
        let range = k.range().max(1);
        let ncoord = (2 * range + 1) as usize;
        let mut cidx = Vec::with_capacity(k.offsets().len() * d);
        for z in k.offsets() {
            for a in 0..d {
                cidx.push((z.0[a] + range) as usize);
            }
        }
        let drift = k.mean().iter().map(|m| time * m.abs()).collect();
        ZoneIntegrator { dim: d, range, ncoord, kw: k.weights(), cidx, delta, drift, reflective }
    }

    fn table<F: Field>(&self, axis: usize, lo: f64, hi: f64, x: &[f64], w: &[f64]) -> AxisTable<F> {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut weights = Vec::with_capacity(x.len());
        let mut vals = Vec::with_capacity(x.len() * self.ncoord);
        let mut phase = Vec::with_capacity(x.len());
        for (xi, wi) in x.iter().zip(w) {
            let theta = mid + half * xi;
            weights.push(half * wi);
            for c in -self.range..=self.range {
                vals.push(F::angle(theta * c as f64));
            }
            phase.push(F::angle(-theta * self.delta.0[axis] as f64));
        }
        AxisTable { weights, vals, phase }
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Field, G: Fn(C, C) -> [f64; 2]>(
        &self,
        axis: usize,
        tabs: &[&AxisTable<F>],
        stack: &mut [Vec<F>],
        wprod: f64,
        phase: F,
        f: &G,
        acc: &mut [f64; 2],
    ) {
        let d = self.dim;
        let nc = self.ncoord;
        let s_len = self.kw.len();
        let tab = tabs[axis];
        let n = tab.weights.len();
        if axis + 1 == d {
            let prev = &stack[axis];
            for j in 0..n {
                let row = &tab.vals[j * nc..(j + 1) * nc];
                let mut phat = F::ZERO;
                for s in 0..s_len {
                    phat = phat + prev[s] * row[self.cidx[s * d + axis]];
                }
                let v = f(phat.to_c(), (phase * tab.phase[j]).to_c());
                let w = wprod * tab.weights[j];
                acc[0] += w * v[0];
                acc[1] += w * v[1];
            }
        } else {
            for j in 0..n {
                let row = &tab.vals[j * nc..(j + 1) * nc];
                let (lo, hi) = stack.split_at_mut(axis + 1);
                let prev = &lo[axis];
                let next = &mut hi[0];
                for s in 0..s_len {
                    next[s] = prev[s] * row[self.cidx[s * d + axis]];
                }
                self.recurse(axis + 1, tabs, stack, wprod * tab.weights[j], phase * tab.phase[j], f, acc);
            }
        }
    }

    fn shell<F: Field, G: Fn(C, C) -> [f64; 2]>(&self, a: f64, x: &[f64], w: &[f64], f: &G) -> [f64; 2] {
        let d = self.dim;
        // per-axis pieces flagged by whether they touch the origin
        let base: Vec<(f64, f64, bool)> = if self.reflective {
            vec![(0.0, 0.5 * a, true), (0.5 * a, a, false)]
        } else {
            vec![(-0.5 * a, 0.0, true), (0.0, 0.5 * a, true), (-a, -0.5 * a, false), (0.5 * a, a, false)]
        };
        let mut inner_flags: Vec<Vec<bool>> = Vec::with_capacity(d);
        let tables: Vec<Vec<AxisTable<F>>> = (0..d)
            .map(|ax| {
                // split pieces so that no sub-box spans more than ~1.5 rad of
                // the oscillating factors along this axis
                let freq = self.delta.0[ax].unsigned_abs() as f64 + self.drift[ax];
                let mut flags = Vec::new();
                let mut tabs = Vec::new();
                for &(lo, hi, inner) in &base {
                    let m = ((hi - lo) * freq / 1.5).ceil().max(1.0) as usize;
                    let h = (hi - lo) / m as f64;
                    for i in 0..m {
                        tabs.push(self.table(ax, lo + i as f64 * h, lo + (i + 1) as f64 * h, x, w));
                        flags.push(inner);
                    }
                }
                inner_flags.push(flags);
                tabs
            })
            .collect();
        let mut stack: Vec<Vec<F>> = vec![vec![F::ZERO; self.kw.len()]; d];
        for (s, &kw) in self.kw.iter().enumerate() {
            stack[0][s] = F::real(kw);
        }
        let mut choice = vec![0usize; d];
        let mut acc = [0.0; 2];
        let mut box_tabs: Vec<&AxisTable<F>> = Vec::with_capacity(d);
        loop {
            if choice.iter().enumerate().any(|(ax, &c)| !inner_flags[ax][c]) {
                box_tabs.clear();
                for (ax, &c) in choice.iter().enumerate() {
                    box_tabs.push(&tables[ax][c]);
                }
                self.recurse(0, &box_tabs, &mut stack, 1.0, F::ONE, f, &mut acc);
            }
            let mut ax = 0;
            loop {
                if ax == d {
                    return acc;
                }
                choice[ax] += 1;
                if choice[ax] < tables[ax].len() {
                    break;
                }
                choice[ax] = 0;
                ax += 1;
            }
        }
    }

    /// One full pass at `n` nodes. `ratios[i]` is the shell-to-shell decay
    /// of output `i`, `stiffness` the time scale that sets how small the
    /// core must be before the geometric tail is trusted.
    fn integrate<G: Fn(C, C) -> [f64; 2]>(
        &self,
        n: usize,
        ratios: [f64; 2],
        active: usize,
        stiffness: f64,
        tol: f64,
        max_levels: usize,
        f: &G,
    ) -> Result<[f64; 2]> {
        let (x, w) = gauss_legendre(n);
        let pi = std::f64::consts::PI;
        let norm = if self.reflective { pi.powi(-(self.dim as i32)) } else { (2.0 * pi).powi(-(self.dim as i32)) };
        let mut total = [0.0; 2];
        let mut a = pi;
        for level in 0..max_levels {
            let s = if self.reflective {
                self.shell::<f64, G>(a, &x, &w, f)
            } else {
                self.shell::<C, G>(a, &x, &w, f)
            };
            let s = [s[0] * norm, s[1] * norm];
            total[0] += s[0];
            total[1] += s[1];
            let next = 0.5 * a;
            let spread = (1.0 + stiffness + self.delta.norm2() as f64) * next * next;
            let tails: Vec<f64> = (0..active).map(|i| s[i] * ratios[i] / (1.0 - ratios[i])).collect();
            let settled = spread < 1e-2 && tails.iter().all(|t| t.abs() * spread < 1e-2 * tol);
            if level >= 2 && settled {
                let mut out = total;
                for (i, t) in tails.iter().enumerate() {
                    out[i] += t;
                }
                return Ok(out);
            }
            a = next;
        }
        Err(Error::NonConvergedQuadrature { difference: f64::INFINITY, tolerance: tol })
    }

    #[allow(clippy::too_many_arguments)]
    fn refine<G: Fn(C, C) -> [f64; 2]>(
        &self,
        opts: &QuadratureOptions,
        ratios: [f64; 2],
        active: usize,
        stiffness: f64,
        f: &G,
    ) -> Result<([f64; 2], f64)> {
        let coarse = self.integrate(opts.nodes, ratios, active, stiffness, opts.tolerance, opts.max_levels, f)?;
        if opts.single_pass {
            return Ok((coarse, f64::NAN));
        }
        let fine = self.integrate(2 * opts.nodes, ratios, active, stiffness, opts.tolerance, opts.max_levels, f)?;
        let diff = (0..active).map(|i| (fine[i] - coarse[i]).abs()).fold(0.0, f64::max);
        if !(diff <= opts.tolerance) {
            return Err(Error::NonConvergedQuadrature { difference: diff, tolerance: opts.tolerance });
        }
        Ok((fine, diff))
    }
}

/// `p_t(0, 0)` with default options.
pub fn heat_kernel_diagonal(k: &Kernel, t: f64) -> Result<f64> {
    Ok(heat_kernel_with(k, t, Site::ORIGIN, &QuadratureOptions::default())?.value)
}

/// `p_t(0, z)`; for an asymmetric kernel the real part of the Fourier
/// inversion is taken, which is exact since the result is real.
pub fn heat_kernel_with(k: &Kernel, t: f64, z: Site, opts: &QuadratureOptions) -> Result<Quadrature> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time {t} must be finite and non-negative")));
    }
    if t == 0.0 {
        return Ok(Quadrature { value: if z == Site::ORIGIN { 1.0 } else { 0.0 }, error: 0.0 });
    }
    let zi = ZoneIntegrator::new(k, z, t, k.is_reflection_symmetric());
    let f = |phat: C, phase: C| {
        let e = C { re: -t * (1.0 - phat.re), im: t * phat.im }.exp() * phase;
        [e.re, 0.0]
    };
    let ratio = 0.5f64.powi(k.dim() as i32);
    let (v, err) = zi.refine(opts, [ratio, 0.0], 1, t, &f)?;
    Ok(Quadrature { value: v[0], error: err })
}

fn require_transient(k: &Kernel) -> Result<()> {
    if k.dim() <= 2 {
        return Err(Error::RecurrentKernel(k.dim()));
    }
    if !k.zero_mean() {
        return Err(Error::InvalidKernel("Green integrals are implemented for zero-mean kernels".into()));
    }
    Ok(())
}

/// `∫_0^∞ p_{s+u}(0, z) du = (2π)^{-d} ∫ e^{-s(1-p̂)} e^{-iθ·z} / (1 - p̂) dθ`.
pub fn lattice_green(k: &Kernel, z: Site, s: f64, opts: &QuadratureOptions) -> Result<Quadrature> {
    require_transient(k)?;
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::InvalidParameter(format!("lag {s} must be finite and non-negative")));
    }
    let zi = ZoneIntegrator::new(k, z, s, k.is_reflection_symmetric());
    let f = |phat: C, phase: C| {
        let q = C { re: 1.0 - phat.re, im: -phat.im };
        let e = if s > 0.0 { q.scale(-s).exp() * phase } else { phase };
        [(e * q.inv()).re, 0.0]
    };
    let ratio = 0.5f64.powi(k.dim() as i32 - 2);
    let (v, err) = zi.refine(opts, [ratio, 0.0], 1, s, &f)?;
    Ok(Quadrature { value: v[0], error: err })
}

/// `G_d = ∫_0^∞ p_t(0,0) dt`, finite for transient kernels (`d ≥ 3`).
pub fn green_g(k: &Kernel, opts: &QuadratureOptions) -> Result<Quadrature> {
    lattice_green(k, Site::ORIGIN, 0.0, opts)
}

/// `G_d` and `G_d*` from one pass over the zone.
pub fn green_constants_with(k: &Kernel, opts: &QuadratureOptions) -> Result<GreenConstants> {
    require_transient(k)?;
    if k.dim() <= 4 {
        return Err(Error::NotStronglyTransient(k.dim()));
    }
    let zi = ZoneIntegrator::new(k, Site::ORIGIN, 0.0, k.is_reflection_symmetric());
    let f = |phat: C, _phase: C| {
        let inv = C { re: 1.0 - phat.re, im: -phat.im }.inv();
        [inv.re, (inv * inv).re]
    };
    let d = k.dim() as i32;
    let (v, err) = zi.refine(opts, [0.5f64.powi(d - 2), 0.5f64.powi(d - 4)], 2, 0.0, &f)?;
    Ok(GreenConstants { g: v[0], g_star: v[1], quadrature_error: err })
}

pub fn green_constants(k: &Kernel) -> Result<GreenConstants> {
    green_constants_with(k, &QuadratureOptions::default())
}
