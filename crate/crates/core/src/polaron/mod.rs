//! Radial lower bound for the polaron constant in five dimensions,
//!
//! `P = sup_{‖f‖₂=1} ∫∫ f²(x) f²(y) / (16π²|x-y|) dx dy - ‖∇f‖₂²`,
//!
//! and the large-κ prediction built from it.
//!
//! Under the dilation `f_λ(x) = λ^{5/2} f(λx)` the Coulomb part scales like
//! `λ` and the Dirichlet part like `λ²`, so every profile `f` certifies the
//! value `C(f)² / (4 D(f))`. The ascent works on that dilation-free ratio.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::fourier::gauss_legendre;
use crate::kernels::GreenConstants;

/// Surface measure of the unit sphere in `R^5`.
pub const SPHERE_AREA_5: f64 = 8.0 * std::f64::consts::PI * std::f64::consts::PI / 3.0;

const COULOMB_PREFACTOR: f64 = 1.0 / (16.0 * std::f64::consts::PI * std::f64::consts::PI);

/// Radial function on the uniform grid `r_i = i R / (n - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub radius: f64,
    pub values: Vec<f64>,
}

impl RadialProfile {
    pub fn new(radius: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 5 {
            return Err(Error::InvalidParameter("a profile needs at least 5 grid points".into()));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("profile value".into()));
        }
        Ok(RadialProfile { radius, values })
    }

    pub fn from_fn(n: usize, radius: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = radius / (n.max(2) - 1) as f64;
        Self::new(radius, (0..n).map(|i| f(i as f64 * h)).collect())
    }

    /// `f ∝ exp(-r² / (2 w²))`, normalised.
    pub fn gaussian(n: usize, radius: f64, width: f64) -> Result<Self> {
        let mut p = Self::from_fn(n, radius, |r| (-(r * r) / (2.0 * width * width)).exp())?;
        p.normalize();
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.radius / (self.values.len() - 1) as f64
    }

    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.step();
        (0..self.values.len()).map(move |i| i as f64 * h)
    }

    /// `‖f‖₂` in `R^5`.
    pub fn norm(&self) -> f64 {
        let m = mass_weights(self.len(), self.step());
        self.values.iter().zip(&m).map(|(f, w)| w * f * f).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for v in self.values.iter_mut() {
                *v /= n;
            }
        }
    }

    /// `|f(R)| / max |f|`.
    pub fn boundary_decay(&self) -> f64 {
        let max = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max == 0.0 {
            0.0
        } else {
            self.values.last().unwrap().abs() / max
        }
    }
}

/// Composite Simpson weights on `n` equally spaced points, closing with
/// the 3/8 rule when the interval count is odd.
fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    let intervals = n - 1;
    let simpson_end = if intervals % 2 == 0 { intervals } else { intervals - 3 };
    let mut i = 0;
    while i < simpson_end {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if simpson_end < intervals {
        let c = 3.0 * h / 8.0;
        w[i] += c;
        w[i + 1] += 3.0 * c;
        w[i + 2] += 3.0 * c;
        w[i + 3] += c;
    }
    w
}

/// `S₄ w_i r_i⁴`: the quadrature weights of `∫_{R^5} g(|x|) dx`.
fn mass_weights(n: usize, h: f64) -> Vec<f64> {
    simpson_weights(n, h).into_iter().enumerate().map(|(i, w)| SPHERE_AREA_5 * w * (i as f64 * h).powi(4)).collect()
}

/// Fourth-order derivative at the midpoints `(i + 1/2) h`, `i = 0..n`, with
/// even reflection at the origin and zero padding beyond `R`, as sparse
/// rows. Unlike a central stencil it vanishes only on constants.
fn derivative_rows(n: usize, h: f64) -> Vec<[(usize, f64); 4]> {
    let c = [(-1i64, 1.0), (0, -27.0), (1, 27.0), (2, -1.0)];
    (0..n)
        .map(|i| {
            let mut row = [(0usize, 0.0); 4];
            for (k, &(off, w)) in c.iter().enumerate() {
                let j = i as i64 + off;
                row[k] = if j < 0 {
                    ((-j) as usize, w / (24.0 * h))
                } else if j as usize >= n {
                    (0, 0.0)
                } else {
                    (j as usize, w / (24.0 * h))
                };
            }
            row
        })
        .collect()
}

/// `S₄ h r_{i+1/2}⁴`: midpoint weights for `∫ |f'|² dx`. The integrand is
/// even in `r`, so the midpoint rule has no end corrections at the origin.
fn gradient_weights(n: usize, h: f64) -> Vec<f64> {
    (0..n).map(|i| SPHERE_AREA_5 * h * ((i as f64 + 0.5) * h).powi(4)).collect()
}

/// Precomputed weights and operators for one grid.
pub struct RadialGrid {
    n: usize,
    radius: f64,
    mass: Vec<f64>,
    grad_weight: Vec<f64>,
    deriv: Vec<[(usize, f64); 4]>,
    /// `kernel[i * n + j]`, the angular mean of `1/(16π²|x-y|)` with
    /// `|x| = r_i`, `|y| = r_j`.
    kernel: Vec<f64>,
}

/// Composite Gauss-Legendre rule on `[0, π]` in the polar angle, graded
/// towards 0 where the integrand is sharp for `r ≈ s`.
fn angular_rule(nodes: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(nodes);
    let mut edges = vec![0.0];
    let levels = 24;
    for k in (0..levels).rev() {
        edges.push(std::f64::consts::PI * 0.5f64.powi(k));
    }
    let mut rule = Vec::new();
    for e in edges.windows(2) {
        let (a, b) = (e[0], e[1]);
        for (xi, wi) in x.iter().zip(&w) {
            rule.push((0.5 * (a + b) + 0.5 * (b - a) * xi, 0.5 * (b - a) * wi));
        }
    }
    rule
}

/// Angular mean over the 4-sphere of `1 / (16π² |x - y|)`, weighted by
/// `sin³φ` in the polar angle.
pub fn angular_kernel(r: f64, s: f64, nodes: usize) -> f64 {
    angular_kernel_with(r, s, &angular_rule(nodes))
}

fn angular_kernel_with(r: f64, s: f64, rule: &[(f64, f64)]) -> f64 {
    if r == 0.0 && s == 0.0 {
        // the diagonal singular point carries zero mass
        return 0.0;
    }
    if r == 0.0 || s == 0.0 {
        return COULOMB_PREFACTOR / r.max(s);
    }
    let mut acc = 0.0;
    for &(phi, w) in rule {
        let half = 0.5 * phi;
        // |x-y|² = (r-s)² + 4rs sin²(φ/2)
        let dist = ((r - s) * (r - s) + 4.0 * r * s * half.sin().powi(2)).sqrt();
        let sin3 = phi.sin().powi(3);
        if dist > 0.0 {
            acc += w * sin3 / dist;
        }
    }
    COULOMB_PREFACTOR * acc * 0.75
}

impl RadialGrid {
    pub fn new(n: usize, radius: f64) -> Result<Self> {
        if n < 5 {
            return Err(Error::InvalidParameter("grid needs at least 5 points".into()));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
        }
        let h = radius / (n - 1) as f64;
        let mass = mass_weights(n, h);
        let grad_weight = gradient_weights(n, h);
        let deriv = derivative_rows(n, h);
        let rule = angular_rule(12);
        let kernel: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let rule = &rule;
                (0..n).map(move |j| angular_kernel_with(i as f64 * h, j as f64 * h, rule))
            })
            .collect();
        Ok(RadialGrid { n, radius, mass, grad_weight, deriv, kernel })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, f: &RadialProfile) -> Result<()> {
        if f.len() != self.n || (f.radius - self.radius).abs() > 1e-12 * self.radius {
            return Err(Error::InvalidParameter("profile does not live on this grid".into()));
        }
        Ok(())
    }

    fn derivative(&self, f: &[f64]) -> Vec<f64> {
        self.deriv.iter().map(|row| row.iter().map(|&(j, c)| c * f[j]).sum()).collect()
    }

    fn dirichlet_raw(&self, f: &[f64]) -> f64 {
        self.derivative(f).iter().zip(&self.grad_weight).map(|(d, w)| w * d * d).sum()
    }

    fn coulomb_raw(&self, f: &[f64]) -> f64 {
        let u: Vec<f64> = f.iter().zip(&self.mass).map(|(v, m)| m * v * v).collect();
        let n = self.n;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let row = &self.kernel[i * n..(i + 1) * n];
                u[i] * row.iter().zip(&u).map(|(k, v)| k * v).sum::<f64>()
            })
            .sum()
    }

    pub fn norm_squared(&self, f: &RadialProfile) -> f64 {
        f.values.iter().zip(&self.mass).map(|(v, m)| m * v * v).sum()
    }

    /// `‖∇f‖₂²`.
    pub fn dirichlet_energy(&self, f: &RadialProfile) -> Result<f64> {
        self.check(f)?;
        Ok(self.dirichlet_raw(&f.values))
    }

    /// `∫∫ f²(x) f²(y) / (16π²|x-y|) dx dy`.
    pub fn coulomb_energy(&self, f: &RadialProfile) -> Result<f64> {
        self.check(f)?;
        Ok(self.coulomb_raw(&f.values))
    }

    /// `C(f) - D(f)`.
    pub fn functional(&self, f: &RadialProfile) -> Result<f64> {
        Ok(self.coulomb_energy(f)? - self.dirichlet_energy(f)?)
    }

    /// `C² / (4D)`, the functional at the best dilation of `f`, for `‖f‖ = 1`.
    fn ratio(&self, f: &[f64]) -> (f64, f64, f64) {
        let c = self.coulomb_raw(f);
        let d = self.dirichlet_raw(f);
        (c * c / (4.0 * d), c, d)
    }

    /// Gradient of `C² / (4D)` in the coefficients.
    fn ratio_gradient(&self, f: &[f64], c: f64, d: f64) -> Vec<f64> {
        let n = self.n;
        let u: Vec<f64> = f.iter().zip(&self.mass).map(|(v, m)| m * v * v).collect();
        let grad_c: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|k| {
                let row = &self.kernel[k * n..(k + 1) * n];
                4.0 * self.mass[k] * f[k] * row.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let df = self.derivative(f);
        let mut grad_d = vec![0.0; n];
        for (i, row) in self.deriv.iter().enumerate() {
            let g = 2.0 * self.grad_weight[i] * df[i];
            for &(j, coef) in row {
                grad_d[j] += coef * g;
            }
        }
        let a = c / (2.0 * d);
        let b = c * c / (4.0 * d * d);
        grad_c.iter().zip(&grad_d).map(|(gc, gd)| a * gc - b * gd).collect()
    }

    fn normalized(&self, mut f: Vec<f64>) -> Vec<f64> {
        let n: f64 = f.iter().zip(&self.mass).map(|(v, m)| m * v * v).sum::<f64>().sqrt();
        for v in f.iter_mut() {
            *v /= n;
        }
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolaronOptions {
    pub n: usize,
    pub radius: f64,
    pub iterations: usize,
    /// Length of the first ascent step, in units of `h² / value`.
    pub step: f64,
    /// Also solve on the grid with twice as many intervals.
    pub refine: bool,
}

impl Default for PolaronOptions {
    fn default() -> Self {
        PolaronOptions { n: 512, radius: 30.0, iterations: 2000, step: 1.0, refine: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolaronSolution {
    /// `C² / (4D)` of the returned profile.
    pub lower_bound: f64,
    pub coulomb: f64,
    pub dirichlet: f64,
    /// Dilation `λ* = C / (2D)` at which `C - D` attains the bound.
    pub best_dilation: f64,
    pub gaussian_value: f64,
    pub gaussian_width: f64,
    /// Accepted values of the ascent, non-decreasing.
    pub history: Vec<f64>,
    pub refinement_delta: Option<f64>,
    pub profile: RadialProfile,
}

/// Best Gaussian on the grid over a width scan.
pub fn gaussian_scan(grid: &RadialGrid) -> Result<(f64, f64)> {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..40 {
        let width = grid.radius * (0.02 + 0.2 * k as f64 / 39.0);
        let g = RadialProfile::gaussian(grid.n, grid.radius, width)?;
        let (v, _, _) = grid.ratio(&g.values);
        if v > best.0 {
            best = (v, width);
        }
    }
    Ok(best)
}

/// Gradient of `f ↦ C²/(4D)` at `f/‖f‖`, taken at a unit-norm `f`.
fn sphere_gradient(grid: &RadialGrid, f: &[f64], c: f64, d: f64) -> Vec<f64> {
    let g = grid.ratio_gradient(f, c, d);
    let radial: f64 = g.iter().zip(f).map(|(a, b)| a * b).sum();
    g.iter().zip(f).zip(&grid.mass).map(|((gi, fi), m)| gi - radial * m * fi).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const MEMORY: usize = 8;

/// Limited-memory BFGS ascent on the unit sphere. Variables are scaled by
/// the square root of the mass weights so that the metric is Euclidean.
fn ascend(grid: &RadialGrid, opts: &PolaronOptions) -> Result<PolaronSolution> {
    let (gaussian_value, gaussian_width) = gaussian_scan(grid)?;
    let h = grid.radius / (grid.n - 1) as f64;
    let floor = grid.mass[1];
    let scale: Vec<f64> = grid.mass.iter().map(|m| m.max(floor).sqrt()).collect();
    let to_z = |x: &[f64]| -> Vec<f64> { x.iter().zip(&scale).map(|(a, s)| a * s).collect() };
    let grad_z = |g: &[f64]| -> Vec<f64> { g.iter().zip(&scale).map(|(a, s)| a / s).collect() };

    let mut f = RadialProfile::gaussian(grid.n, grid.radius, gaussian_width)?.values;
    let (mut value, mut c, mut d) = grid.ratio(&f);
    let mut gz = grad_z(&sphere_gradient(grid, &f, c, d));
    let mut history = vec![value];
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let first_scale = opts.step * h * h / value;
    for _ in 0..opts.iterations {
        // two-loop recursion for the ascent direction H g
        let mut q = gz.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (sv, yv, rho) in pairs.iter().rev() {
            let a = rho * dot(sv, &q);
            for (qi, yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match pairs.back() {
            Some((sv, yv, _)) => dot(sv, yv) / dot(yv, yv),
            None => first_scale,
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for ((sv, yv, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            for (qi, si) in q.iter_mut().zip(sv) {
                *qi += (a - b) * si;
            }
        }
        let mut slope = dot(&gz, &q);
        if !(slope > 0.0) {
            pairs.clear();
            q = gz.iter().map(|g| g * first_scale).collect();
            slope = dot(&gz, &q);
            if !(slope > 0.0) {
                break;
            }
        }
        let z = to_z(&f);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = z.iter().zip(&q).zip(&scale).map(|((zi, qi), s)| (zi + step * qi) / s).collect();
            let trial = grid.normalized(trial);
            let (tv, tc, td) = grid.ratio(&trial);
            if tv.is_finite() && tv > value + 1e-4 * step * slope {
                accepted = Some((trial, tv, tc, td));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, tv, tc, td)) = accepted else {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        };
        let improvement = (tv - value) / value.abs();
        let new_gz = grad_z(&sphere_gradient(grid, &trial, tc, td));
        let sv: Vec<f64> = to_z(&trial).iter().zip(&z).map(|(a, b)| a - b).collect();
        // minimising -G: y is minus the change of the ascent gradient
        let yv: Vec<f64> = gz.iter().zip(&new_gz).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 0.0 {
            if pairs.len() == MEMORY {
                pairs.pop_front();
            }
            pairs.push_back((sv, yv, 1.0 / sy));
        }
        f = trial;
        value = tv;
        c = tc;
        d = td;
        gz = new_gz;
        history.push(value);
        if improvement < 1e-12 {
            break;
        }
    }
    finish(grid, f, c, d, gaussian_value, gaussian_width, history)
}

fn finish(
    grid: &RadialGrid,
    f: Vec<f64>,
    c: f64,
    d: f64,
    gaussian_value: f64,
    gaussian_width: f64,
    history: Vec<f64>,
) -> Result<PolaronSolution> {
    let lower_bound = c * c / (4.0 * d);
    if !(lower_bound > 0.0) {
        return Err(Error::NonPositiveResult(lower_bound));
    }
    Ok(PolaronSolution {
        lower_bound,
        coulomb: c,
        dirichlet: d,
        best_dilation: c / (2.0 * d),
        gaussian_value,
        gaussian_width,
        history,
        refinement_delta: None,
        profile: RadialProfile::new(grid.radius, f)?,
    })
}

/// Projected gradient ascent for the radial lower bound.
pub fn solve_p5(opts: &PolaronOptions) -> Result<PolaronSolution> {
    let grid = RadialGrid::new(opts.n, opts.radius)?;
    let mut sol = ascend(&grid, opts)?;
    if opts.refine {
        let fine = RadialGrid::new(2 * opts.n - 1, opts.radius)?;
        let other = ascend(&fine, opts)?;
        sol.refinement_delta = Some((other.lower_bound - sol.lower_bound).abs());
    }
    Ok(sol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjectureInputs {
    pub d: usize,
    pub p: usize,
    pub rho: f64,
    pub gamma: f64,
    pub green: GreenConstants,
    pub p5_lower_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjectureTerms {
    /// `ρ(1-ρ)γ² G*/G`.
    pub green_term: f64,
    /// `(2d)^5 [ρ(1-ρ)γ² p / G]² P` in `d = 5`, zero otherwise.
    pub polaron_term: f64,
    pub total: f64,
    /// The polaron term uses a lower bound for the constant.
    pub polaron_is_lower_bound: bool,
}

/// Predicted `lim_{κ→∞} 2dκ [λ_p(κ) - ργ]`.
pub fn conjecture_rhs(inputs: &ConjectureInputs) -> Result<ConjectureTerms> {
    if inputs.d < 5 {
        return Err(Error::DimensionTooLow(inputs.d));
    }
    if !(inputs.rho >= 0.0 && inputs.rho <= 1.0) || !(inputs.gamma >= 0.0) || inputs.p < 1 {
        return Err(Error::InvalidParameter("need rho in [0, 1], gamma >= 0, p >= 1".into()));
    }
    let a = inputs.rho * (1.0 - inputs.rho) * inputs.gamma * inputs.gamma;
    let green_term = a / inputs.green.g * inputs.green.g_star;
    let polaron_term = if inputs.d == 5 {
        let b = a / inputs.green.g * inputs.p as f64;
        10f64.powi(5) * b * b * inputs.p5_lower_bound
    } else {
        0.0
    };
    Ok(ConjectureTerms { green_term, polaron_term, total: green_term + polaron_term, polaron_is_lower_bound: inputs.d == 5 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub kappas: Vec<f64>,
    /// `2dκ (λ̂_1(κ) - ργ)`.
    pub scaled: Vec<f64>,
    pub rhs: f64,
    /// Successive increments shrink in magnitude.
    pub flattening: bool,
    /// Last scaled value divided by the prediction.
    pub ratio: f64,
    pub in_band: bool,
}

pub fn conjecture_trend(inputs: &ConjectureInputs, kappas: &[f64], lambdas: &[f64]) -> Result<TrendReport> {
    if kappas.len() != lambdas.len() || kappas.is_empty() {
        return Err(Error::InvalidParameter("need one estimate per kappa".into()));
    }
    let rhs = conjecture_rhs(inputs)?.total;
    let d = inputs.d as f64;
    let scaled: Vec<f64> =
        kappas.iter().zip(lambdas).map(|(k, l)| 2.0 * d * k * (l - inputs.rho * inputs.gamma)).collect();
    let inc: Vec<f64> = scaled.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let flattening = inc.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let last = *scaled.last().unwrap();
    let ratio = if rhs > 0.0 { last / rhs } else { f64::NAN };
    Ok(TrendReport { kappas: kappas.to_vec(), scaled, rhs, flattening, in_band: (0.1..=10.0).contains(&ratio), ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `∫_{-1}^{1} (1-u²) / sqrt(r² + s² - 2rs u) du`, in closed form.
    fn exact_angular(r: f64, s: f64) -> f64 {
        let (a, b) = (r * r + s * s, 2.0 * r * s);
        let prim = |q: f64| (b * b - a * a) * 2.0 * q + 2.0 * a * (2.0 / 3.0) * q.powi(3) - 0.4 * q.powi(5);
        let i = (prim(r + s) - prim((r - s).abs())) / b.powi(3);
        COULOMB_PREFACTOR * i * 0.75
    }

    #[test]
    fn angular_kernel_matches_closed_form() {
        for (r, s) in [(1.0, 1.0), (1.0, 0.5), (2.0, 2.001), (0.3, 5.0), (7.0, 6.5)] {
            let k = angular_kernel(r, s, 12);
            let e = exact_angular(r, s);
            assert!((k / e - 1.0).abs() < 1e-9, "{r} {s}: {k} vs {e}");
            let k2 = angular_kernel(r, s, 24);
            assert!((k - k2).abs() < 1e-6 * k);
        }
        let far = angular_kernel(1e-3, 10.0, 12) * 16.0 * std::f64::consts::PI.powi(2) * 10.0;
        assert!((far - 1.0).abs() < 1e-4);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        for n in [9usize, 10, 11, 12] {
            let h = 2.0 / (n - 1) as f64;
            let w = simpson_weights(n, h);
            let v: f64 = w.iter().enumerate().map(|(i, w)| w * (i as f64 * h).powi(3)).sum();
            assert!((v - 4.0).abs() < 1e-12, "{n}");
        }
    }

    #[test]
    fn gaussian_dirichlet_energy() {
        let grid = RadialGrid::new(512, 30.0).unwrap();
        let g = RadialProfile::gaussian(512, 30.0, 3.0).unwrap();
        assert!((grid.norm_squared(&g) - 1.0).abs() < 1e-10);
        let d = grid.dirichlet_energy(&g).unwrap() * 9.0;
        assert!((d - 2.5).abs() < 1e-4, "{d}");
        assert!(g.boundary_decay() < 1e-6);
    }

    #[test]
    fn scaling_laws() {
        let grid = RadialGrid::new(1025, 20.0).unwrap();
        let a = RadialProfile::gaussian(1025, 20.0, 1.5).unwrap();
        let b = RadialProfile::gaussian(1025, 20.0, 3.0).unwrap();
        let (da, db) = (grid.dirichlet_energy(&a).unwrap(), grid.dirichlet_energy(&b).unwrap());
        assert!((da / db - 4.0).abs() < 4e-6, "{}", da / db);
        let (ca, cb) = (grid.coulomb_energy(&a).unwrap(), grid.coulomb_energy(&b).unwrap());
        assert!((ca / cb - 2.0).abs() < 2e-4, "{}", ca / cb);
        // E|Z|^{-1} for a standard normal in R^5 is 1/(√2 Γ(5/2)) = 4/(3√(2π))
        let exact = 4.0 / (3.0 * (2.0 * std::f64::consts::PI).sqrt()) * COULOMB_PREFACTOR / 1.5;
        assert!((ca / exact - 1.0).abs() < 1e-3, "{ca} vs {exact}");
    }

    #[test]
    fn grid_scale_oscillation_is_penalised() {
        let n = 257;
        let grid = RadialGrid::new(n, 20.0).unwrap();
        let smooth = RadialProfile::gaussian(n, 20.0, 2.0).unwrap();
        let mut saw = smooth.clone();
        for (i, v) in saw.values.iter_mut().enumerate() {
            *v *= 1.0 + 0.5 * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        saw.normalize();
        let (ds, dw) = (grid.dirichlet_energy(&smooth).unwrap(), grid.dirichlet_energy(&saw).unwrap());
        assert!(dw > 100.0 * ds, "{dw} vs {ds}");
    }

    #[test]
    fn taper_profile_has_positive_energy() {
        let grid = RadialGrid::new(129, 10.0).unwrap();
        let mut f = RadialProfile::from_fn(129, 10.0, |r| if r < 5.0 { 1.0 } else { ((10.0 - r) / 5.0).max(0.0) }).unwrap();
        f.normalize();
        assert!(grid.dirichlet_energy(&f).unwrap() > 0.0);
    }

    #[test]
    fn solver_is_monotone_and_self_consistent() {
        let opts = PolaronOptions { n: 129, radius: 20.0, iterations: 200, step: 1.0, refine: false };
        let s = solve_p5(&opts).unwrap();
        assert!(s.lower_bound > 0.0);
        assert!(s.history.windows(2).all(|w| w[1] >= w[0]));
        let grid = RadialGrid::new(129, 20.0).unwrap();
        let c = grid.coulomb_energy(&s.profile).unwrap();
        let d = grid.dirichlet_energy(&s.profile).unwrap();
        assert!((s.lower_bound - c * c / (4.0 * d)).abs() <= 1e-8 * s.lower_bound);
        assert!(s.lower_bound >= s.gaussian_value - 1e-8);
        assert!((grid.norm_squared(&s.profile) - 1.0).abs() < 1e-10);
    }

    fn inputs(d: usize, p: usize, rho: f64) -> ConjectureInputs {
        ConjectureInputs {
            d,
            p,
            rho,
            gamma: 1.0,
            green: GreenConstants { g: 1.2, g_star: 0.4, quadrature_error: 0.0 },
            p5_lower_bound: 1e-6,
        }
    }

    #[test]
    fn conjecture_terms() {
        let six = conjecture_rhs(&inputs(6, 1, 0.3)).unwrap();
        assert_eq!(six.polaron_term, 0.0);
        assert_eq!(six.total, 0.21 / 1.2 * 0.4);
        let one = conjecture_rhs(&inputs(5, 1, 0.3)).unwrap();
        let two = conjecture_rhs(&inputs(5, 2, 0.3)).unwrap();
        assert!((two.polaron_term / one.polaron_term - 4.0).abs() < 1e-12);
        assert_eq!(one.green_term, two.green_term);
        assert!(conjecture_rhs(&inputs(5, 1, 1e-12)).unwrap().total < 1e-10);
        assert!(conjecture_rhs(&inputs(5, 1, 1.0 - 1e-12)).unwrap().total < 1e-10);
        assert!(matches!(conjecture_rhs(&inputs(4, 1, 0.3)), Err(Error::DimensionTooLow(4))));
    }

    #[test]
    fn trend_on_synthetic_inverse_law() {
        let inp = inputs(5, 1, 0.3);
        let kappas = [8.0, 16.0, 32.0];
        let c = conjecture_rhs(&inp).unwrap().total;
        let lam: Vec<f64> = kappas.iter().map(|k| 0.3 + c / (10.0 * k) + 0.01 / (k * k)).collect();
        let r = conjecture_trend(&inp, &kappas, &lam).unwrap();
        assert!(r.flattening);
        assert!(r.in_band);
        let zero = ConjectureInputs { gamma: 0.0, ..inp };
        let r0 = conjecture_trend(&zero, &kappas, &[0.0; 3]).unwrap();
        assert!(r0.scaled.iter().all(|v| *v == 0.0));
        assert_eq!(r0.rhs, 0.0);
    }
}
