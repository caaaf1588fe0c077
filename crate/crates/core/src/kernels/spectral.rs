//! Principal Dirichlet eigenvalue of `kappa * Laplacian` on a lattice box.

use crate::error::{Error, Result};

/// Axis-aligned box of `sides[0] × … × sides[d-1]` sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoxRegion {
    pub sides: Vec<usize>,
}

impl BoxRegion {
    pub fn new(sides: Vec<usize>) -> Self {
        BoxRegion { sides }
    }

    pub fn cube(side: usize, dim: usize) -> Self {
        BoxRegion { sides: vec![side; dim] }
    }

    pub fn singleton(dim: usize) -> Self {
        Self::cube(1, dim)
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn site_count(&self) -> usize {
        if self.sides.is_empty() {
            0
        } else {
            self.sides.iter().product()
        }
    }

    /// The eigenvalue from the discrete sine basis:
    /// `-2κ Σ_i (1 - cos(π/(n_i+1)))`.
    pub fn closed_form_eigenvalue(&self, kappa: f64) -> f64 {
        let pi = std::f64::consts::PI;
        -2.0 * kappa * self.sides.iter().map(|&n| 1.0 - (pi / (n as f64 + 1.0)).cos()).sum::<f64>()
    }
}

/// `(Δ_Q f)(x) = Σ_{|y-x|=1} f(y) - 2d f(x)`, with `f = 0` off the box.
fn apply_laplacian(q: &BoxRegion, f: &[f64], out: &mut [f64]) {
    let d = q.dim();
    let mut strides = vec![1usize; d];
    for a in 1..d {
        strides[a] = strides[a - 1] * q.sides[a - 1];
    }
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = -2.0 * d as f64 * f[i];
        for a in 0..d {
            let coord = (i / strides[a]) % q.sides[a];
            if coord > 0 {
                acc += f[i - strides[a]];
            }
            if coord + 1 < q.sides[a] {
                acc += f[i + strides[a]];
            }
        }
        *o = acc;
    }
}

/// Largest eigenvalue `λ^κ(Q) ≤ 0` of `κΔ` on `Q` with Dirichlet boundary.
///
/// Power iteration on `I + cκΔ_Q` with `c = 1/(4dκ)`, whose spectrum lies
/// in `[0, 1)`, started from the constant vector. The returned value is the
/// Rayleigh quotient of `κΔ_Q`.
pub fn dirichlet_eigenvalue(q: &BoxRegion, kappa: f64) -> Result<f64> {
    let n = q.site_count();
    if n == 0 {
        return Err(Error::EmptyBox);
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa {kappa} must be non-negative")));
    }
    let d = q.dim() as f64;
    if kappa == 0.0 {
        return Ok(0.0);
    }
    if n == 1 {
        return Ok(-2.0 * d * kappa);
    }
    let c = 1.0 / (4.0 * d);
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lv = vec![0.0; n];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..5_000_000 {
        apply_laplacian(q, &v, &mut lv);
        let rq: f64 = v.iter().zip(&lv).map(|(a, b)| a * b).sum();
        if (rq - prev).abs() < 1e-10 / kappa.max(1.0) * 1e-2 {
            return Ok(kappa * rq);
        }
        prev = rq;
        let mut norm = 0.0;
        for (x, l) in v.iter_mut().zip(&lv) {
            *x += c * l;
            norm += *x * *x;
        }
        let norm = norm.sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    Err(Error::NonConvergent)
}
