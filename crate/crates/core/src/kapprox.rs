//! Degenerate approximations of general kernels.
//!
//! Each kernel entry is interpolated on a tensor grid of Chebyshev extrema,
//! `K_ab(t, τ) ≈ Σ_{p,q ≤ N} c^{ab}_{pq} T_p(t̄) T_q(τ̄)`, and regrouped as
//! `φ_p(t) = T_p(t̄) I`, `(ψ_p(τ))_ab = Σ_q c^{ab}_{pq} T_q(τ̄)`, so the rank
//! is `N + 1` whatever the dimension.
//!
//! The defect `max_t ∫ ||K(t, τ) - Σ φ_j(t) ψ_j(τ)|| dτ` is measured on a
//! grid; it is an estimate, not a bound.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::densela::Matrix;
use crate::error::{Error, Result};
use crate::model::{DegenerateKernel, KernelFn, MatrixFn};
use crate::odequad::{simpson_weights, SubintervalMesh};

/// Resolution used to measure the approximation defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpsilonGrid {
    /// Number of `t` samples, endpoints included.
    pub t_points: usize,
    /// Simpson steps in `τ` (even).
    pub tau_steps: usize,
}

impl Default for EpsilonGrid {
    fn default() -> Self {
        EpsilonGrid {
            t_points: 256,
            tau_steps: 256,
        }
    }
}

impl EpsilonGrid {
    pub fn doubled(&self) -> EpsilonGrid {
        EpsilonGrid {
            t_points: 2 * self.t_points - 1,
            tau_steps: 2 * self.tau_steps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApproximationReport {
    pub kernel: DegenerateKernel,
    /// Measured defect.
    pub epsilon: f64,
    pub degree: usize,
    pub sample_grid: EpsilonGrid,
}

/// `T_0(x) … T_N(x)` by the three-term recurrence.
pub fn chebyshev_values(x: f64, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    out.push(1.0);
    if degree >= 1 {
        out.push(x);
    }
    for p in 2..=degree {
        let next = 2.0 * x * out[p - 1] - out[p - 2];
        out.push(next);
    }
    out
}

/// Chebyshev extrema `cos(π l / N)`, `l = 0..=N`; the midpoint for `N = 0`.
pub fn chebyshev_nodes(degree: usize) -> Vec<f64> {
    if degree == 0 {
        return vec![0.0];
    }
    (0..=degree)
        .map(|l| (PI * l as f64 / degree as f64).cos())
        .collect()
}

fn to_unit(t: f64, horizon: f64) -> f64 {
    (2.0 * t / horizon - 1.0).clamp(-1.0, 1.0)
}

/// Coefficients `c[a][b][p][q]` of the tensor interpolant.
fn coefficients(k: &KernelFn, degree: usize, horizon: f64, n: usize) -> Result<Vec<f64>> {
    let nodes = chebyshev_nodes(degree);
    let len = nodes.len();
    let samples: Vec<Matrix> = (0..len * len)
        .into_par_iter()
        .map(|idx| {
            let (l, s) = (idx / len, idx % len);
            let t = 0.5 * horizon * (nodes[l] + 1.0);
            let tau = 0.5 * horizon * (nodes[s] + 1.0);
            k.eval(t, tau)
        })
        .collect::<Result<_>>()?;
    for m in &samples {
        if m.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "kernel returned {}x{}, expected {n}x{n}",
                m.rows(),
                m.cols()
            )));
        }
    }

    let mut c = vec![0.0; n * n * len * len];
    let at = |a: usize, b: usize, p: usize, q: usize| ((a * n + b) * len + p) * len + q;
    if degree == 0 {
        for a in 0..n {
            for b in 0..n {
                c[at(a, b, 0, 0)] = samples[0][(a, b)];
            }
        }
        return Ok(c);
    }

    // discrete cosine transform on the extrema grid
    let nd = degree as f64;
    let end_half = |i: usize| if i == 0 || i == degree { 0.5 } else { 1.0 };
    let basis: Vec<Vec<f64>> = nodes.iter().map(|&x| chebyshev_values(x, degree)).collect();
    for a in 0..n {
        for b in 0..n {
            for p in 0..len {
                for q in 0..len {
                    let mut acc = 0.0;
                    for l in 0..len {
                        let wl = end_half(l) * basis[l][p];
                        for s in 0..len {
                            acc += wl * end_half(s) * basis[s][q] * samples[l * len + s][(a, b)];
                        }
                    }
                    c[at(a, b, p, q)] = acc * (2.0 / nd) * (2.0 / nd) * end_half(p) * end_half(q);
                }
            }
        }
    }
    Ok(c)
}

/// Chebyshev tensor interpolation of `k` on `[0, T]^2` with `degree + 1`
/// nodes per axis; the defect is measured with [`estimate_epsilon`] on the
/// default grid.
pub fn build_degenerate_approx(k: &KernelFn, degree: usize, horizon: f64, n: usize) -> Result<ApproximationReport> {
    build_degenerate_approx_on(k, degree, horizon, n, EpsilonGrid::default())
}

pub fn build_degenerate_approx_on(
    k: &KernelFn,
    degree: usize,
    horizon: f64,
    n: usize,
    grid: EpsilonGrid,
) -> Result<ApproximationReport> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidProblem(format!("horizon must be positive, got {horizon}")));
    }
    let len = degree + 1;
    let c: Arc<Vec<f64>> = Arc::new(coefficients(k, degree, horizon, n)?);

    let phi = (0..len)
        .map(|p| {
            MatrixFn::new(n, n, move |t| {
                let tp = chebyshev_values(to_unit(t, horizon), degree)[p];
                Matrix::identity(n).scale(tp)
            })
        })
        .collect();
    let psi = (0..len)
        .map(|p| {
            let c = Arc::clone(&c);
            MatrixFn::new(n, n, move |tau| {
                let tq = chebyshev_values(to_unit(tau, horizon), degree);
                Matrix::from_fn(n, n, |a, b| {
                    let base = ((a * n + b) * len + p) * len;
                    c[base..base + len].iter().zip(&tq).map(|(c, t)| c * t).sum()
                })
            })
        })
        .collect();
    let kernel = DegenerateKernel::new(phi, psi)?;
    let epsilon = estimate_epsilon(k, &kernel, horizon, grid)?;
    Ok(ApproximationReport {
        kernel,
        epsilon,
        degree,
        sample_grid: grid,
    })
}

/// `max_t ∫_0^T ||K(t, τ) - Σ_j φ_j(t) ψ_j(τ)|| dτ` over a uniform `t` grid,
/// the integral by composite Simpson.
pub fn estimate_epsilon(k: &KernelFn, dk: &DegenerateKernel, horizon: f64, grid: EpsilonGrid) -> Result<f64> {
    if grid.t_points < 2 {
        return Err(Error::InvalidMesh("need at least two t samples".into()));
    }
    let mesh = SubintervalMesh::new(0.0, horizon, grid.tau_steps)?;
    let w = simpson_weights(&mesh);
    let taus: Vec<f64> = mesh.nodes().collect();
    let psi: Vec<Vec<Matrix>> = dk
        .psi
        .iter()
        .map(|psi| taus.iter().map(|&tau| psi.eval(tau)).collect())
        .collect::<Result<_>>()?;

    let per_t: Vec<f64> = (0..grid.t_points)
        .into_par_iter()
        .map(|i| {
            let t = if i + 1 == grid.t_points {
                horizon
            } else {
                horizon * i as f64 / (grid.t_points - 1) as f64
            };
            let phi: Vec<Matrix> = dk.phi.iter().map(|f| f.eval(t)).collect::<Result<_>>()?;
            let mut acc = 0.0;
            for (s, (&tau, wi)) in taus.iter().zip(&w).enumerate() {
                let mut diff = k.eval(t, tau)?;
                for (ph, ps) in phi.iter().zip(&psi) {
                    diff -= &(ph * &ps[s]);
                }
                acc += wi * diff.max_norm();
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(per_t.into_iter().fold(0.0, f64::max))
}
