//! Fixed-point iteration for general kernels.
//!
//! The kernel is replaced by a degenerate approximation `Σ φ_j ψ_j` with
//! measured defect `ε`. Starting from the solution of the approximating
//! problem, each step re-solves it with the forcing
//!
//! ```text
//! f(t) + ∫_0^T [K(t, τ) - Σ φ_j(t) ψ_j(τ)] x^{(i-1)}(τ) dτ
//! ```
//!
//! The map contracts when `q = C_k ε < 1`, where `C_k` is the
//! well-posedness constant of the approximating problem; `q` is evaluated
//! with a safety factor of 1.25 because `ε` is only measured. Tables and the
//! factored parameter system are built once and reused by every step.

use crate::degsolve::{PreparedProblem, SolveOptions};
use crate::densela::Matrix;
use crate::error::{Error, Result};
use crate::kapprox::{build_degenerate_approx_on, ApproximationReport, EpsilonGrid};
use crate::model::{Kernel, KernelFn, MatrixFn, Problem, Solution};
use crate::odequad::simpson_weights;

/// Safety factor applied to the measured defect.
pub const SAFETY: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct IterOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub solve: SolveOptions,
    pub epsilon_grid: EpsilonGrid,
}

impl Default for IterOptions {
    fn default() -> Self {
        IterOptions {
            tol: 1e-10,
            max_iter: 50,
            solve: SolveOptions::default(),
            epsilon_grid: EpsilonGrid::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationTrace {
    /// `x^(0), x^(1), …`.
    pub iterates: Vec<Solution>,
    /// `deltas[i - 1] = ||x^(i) - x^(i-1)||`, sup norm over the grid.
    pub deltas: Vec<f64>,
    /// `1.25 C_k ε`.
    pub q_estimate: f64,
    pub c_k: f64,
    pub epsilon: f64,
    pub converged: bool,
    /// Error bound at each recorded step, starting with step 0.
    pub bound_history: Vec<f64>,
    /// `max(||f||, ||d||)`.
    pub norm_fd: f64,
}

impl IterationTrace {
    /// `||x^(i) - x^(i-1)||` for `i ≥ 1`.
    pub fn delta(&self, i: usize) -> Option<f64> {
        i.checked_sub(1).and_then(|j| self.deltas.get(j).copied())
    }

    pub fn steps(&self) -> usize {
        self.iterates.len().saturating_sub(1)
    }
}

/// `q^i C_k max(||f||, ||d||) / (1 - q)`.
pub fn error_bound(trace: &IterationTrace, i: usize, norm_fd: f64) -> Result<f64> {
    bound(trace.q_estimate, trace.c_k, trace.epsilon, i, norm_fd)
}

fn bound(q: f64, c_k: f64, epsilon: f64, i: usize, norm_fd: f64) -> Result<f64> {
    if !(q < 1.0) {
        return Err(Error::ContractionFailed { q, c_k, epsilon });
    }
    Ok(q.powi(i as i32) * c_k * norm_fd / (1.0 - q))
}

/// `max(||f||, ||d||)` with `||f||` sampled on the partition meshes.
pub fn data_norm(p: &Problem, sol: &Solution) -> Result<f64> {
    let mut norm = p.condition.d.max_norm();
    for mesh in &sol.partition.meshes {
        for t in mesh.nodes() {
            norm = norm.max(p.f.eval(t)?.max_norm());
        }
    }
    Ok(norm)
}

fn kernel_fn(p: &Problem) -> KernelFn {
    match &p.kernel {
        Kernel::General(k) => k.clone(),
        Kernel::Degenerate(dk) => {
            let dk = dk.clone();
            KernelFn::try_new(p.n, move |t, tau| dk.eval(t, tau))
        }
    }
}

/// `t ↦ f(t) + Σ_s w_s K(t, τ_s) x(τ_s) - Σ_j φ_j(t) ∫ ψ_j x`, the integral
/// over the stored grid of `x`.
fn corrected_forcing(p: &Problem, k: &KernelFn, approx: &ApproximationReport, x: &Solution) -> Result<MatrixFn> {
    let mut nodes: Vec<(f64, f64, Matrix)> = Vec::new();
    for g in &x.grid {
        let w = simpson_weights(&g.mesh);
        for ((tau, v), wi) in g.iter().zip(w) {
            nodes.push((tau, wi, v.clone()));
        }
    }
    let moments: Vec<Matrix> = approx
        .kernel
        .psi
        .iter()
        .map(|psi| {
            let mut acc = Matrix::zeros(p.n, 1);
            for (tau, wi, v) in &nodes {
                acc.axpy(*wi, &(&psi.eval(*tau)? * v));
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let f = p.f.clone();
    let k = k.clone();
    let phi = approx.kernel.phi.clone();
    Ok(MatrixFn::try_new(p.n, 1, move |t| {
        let mut out = f.eval(t)?;
        for (tau, wi, v) in &nodes {
            out.axpy(*wi, &(&k.eval(t, *tau)? * v));
        }
        for (ph, mom) in phi.iter().zip(&moments) {
            out -= &(&ph.eval(t)? * mom);
        }
        Ok(out)
    }))
}

/// Solves a general-kernel problem by iterating on a degree-`degree`
/// Chebyshev approximation of its kernel.
///
/// Fails with `ContractionFailed` before iterating when `1.25 C_k ε ≥ 1`,
/// and with `NoConvergence` when `max_iter` steps do not bring the update
/// below `tol`.
pub fn solve_nondegenerate(p: &Problem, degree: usize, opts: &IterOptions) -> Result<(Solution, IterationTrace)> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidProblem(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let k = kernel_fn(p);
    let approx = build_degenerate_approx_on(&k, degree, p.horizon, p.n, opts.epsilon_grid)?;
    let approx_problem = p.with_kernel(Kernel::Degenerate(approx.kernel.clone()));
    let prepared = PreparedProblem::new(&approx_problem, &opts.solve)?;
    let c_k = prepared
        .wellposedness
        .as_ref()
        .map(|w| w.n_constant)
        .ok_or(Error::NotWellPosed)?;
    let epsilon = approx.epsilon;
    let q = SAFETY * c_k * epsilon;
    if !(q < 1.0) {
        return Err(Error::ContractionFailed { q, c_k, epsilon });
    }

    let x0 = prepared.solve()?;
    let norm_fd = data_norm(p, &x0)?;
    let mut trace = IterationTrace {
        iterates: vec![x0],
        deltas: Vec::new(),
        q_estimate: q,
        c_k,
        epsilon,
        converged: false,
        bound_history: vec![bound(q, c_k, epsilon, 0, norm_fd)?],
        norm_fd,
    };

    for i in 1..=opts.max_iter {
        let prev = trace.iterates.last().expect("step 0 recorded");
        let forcing = corrected_forcing(p, &k, &approx, prev)?;
        let next = prepared.solve_with_forcing(&forcing)?;
        let delta = next.sup_distance(prev);
        trace.deltas.push(delta);
        trace.bound_history.push(bound(q, c_k, epsilon, i, norm_fd)?);
        trace.iterates.push(next);
        if delta <= opts.tol {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        return Err(Error::NoConvergence {
            iterations: opts.max_iter,
            delta: trace.deltas.last().copied().unwrap_or(f64::NAN),
        });
    }
    let sol = trace.iterates.last().expect("nonempty").clone();
    Ok((sol, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densela::Vector;
    use crate::model::{MeshPolicy, MultipointCondition};

    fn exp_problem(scale: f64) -> Problem {
        // x* ≡ 1, A ≡ 0, K = s e^{tτ}, x(0) = 1
        let f = MatrixFn::scalar(move |t| if t == 0.0 { -scale } else { -scale * (t.exp() - 1.0) / t });
        Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::General(KernelFn::scalar(move |t, tau| scale * (t * tau).exp())),
            f,
            MultipointCondition::new(
                vec![0.0, 1.0],
                vec![Matrix::scalar(1.0), Matrix::scalar(0.0)],
                Vector::new(vec![1.0]).unwrap(),
            ),
        )
    }

    fn trace_for(q: f64) -> IterationTrace {
        IterationTrace {
            iterates: vec![],
            deltas: vec![],
            q_estimate: q,
            c_k: 2.0,
            epsilon: q / 2.0,
            converged: true,
            bound_history: vec![],
            norm_fd: 1.0,
        }
    }

    #[test]
    fn error_bound_examples() {
        assert_eq!(error_bound(&trace_for(0.5), 3, 1.0).unwrap(), 0.5);
        assert_eq!(error_bound(&trace_for(0.5), 0, 1.0).unwrap(), 4.0);
        assert!(matches!(
            error_bound(&trace_for(1.0), 1, 1.0),
            Err(Error::ContractionFailed { .. })
        ));
    }

    #[test]
    fn separable_kernel_converges_at_first_step() {
        let p = Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::General(KernelFn::scalar(|t, tau| t * tau)),
            MatrixFn::scalar(|t| 1.0 - t / 3.0),
            MultipointCondition::new(
                vec![0.0, 1.0],
                vec![Matrix::scalar(1.0), Matrix::scalar(0.0)],
                Vector::new(vec![0.0]).unwrap(),
            ),
        );
        let (sol, trace) = solve_nondegenerate(&p, 1, &IterOptions::default()).unwrap();
        assert!(trace.epsilon < 1e-12);
        assert_eq!(trace.steps(), 1);
        assert!(trace.delta(1).unwrap() <= 1e-10);
        assert!(sol.max_error(&MatrixFn::scalar(|t| t)).unwrap() < 1e-10);
    }

    #[test]
    fn exponential_kernel_converges() {
        let p = exp_problem(1.0);
        let (sol, trace) = solve_nondegenerate(&p, 6, &IterOptions::default()).unwrap();
        assert!(trace.q_estimate < 1.0);
        assert!(trace.steps() <= 10);
        assert!(sol.max_error(&MatrixFn::scalar(|_| 1.0)).unwrap() <= 1e-6);
        for i in 2..=trace.steps() {
            let (a, b) = (trace.delta(i).unwrap(), trace.delta(i - 1).unwrap());
            assert!(a <= trace.q_estimate * b * 1.1, "step {i}: {a} vs {b}");
        }
    }

    #[test]
    fn large_amplitude_fails_contraction() {
        let p = exp_problem(40.0).with_kernel(Kernel::General(KernelFn::scalar(|t, tau| 40.0 * (5.0 * t * tau).sin())));
        let err = solve_nondegenerate(&p, 0, &IterOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ContractionFailed { q, .. } if q >= 1.0), "{err:?}");
    }

    #[test]
    fn iteration_limit_is_reported() {
        let opts = IterOptions {
            tol: 1e-300,
            max_iter: 2,
            solve: SolveOptions {
                mesh: Some(MeshPolicy::Steps(16)),
                ..Default::default()
            },
            ..Default::default()
        };
        let err = solve_nondegenerate(&exp_problem(1.0), 3, &opts).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 2, .. }), "{err:?}");
    }
}
