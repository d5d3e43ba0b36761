//! Independent checks: residuals of a candidate solution in the original
//! equation, a closed-form solver for rank-one constant-coefficient scalar
//! problems, and a fundamental-matrix assembly of `G` and `V`.

use crate::densela::{invert, Matrix, Vector};
use crate::error::{Error, Result};
use crate::model::{Diagnostics, MeshPolicy, Partition, Problem, Solution};
use crate::odequad::{rk4_ivp, simpson_fn, simpson_weights, GridFunction, SubintervalMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    /// `max ||x' - A x - ∫ K x - f||` over the grid nodes.
    pub ode_residual: f64,
    /// `||Σ B_i x(t_i) - d||`.
    pub boundary_residual: f64,
    pub probe_count: usize,
}

/// Derivative at node `i` by five-point differences (three-point on meshes
/// with fewer than four steps).
fn derivative(values: &[Matrix], i: usize, h: f64) -> Matrix {
    let s = values.len() - 1;
    let combo = |coeffs: &[(usize, f64)], denom: f64| {
        let mut acc = Matrix::zeros(values[0].rows(), values[0].cols());
        for &(j, c) in coeffs {
            acc.axpy(c / denom, &values[j]);
        }
        acc
    };
    if s < 4 {
        return match i {
            0 => combo(&[(0, -3.0), (1, 4.0), (2, -1.0)], 2.0 * h),
            _ if i == s => combo(&[(s, 3.0), (s - 1, -4.0), (s - 2, 1.0)], 2.0 * h),
            _ => combo(&[(i + 1, 1.0), (i - 1, -1.0)], 2.0 * h),
        };
    }
    let d = 12.0 * h;
    match i {
        0 => combo(&[(0, -25.0), (1, 48.0), (2, -36.0), (3, 16.0), (4, -3.0)], d),
        1 => combo(&[(0, -3.0), (1, -10.0), (2, 18.0), (3, -6.0), (4, 1.0)], d),
        _ if i == s => combo(
            &[(s, 25.0), (s - 1, -48.0), (s - 2, 36.0), (s - 3, -16.0), (s - 4, 3.0)],
            d,
        ),
        _ if i == s - 1 => combo(
            &[(s, 3.0), (s - 1, 10.0), (s - 2, -18.0), (s - 3, 6.0), (s - 4, -1.0)],
            d,
        ),
        _ => combo(&[(i - 2, 1.0), (i - 1, -8.0), (i + 1, 8.0), (i + 2, -1.0)], d),
    }
}

/// Residuals of `s` in the original problem; the integral term is the
/// composite Simpson sum over the solution's own grid.
pub fn residual(p: &Problem, s: &Solution) -> Result<ResidualReport> {
    let mut quad: Vec<(f64, f64, &Matrix)> = Vec::new();
    for g in &s.grid {
        let w = simpson_weights(&g.mesh);
        for ((tau, v), wi) in g.iter().zip(w) {
            quad.push((tau, wi, v));
        }
    }

    let mut ode: f64 = 0.0;
    let mut probes = 0;
    for g in &s.grid {
        let h = g.mesh.h();
        for (i, (t, x)) in g.iter().enumerate() {
            let mut r = derivative(&g.values, i, h);
            r -= &(&p.a.eval(t)? * x);
            r -= &p.f.eval(t)?;
            for (tau, wi, v) in &quad {
                r.axpy(-wi, &(&p.kernel.eval(t, *tau)? * *v));
            }
            ode = ode.max(r.max_norm());
            probes += 1;
        }
    }

    let mut bres = -&p.condition.d;
    for (idx, x) in s.partition.condition_index.iter().zip(s.partition_values()) {
        if let Some(i) = idx {
            bres.axpy(1.0, &p.condition.b[*i].mul_vec(&x));
        }
    }
    Ok(ResidualReport {
        ode_residual: ode,
        boundary_residual: bres.max_norm(),
        probe_count: probes,
    })
}

/// Panels used for the forcing convolutions.
pub const CLOSED_FORM_PANELS: usize = 4096;

fn scalar_at(f: &crate::model::MatrixFn, t: f64) -> Result<f64> {
    Ok(f.eval(t)?[(0, 0)])
}

/// `(e^{a t} - 1) / a`, or `t` when `a = 0`.
fn e1(a: f64, t: f64) -> f64 {
    if a == 0.0 {
        t
    } else {
        (a * t).exp_m1() / a
    }
}

/// Exact solution of a scalar problem with constant `a` and constant rank-one
/// kernel `κ = φ ψ`, sampled on the partition built from `policy`.
///
/// With `μ = ∫ x`, every solution has the form
/// `x(t) = λ e^{at} + κ μ e1(t) + w(t)`, `w(t) = ∫_0^t e^{a(t-s)} f(s) ds`;
/// integrating it and imposing the condition gives a 2x2 system for
/// `(λ, μ)`. A singular system means `NoUniqueSolution`.
pub fn rank1_closed_form(p: &Problem, policy: MeshPolicy) -> Result<Solution> {
    if p.n != 1 {
        return Err(Error::InvalidProblem("closed form needs a scalar problem".into()));
    }
    let dk = p
        .kernel
        .as_degenerate()
        .filter(|dk| dk.rank() == 1)
        .ok_or_else(|| Error::InvalidProblem("closed form needs a rank-one kernel".into()))?;
    let horizon = p.horizon;
    let probe: Vec<f64> = (0..=8).map(|i| horizon * i as f64 / 8.0).collect();
    let constant = |f: &crate::model::MatrixFn, what: &str| -> Result<f64> {
        let v = scalar_at(f, 0.0)?;
        for &t in &probe {
            if scalar_at(f, t)? != v {
                return Err(Error::InvalidProblem(format!("closed form needs constant {what}")));
            }
        }
        Ok(v)
    };
    let a = constant(&p.a, "A")?;
    let kappa = constant(&dk.phi[0], "phi")? * constant(&dk.psi[0], "psi")?;
    let psi_c = constant(&dk.psi[0], "psi")?;

    let w = |t: f64| -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let v = simpson_fn(
            |s| Ok(Matrix::scalar((a * (t - s)).exp() * scalar_at(&p.f, s)?)),
            0.0,
            t,
            CLOSED_FORM_PANELS,
        )?;
        Ok(v[(0, 0)])
    };
    // ∫_0^T w = ∫_0^T f(s) e1(T - s) ds
    let big_w = simpson_fn(
        |s| Ok(Matrix::scalar(scalar_at(&p.f, s)? * e1(a, horizon - s))),
        0.0,
        horizon,
        CLOSED_FORM_PANELS,
    )?[(0, 0)];
    let e0 = e1(a, horizon);
    let big_e1 = if a == 0.0 {
        horizon * horizon / 2.0
    } else {
        (e1(a, horizon) - horizon) / a
    };

    // λ (-E0) + μ (1 - κ E1) = W
    // λ Σ B_i e^{a t_i} + μ κ Σ B_i e1(t_i) = d - Σ B_i w(t_i)
    let (mut s_exp, mut s_e1, mut s_w) = (0.0, 0.0, 0.0);
    for (t, b) in p.condition.points.iter().zip(&p.condition.b) {
        let b = b[(0, 0)];
        s_exp += b * (a * t).exp();
        s_e1 += b * e1(a, *t);
        s_w += b * w(*t)?;
    }
    let m = [[-e0, 1.0 - kappa * big_e1], [s_exp, kappa * s_e1]];
    let rhs = [big_w, p.condition.d[0] - s_w];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if det.abs() <= 1e-12 * scale * scale {
        return Err(Error::NoUniqueSolution);
    }
    let lambda = (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det;
    let mu = (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det;

    let x = |t: f64| -> Result<Matrix> { Ok(Matrix::scalar(lambda * (a * t).exp() + kappa * mu * e1(a, t) + w(t)?)) };
    let partition = Partition::from_condition(&p.condition, policy)?;
    let grid = partition
        .meshes
        .iter()
        .map(|mesh| GridFunction::sample(*mesh, x))
        .collect::<Result<Vec<_>>>()?;
    let lambdas: Vec<Vector> = grid.iter().map(|g| g.first().to_vector()).collect();
    // moment of u = x - λ_r, matching the solver's μ
    let mut moment = mu;
    for (mesh, lam) in partition.meshes.iter().zip(&lambdas) {
        moment -= lam[0] * mesh.len();
    }
    let mut sol = Solution {
        partition,
        lambda: lambdas,
        mu: vec![Vector::new(vec![psi_c * moment])?],
        grid,
        diagnostics: Diagnostics {
            regular: true,
            refinements: 0,
            norm_inv_i_minus_g: f64::NAN,
            boundary_residual: 0.0,
            continuity_residual: 0.0,
            wellposedness: None,
        },
    };
    sol.diagnostics.boundary_residual = residual(p, &sol)?.boundary_residual;
    Ok(sol)
}

/// `G` and `V` assembled from fundamental matrices.
#[derive(Debug, Clone)]
pub struct FundamentalTables {
    pub g: Matrix,
    /// `V_{p,r}`, indexed `[p][r]`.
    pub v: Vec<Vec<Matrix>>,
}

/// Assembles `G` and `V` from `X_r(τ) ∫_{t_{r-1}}^τ X_r^{-1} P`, where `X_r`
/// is the fundamental matrix of `x' = A x` with `X_r(t_{r-1}) = seeds[r]`.
///
/// `X_r` is integrated on a doubled mesh so the inner integral can be
/// accumulated panel by panel with Simpson's rule. Any invertible seeds give
/// the same tables up to discretization error.
pub fn fundamental_tables(p: &Problem, part: &Partition, seeds: &[Matrix]) -> Result<FundamentalTables> {
    let dk = p
        .kernel
        .as_degenerate()
        .ok_or_else(|| Error::InvalidProblem("this step needs a degenerate kernel".into()))?;
    if seeds.len() != part.len() {
        return Err(Error::Shape(format!("{} seeds for {} subintervals", seeds.len(), part.len())));
    }
    let (n, k, m) = (p.n, dk.rank(), part.len());
    let zero = |_| Ok(Matrix::zeros(n, n));

    // hat[p][r][j] for P = φ_j, and hat_a[p][r] for P = A; psi_int[p][r] = ∫_r ψ_p
    let mut hat = vec![vec![Vec::new(); m]; k];
    let mut hat_a = vec![vec![Matrix::zeros(n, n); m]; k];
    let mut psi_int = vec![vec![Matrix::zeros(n, n); m]; k];
    for (r, (mesh, seed)) in part.meshes.iter().zip(seeds).enumerate() {
        let fine = mesh.halved();
        let x = rk4_ivp(p.a.as_fn(), zero, &fine, seed)?;
        let x_inv: Vec<Matrix> = x.values.iter().map(invert).collect::<Result<_>>()?;
        let w = simpson_weights(mesh);
        let psi: Vec<Vec<Matrix>> = dk
            .psi
            .iter()
            .map(|ps| mesh.nodes().map(|t| ps.eval(t)).collect())
            .collect::<Result<_>>()?;

        let propagate = |pf: &dyn Fn(f64) -> Result<Matrix>| -> Result<Vec<Matrix>> {
            let g: Vec<Matrix> = fine
                .nodes()
                .zip(&x_inv)
                .map(|(t, xi)| Ok(xi * &pf(t)?))
                .collect::<Result<_>>()?;
            let h = mesh.h();
            let mut acc = Matrix::zeros(n, n);
            let mut out = vec![&x.values[0] * &acc];
            for i in 0..mesh.steps() {
                let mut panel = g[2 * i].clone();
                panel.axpy(4.0, &g[2 * i + 1]);
                panel += &g[2 * i + 2];
                acc.axpy(h / 6.0, &panel);
                out.push(&x.values[2 * i + 2] * &acc);
            }
            Ok(out)
        };
        let weighted = |ps: &[Matrix], e: &[Matrix]| {
            let mut acc = Matrix::zeros(n, n);
            for ((a, b), wi) in ps.iter().zip(e).zip(&w) {
                acc.axpy(*wi, &(a * b));
            }
            acc
        };

        let e_phi: Vec<Vec<Matrix>> = dk
            .phi
            .iter()
            .map(|phi| propagate(&|t| phi.eval(t)))
            .collect::<Result<_>>()?;
        let e_a = propagate(&|t| p.a.eval(t))?;
        for pi in 0..k {
            hat[pi][r] = e_phi.iter().map(|e| weighted(&psi[pi], e)).collect();
            hat_a[pi][r] = weighted(&psi[pi], &e_a);
            let mut acc = Matrix::zeros(n, n);
            for (v, wi) in psi[pi].iter().zip(&w) {
                acc.axpy(*wi, v);
            }
            psi_int[pi][r] = acc;
        }
    }

    let mut g = Matrix::zeros(n * k, n * k);
    for pi in 0..k {
        for j in 0..k {
            let mut acc = Matrix::zeros(n, n);
            for row in &hat[pi] {
                acc += &row[j];
            }
            g.set_block(pi * n, j * n, &acc);
        }
    }
    // V_{p,r} = ψ̂_{p,r}(A) + Σ_s Σ_j ψ̂_{p,s}(φ_j) ∫_r ψ_j
    let v = (0..k)
        .map(|pi| {
            (0..m)
                .map(|r| {
                    let mut acc = hat_a[pi][r].clone();
                    for s in 0..m {
                        for j in 0..k {
                            acc += &(&hat[pi][s][j] * &psi_int[j][r]);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Ok(FundamentalTables { g, v })
}

/// Uniform mesh helper for tests and examples.
pub fn uniform_mesh(left: f64, right: f64, steps: usize) -> Result<SubintervalMesh> {
    SubintervalMesh::new(left, right, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degsolve::{build_tables, solve_degenerate, SolveOptions};
    use crate::model::{DegenerateKernel, Kernel, MatrixFn, MultipointCondition};

    fn scalar(a: f64, kappa: f64, f: f64, points: Vec<f64>, b: Vec<f64>, d: f64) -> Problem {
        let dk = DegenerateKernel::new(vec![MatrixFn::scalar(move |_| kappa)], vec![MatrixFn::scalar(|_| 1.0)]).unwrap();
        Problem::new(
            MatrixFn::scalar(move |_| a),
            Kernel::Degenerate(dk),
            MatrixFn::scalar(move |_| f),
            MultipointCondition::new(
                points,
                b.into_iter().map(Matrix::scalar).collect(),
                Vector::new(vec![d]).unwrap(),
            ),
        )
    }

    fn worked() -> Problem {
        scalar(0.0, 1.0, 0.5, vec![0.0, 1.0], vec![1.0, 1.0], 1.0)
    }

    #[test]
    fn worked_closed_form() {
        let sol = rank1_closed_form(&worked(), MeshPolicy::Steps(8)).unwrap();
        assert!(sol.lambda[0][0].abs() < 1e-14);
        assert!((sol.mu[0][0] - 0.5).abs() < 1e-14);
        assert!(sol.max_error(&MatrixFn::scalar(|t| t)).unwrap() < 1e-14);
    }

    #[test]
    fn closed_form_moments_match_solver() {
        let p = scalar(0.5, 0.3, 1.0, vec![0.0, 0.6, 1.0], vec![1.0, 1.0, 0.0], 1.0);
        let exact = rank1_closed_form(&p, MeshPolicy::Steps(64)).unwrap();
        let num = solve_degenerate(&p, &SolveOptions::with_steps(64)).unwrap();
        assert!((exact.mu[0][0] - num.mu[0][0]).abs() < 1e-9);
        for (a, b) in exact.lambda.iter().zip(&num.lambda) {
            assert!((a - b).max_norm() < 1e-9);
        }
    }

    #[test]
    fn closed_form_constant_state() {
        let p = scalar(0.0, 0.0, 0.0, vec![0.0, 2.0], vec![1.0, 0.0], 1.75);
        let sol = rank1_closed_form(&p, MeshPolicy::Steps(4)).unwrap();
        assert!(sol.max_error(&MatrixFn::scalar(|_| 1.75)).unwrap() < 1e-15);
    }

    #[test]
    fn closed_form_detects_missing_uniqueness() {
        let p = scalar(0.0, 0.0, 0.0, vec![0.0, 1.0], vec![1.0, -1.0], 1.0);
        assert_eq!(rank1_closed_form(&p, MeshPolicy::Steps(4)).unwrap_err(), Error::NoUniqueSolution);
    }

    #[test]
    fn closed_form_agrees_with_solver() {
        let cases = [
            scalar(-0.7, 0.4, 1.3, vec![0.0, 1.5], vec![1.0, 2.0], -0.5),
            scalar(1.2, -0.8, 0.2, vec![0.0, 0.4, 1.0], vec![1.0, -0.5, 0.3], 2.0),
            scalar(0.0, 0.25, -1.0, vec![0.0, 0.5, 1.2, 2.0], vec![0.0, 1.0, 0.0, 1.0], 0.7),
        ];
        for p in &cases {
            let exact = rank1_closed_form(p, MeshPolicy::Steps(32)).unwrap();
            let num = solve_degenerate(p, &SolveOptions::with_steps(32)).unwrap();
            let coarse = solve_degenerate(p, &SolveOptions::with_steps(16)).unwrap();
            let diff = exact.sup_distance(&num);
            // mesh error estimated from the change under halving at the partition points
            let mesh_error = coarse
                .partition_values()
                .iter()
                .zip(num.partition_values())
                .map(|(a, b)| (a - &b).max_norm())
                .fold(1e-13, f64::max);
            assert!(diff <= 10.0 * mesh_error, "{diff} vs {mesh_error}");
        }
    }

    #[test]
    fn worked_residuals() {
        let sol = solve_degenerate(&worked(), &SolveOptions::with_steps(8)).unwrap();
        let r = residual(&worked(), &sol).unwrap();
        assert!(r.ode_residual <= 1e-9 && r.boundary_residual <= 1e-9, "{r:?}");
        assert_eq!(r.probe_count, 9);
    }

    #[test]
    fn perturbation_shows_in_residual() {
        let mut sol = solve_degenerate(&worked(), &SolveOptions::with_steps(8)).unwrap();
        sol.grid[0].values[4][(0, 0)] += 0.1;
        assert!(residual(&worked(), &sol).unwrap().ode_residual >= 0.01);
    }

    #[test]
    fn zero_problem_has_zero_residual() {
        let p = scalar(0.0, 0.0, 0.0, vec![0.0, 1.0], vec![1.0, 1.0], 0.0);
        let sol = solve_degenerate(&p, &SolveOptions::with_steps(8)).unwrap();
        let r = residual(&p, &sol).unwrap();
        assert_eq!((r.ode_residual, r.boundary_residual), (0.0, 0.0));
    }

    #[test]
    fn derivative_is_exact_on_quartics() {
        let mesh = uniform_mesh(0.0, 1.0, 8).unwrap();
        let g = GridFunction::sample(mesh, |t| Ok(Matrix::scalar(t.powi(4) - t))).unwrap();
        for i in 0..=8 {
            let t = mesh.node(i);
            let d = derivative(&g.values, i, mesh.h())[(0, 0)];
            assert!((d - (4.0 * t.powi(3) - 1.0)).abs() < 1e-12, "{i}: {d}");
        }
    }

    #[test]
    fn fundamental_route_matches_pipeline() {
        let p = scalar(0.8, 0.6, 0.0, vec![0.0, 0.5, 1.0], vec![1.0, 0.0, 1.0], 1.0);
        let part = Partition::from_condition(&p.condition, MeshPolicy::Steps(32)).unwrap();
        let tables = build_tables(&p, &part).unwrap();
        let ones = vec![Matrix::identity(1); 2];
        let seeded = vec![Matrix::scalar(3.0), Matrix::scalar(-0.2)];
        let a = fundamental_tables(&p, &part, &ones).unwrap();
        let b = fundamental_tables(&p, &part, &seeded).unwrap();
        assert!(a.g.max_abs_diff(&b.g) < 1e-12);
        assert!(a.g.max_abs_diff(&tables.g) < 1e-8);
        for r in 0..2 {
            assert!(a.v[0][r].max_abs_diff(&tables.v[0][r]) < 1e-8);
            assert!(a.v[0][r].max_abs_diff(&b.v[0][r]) < 1e-12);
        }
    }
}
