//! Parameterization pipeline for degenerate kernels.
//!
//! The interval is split at the partition points and the unknown left
//! endpoint values `λ_r = x(t_{r-1})` become parameters. On each subinterval
//! the Cauchy problems `x' = A x + P`, `x(t_{r-1}) = 0` are integrated for
//! `P ∈ {φ_1 … φ_k, A, f}`; weighted integrals of those trajectories give the
//! matrix `G`, the blocks `V_{p,r}` and the vectors `g_p`. When `I - G` is
//! invertible (the partition is *regular*), the moments
//! `μ_j = ∫ ψ_j u` are eliminated and the continuity and boundary conditions
//! close into the linear system `Q* λ = -F*` for the parameters.
//!
//! With `λ` in hand, `μ` is recovered, the forcing
//! `F*(t) = Σ_s φ_s(t) [μ_s + Σ_r ψ̂_{s,r} λ_r] + f(t)` is formed, and
//! `x' = A x + F*(t)`, `x(t_{r-1}) = λ_r` is integrated on every subinterval.
//!
//! Every subinterval computation is independent and runs in parallel; sums
//! over subintervals are accumulated in ascending order so results do not
//! depend on scheduling.

use rayon::prelude::*;

use crate::densela::{invert, Lu, Matrix, Vector, DEFAULT_PIVOT_TOL};
use crate::error::{Error, Result};
use crate::model::{
    DegenerateKernel, Diagnostics, MatrixFn, MeshPolicy, Partition, Problem, Solution,
    WellPosedness,
};
use crate::odequad::{rk4_cauchy, rk4_ivp, simpson_weights, GridFunction, SubintervalMesh};

/// Options for [`solve_degenerate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Mesh policy; `None` means `h_max = T / (64 m)`.
    pub mesh: Option<MeshPolicy>,
    /// Midpoint refinements tried on a non-regular partition.
    pub max_refinements: usize,
    /// Compute the `Q*` perturbation certificate (costs one extra table build
    /// on a halved mesh).
    pub certify: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            mesh: None,
            max_refinements: 6,
            certify: true,
        }
    }
}

impl SolveOptions {
    pub fn with_steps(steps: usize) -> Self {
        SolveOptions {
            mesh: Some(MeshPolicy::Steps(steps)),
            ..Default::default()
        }
    }

    fn policy(&self, p: &Problem) -> MeshPolicy {
        self.mesh
            .unwrap_or_else(|| MeshPolicy::default_for(&p.condition))
    }
}

/// Quadrature tables for one partition. Indices: `p`, `j` kernel terms,
/// `r` subintervals.
#[derive(Debug, Clone)]
pub struct SpecialTables {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    /// `ψ̂_{p,r} = ∫_r ψ_p`, indexed `[p][r]`.
    pub psi_hat: Vec<Vec<Matrix>>,
    /// `ψ̂_{p,r}(φ_j) = ∫_r ψ_p E_r(A, φ_j)`, indexed `[p][r][j]`.
    pub psi_hat_phi: Vec<Vec<Vec<Matrix>>>,
    /// `ψ̂_{p,r}(A) = ∫_r ψ_p E_r(A, A)`, indexed `[p][r]`.
    pub psi_hat_a: Vec<Vec<Matrix>>,
    /// `ψ̂_{p,r}(f) = ∫_r ψ_p E_r(A, f)`, indexed `[p][r]`.
    pub psi_hat_f: Vec<Vec<Vector>>,
    /// `E_r(A, φ_j, t_r)`, indexed `[r][j]`.
    pub e_phi: Vec<Vec<Matrix>>,
    /// `E_r(A, A, t_r)`.
    pub e_a: Vec<Matrix>,
    /// `E_r(A, f, t_r)`.
    pub e_f: Vec<Vector>,
    /// `G`, `nk x nk`, block `(p, j)` is `Σ_r ψ̂_{p,r}(φ_j)`.
    pub g: Matrix,
    /// `V_{p,r}`, indexed `[p][r]`.
    pub v: Vec<Vec<Matrix>>,
    /// `g_p(f)`.
    pub g_f: Vec<Vector>,
    /// `M = (I - G)^{-1}` when the partition is regular.
    pub m_inv: Option<Matrix>,
}

impl SpecialTables {
    pub fn is_regular(&self) -> bool {
        self.m_inv.is_some()
    }

    /// `n x n` block `(p, j)` of `G`.
    pub fn g_block(&self, p: usize, j: usize) -> Matrix {
        self.g.block(p * self.n, j * self.n, self.n, self.n)
    }

    /// `n x n` block `M_{j,p}`.
    pub fn m_block(&self, j: usize, p: usize) -> Option<Matrix> {
        self.m_inv
            .as_ref()
            .map(|m| m.block(j * self.n, p * self.n, self.n, self.n))
    }
}

/// Forcing-dependent part of the tables.
#[derive(Debug, Clone)]
pub struct ForcingTables {
    pub psi_hat_f: Vec<Vec<Vector>>,
    pub e_f: Vec<Vector>,
    pub g_f: Vec<Vector>,
}

struct SubTables {
    psi_hat: Vec<Matrix>,
    psi_hat_phi: Vec<Vec<Matrix>>,
    psi_hat_a: Vec<Matrix>,
    e_phi: Vec<Matrix>,
    e_a: Matrix,
}

fn degenerate(p: &Problem) -> Result<&DegenerateKernel> {
    p.kernel
        .as_degenerate()
        .ok_or_else(|| Error::InvalidProblem("this step needs a degenerate kernel".into()))
}

fn psi_at_nodes(dk: &DegenerateKernel, mesh: &SubintervalMesh) -> Result<Vec<Vec<Matrix>>> {
    dk.psi
        .iter()
        .map(|psi| mesh.nodes().map(|t| psi.eval(t)).collect())
        .collect()
}

/// `∫ ψ(t) E(t) dt` by Simpson with precomputed `ψ` samples.
fn weighted(psi: &[Matrix], grid: &GridFunction, w: &[f64]) -> Matrix {
    let mut acc = Matrix::zeros(psi[0].rows(), grid.values[0].cols());
    for ((ps, e), wi) in psi.iter().zip(&grid.values).zip(w) {
        acc.axpy(*wi, &(ps * e));
    }
    acc
}

fn sub_tables(p: &Problem, dk: &DegenerateKernel, mesh: &SubintervalMesh) -> Result<SubTables> {
    let a = p.a.as_fn();
    let w = simpson_weights(mesh);
    let psi = psi_at_nodes(dk, mesh)?;
    let e_phi_grids = dk
        .phi
        .iter()
        .map(|phi| rk4_cauchy(&a, phi.as_fn(), mesh))
        .collect::<Result<Vec<_>>>()?;
    let e_a_grid = rk4_cauchy(&a, &a, mesh)?;

    let psi_hat = psi
        .iter()
        .map(|ps| {
            let mut acc = Matrix::zeros(p.n, p.n);
            for (m, wi) in ps.iter().zip(&w) {
                acc.axpy(*wi, m);
            }
            acc
        })
        .collect();
    let psi_hat_phi = psi
        .iter()
        .map(|ps| e_phi_grids.iter().map(|g| weighted(ps, g, &w)).collect())
        .collect();
    let psi_hat_a = psi.iter().map(|ps| weighted(ps, &e_a_grid, &w)).collect();
    Ok(SubTables {
        psi_hat,
        psi_hat_phi,
        psi_hat_a,
        e_phi: e_phi_grids.iter().map(|g| g.last().clone()).collect(),
        e_a: e_a_grid.last().clone(),
    })
}

/// The forcing-dependent tables `E_r(A, f, t_r)`, `ψ̂_{p,r}(f)` and `g_p(f)`
/// for an arbitrary forcing `f`.
pub fn forcing_tables(p: &Problem, part: &Partition, f: &MatrixFn) -> Result<ForcingTables> {
    let dk = degenerate(p)?;
    let per_sub: Vec<(Vec<Vector>, Vector)> = part
        .meshes
        .par_iter()
        .map(|mesh| {
            let w = simpson_weights(mesh);
            let psi = psi_at_nodes(dk, mesh)?;
            let grid = rk4_cauchy(p.a.as_fn(), f.as_fn(), mesh)?;
            let hats = psi
                .iter()
                .map(|ps| weighted(ps, &grid, &w).to_vector())
                .collect();
            Ok((hats, grid.last().to_vector()))
        })
        .collect::<Result<_>>()?;

    let k = dk.rank();
    let psi_hat_f: Vec<Vec<Vector>> = (0..k)
        .map(|pi| per_sub.iter().map(|(h, _)| h[pi].clone()).collect())
        .collect();
    let g_f = psi_hat_f
        .iter()
        .map(|row| {
            let mut acc = Vector::zeros(p.n);
            for v in row {
                acc.axpy(1.0, v);
            }
            acc
        })
        .collect();
    Ok(ForcingTables {
        psi_hat_f,
        e_f: per_sub.into_iter().map(|(_, e)| e).collect(),
        g_f,
    })
}

/// Integrates the subinterval Cauchy problems and assembles `G`, `V`, `g`
/// and, when `I - G` is invertible, `M = (I - G)^{-1}`.
pub fn build_tables(p: &Problem, part: &Partition) -> Result<SpecialTables> {
    let dk = degenerate(p)?;
    let (n, k, m) = (p.n, dk.rank(), part.len());
    let subs: Vec<SubTables> = part
        .meshes
        .par_iter()
        .map(|mesh| sub_tables(p, dk, mesh))
        .collect::<Result<_>>()?;
    let forcing = forcing_tables(p, part, &p.f)?;

    let psi_hat: Vec<Vec<Matrix>> = (0..k)
        .map(|pi| subs.iter().map(|s| s.psi_hat[pi].clone()).collect())
        .collect();
    let psi_hat_phi: Vec<Vec<Vec<Matrix>>> = (0..k)
        .map(|pi| subs.iter().map(|s| s.psi_hat_phi[pi].clone()).collect())
        .collect();
    let psi_hat_a: Vec<Vec<Matrix>> = (0..k)
        .map(|pi| subs.iter().map(|s| s.psi_hat_a[pi].clone()).collect())
        .collect();

    let mut g = Matrix::zeros(n * k, n * k);
    let mut g_blocks = vec![vec![Matrix::zeros(n, n); k]; k];
    for pi in 0..k {
        for j in 0..k {
            let mut acc = Matrix::zeros(n, n);
            for r in 0..m {
                acc += &psi_hat_phi[pi][r][j];
            }
            g.set_block(pi * n, j * n, &acc);
            g_blocks[pi][j] = acc;
        }
    }

    // V_{p,r} = ψ̂_{p,r}(A) + Σ_j G_{p,j} ψ̂_{j,r}
    let v = (0..k)
        .map(|pi| {
            (0..m)
                .map(|r| {
                    let mut acc = psi_hat_a[pi][r].clone();
                    for j in 0..k {
                        acc += &(&g_blocks[pi][j] * &psi_hat[j][r]);
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let m_inv = invert_i_minus(&g);

    Ok(SpecialTables {
        n,
        k,
        m,
        psi_hat,
        psi_hat_phi,
        psi_hat_a,
        psi_hat_f: forcing.psi_hat_f,
        e_phi: subs.iter().map(|s| s.e_phi.clone()).collect(),
        e_a: subs.into_iter().map(|s| s.e_a).collect(),
        e_f: forcing.e_f,
        g,
        v,
        g_f: forcing.g_f,
        m_inv,
    })
}

/// `(I - G)^{-1}`, or `None` when a pivot falls below `1e-12 (1 + ||G||)`.
///
/// The threshold is measured against the size of the terms being subtracted,
/// so cancellation in `I - G` is caught even when `I - G` itself is tiny.
fn invert_i_minus(g: &Matrix) -> Option<Matrix> {
    let i_minus_g = &Matrix::identity(g.rows()) - g;
    let scale = i_minus_g.max_norm();
    if scale == 0.0 {
        return None;
    }
    let tol = DEFAULT_PIVOT_TOL * (1.0 + g.max_norm()) / scale;
    Some(Lu::factor_with_tol(&i_minus_g, tol).ok()?.inverse())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularity {
    pub regular: bool,
    /// `||(I - G)^{-1}||` when regular.
    pub norm_inv: Option<f64>,
}

pub fn check_regularity(tables: &SpecialTables) -> Regularity {
    Regularity {
        regular: tables.is_regular(),
        norm_inv: tables.m_inv.as_ref().map(Matrix::max_norm),
    }
}

/// The linear system `Q* λ = rhs` in the parameters.
#[derive(Debug, Clone)]
pub struct ParamSystem {
    /// `D_{r,i}`, indexed `[r][i]`.
    pub d: Vec<Vec<Matrix>>,
    /// `F_r`.
    pub f: Vec<Vector>,
    pub q: Matrix,
    /// `-F*`: `d - B_m F_m` followed by `-F_1 … -F_{m-1}`.
    pub rhs: Vector,
}

/// `Σ_p M_{j,p} V_{p,i}`, indexed `[j][i]`.
fn mv_blocks(t: &SpecialTables) -> Result<Vec<Vec<Matrix>>> {
    let mut out = vec![vec![Matrix::zeros(t.n, t.n); t.m]; t.k];
    for (j, row) in out.iter_mut().enumerate() {
        for (i, cell) in row.iter_mut().enumerate() {
            for pi in 0..t.k {
                let mjp = t
                    .m_block(j, pi)
                    .ok_or(Error::NotRegular { refinements: 0 })?;
                *cell += &(&mjp * &t.v[pi][i]);
            }
        }
    }
    Ok(out)
}

/// `Σ_p M_{j,p} g_p`, indexed `[j]`.
fn mg_vectors(t: &SpecialTables, g_f: &[Vector]) -> Result<Vec<Vector>> {
    (0..t.k)
        .map(|j| {
            let mut acc = Vector::zeros(t.n);
            for (pi, gp) in g_f.iter().enumerate() {
                let mjp = t
                    .m_block(j, pi)
                    .ok_or(Error::NotRegular { refinements: 0 })?;
                acc.axpy(1.0, &mjp.mul_vec(gp));
            }
            Ok(acc)
        })
        .collect()
}

fn assemble_d(t: &SpecialTables) -> Result<Vec<Vec<Matrix>>> {
    let mv = mv_blocks(t)?;
    Ok((0..t.m)
        .map(|r| {
            (0..t.m)
                .map(|i| {
                    let mut acc = if i == r {
                        t.e_a[r].clone()
                    } else {
                        Matrix::zeros(t.n, t.n)
                    };
                    for j in 0..t.k {
                        let bracket = &mv[j][i] + &t.psi_hat[j][i];
                        acc += &(&t.e_phi[r][j] * &bracket);
                    }
                    acc
                })
                .collect()
        })
        .collect())
}

fn assemble_q(p: &Problem, part: &Partition, d: &[Vec<Matrix>]) -> Matrix {
    let n = p.n;
    let m = part.len();
    let b = part.boundary_matrices(&p.condition, n);
    let b_last = &b[m];
    let eye = Matrix::identity(n);
    let mut q = Matrix::zeros(n * m, n * m);
    for c in 0..m {
        let mut block = &b[c] + &(b_last * &d[m - 1][c]);
        if c == m - 1 {
            block += b_last;
        }
        q.set_block(0, c * n, &block);
    }
    for row in 1..m {
        let pr = row - 1;
        for c in 0..m {
            let mut block = d[pr][c].clone();
            if c == pr {
                block += &eye;
            }
            if c == pr + 1 {
                block -= &eye;
            }
            q.set_block(row * n, c * n, &block);
        }
    }
    q
}

/// `F_r` and the right-hand side `-F*` for a given set of forcing tables.
pub fn assemble_forcing(
    p: &Problem,
    part: &Partition,
    tables: &SpecialTables,
    forcing: &ForcingTables,
) -> Result<(Vec<Vector>, Vector)> {
    let n = p.n;
    let m = part.len();
    let mg = mg_vectors(tables, &forcing.g_f)?;
    let f: Vec<Vector> = (0..m)
        .map(|r| {
            let mut acc = forcing.e_f[r].clone();
            for (j, mgj) in mg.iter().enumerate() {
                acc.axpy(1.0, &tables.e_phi[r][j].mul_vec(mgj));
            }
            acc
        })
        .collect();
    let b = part.boundary_matrices(&p.condition, n);
    let mut blocks = Vec::with_capacity(m);
    blocks.push(&p.condition.d - &b[m].mul_vec(&f[m - 1]));
    for fr in &f[..m - 1] {
        blocks.push(-fr);
    }
    Ok((f, Vector::stack(&blocks)))
}

pub fn assemble_param_system(
    p: &Problem,
    part: &Partition,
    tables: &SpecialTables,
) -> Result<ParamSystem> {
    if !tables.is_regular() {
        return Err(Error::NotRegular { refinements: 0 });
    }
    let d = assemble_d(tables)?;
    let q = assemble_q(p, part, &d);
    let forcing = ForcingTables {
        psi_hat_f: tables.psi_hat_f.clone(),
        e_f: tables.e_f.clone(),
        g_f: tables.g_f.clone(),
    };
    let (f, rhs) = assemble_forcing(p, part, tables, &forcing)?;
    Ok(ParamSystem { d, f, q, rhs })
}

fn factor_q(q: &Matrix) -> Result<Lu> {
    Lu::factor(q).map_err(|e| match e {
        Error::Singular { .. } => Error::NotWellPosed,
        other => other,
    })
}

/// Solves `Q* λ = -F*`; a singular `Q*` means the problem is not well-posed.
pub fn solve_params(sys: &ParamSystem) -> Result<Vec<Vector>> {
    let m = sys.f.len();
    let lam = factor_q(&sys.q)?.solve_vector(&sys.rhs)?;
    Ok(lam.split(m))
}

/// `μ_s = Σ_j (Σ_p M_{s,p} V_{p,j}) λ_j + Σ_p M_{s,p} g_p`.
pub fn recover_mu(tables: &SpecialTables, lambda: &[Vector]) -> Result<Vec<Vector>> {
    let mv = mv_blocks(tables)?;
    recover_mu_with(tables, &mv, &tables.g_f, lambda)
}

fn recover_mu_with(
    tables: &SpecialTables,
    mv: &[Vec<Matrix>],
    g_f: &[Vector],
    lambda: &[Vector],
) -> Result<Vec<Vector>> {
    let mg = mg_vectors(tables, g_f)?;
    Ok(mg
        .into_iter()
        .enumerate()
        .map(|(s, mut acc)| {
            for (j, lam) in lambda.iter().enumerate() {
                acc.axpy(1.0, &mv[s][j].mul_vec(lam));
            }
            acc
        })
        .collect())
}

/// `F*(t) = Σ_s φ_s(t) [μ_s + Σ_r ψ̂_{s,r} λ_r] + f(t)`.
pub fn rhs_function(
    p: &Problem,
    tables: &SpecialTables,
    lambda: &[Vector],
    mu: &[Vector],
) -> Result<MatrixFn> {
    rhs_function_with(p, &p.f, tables, lambda, mu)
}

fn rhs_function_with(
    p: &Problem,
    f: &MatrixFn,
    tables: &SpecialTables,
    lambda: &[Vector],
    mu: &[Vector],
) -> Result<MatrixFn> {
    let dk = degenerate(p)?;
    let coeffs: Vec<Matrix> = mu
        .iter()
        .enumerate()
        .map(|(s, mus)| {
            let mut acc = mus.clone();
            for (r, lam) in lambda.iter().enumerate() {
                acc.axpy(1.0, &tables.psi_hat[s][r].mul_vec(lam));
            }
            Matrix::from(acc)
        })
        .collect();
    let phis = dk.phi.clone();
    let f = f.clone();
    Ok(MatrixFn::try_new(p.n, 1, move |t| {
        let mut out = f.eval(t)?;
        for (phi, c) in phis.iter().zip(&coeffs) {
            out += &(&phi.eval(t)? * c);
        }
        Ok(out)
    }))
}

/// Grid values of the reconstructed solution with its residuals.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub grid: Vec<GridFunction>,
    /// `||Σ B_i x(t_i) - d||`.
    pub boundary_residual: f64,
    /// `max_p ||λ_{p+1} - x(t_p - 0)||`.
    pub continuity_residual: f64,
}

/// Integrates `x' = A x + F*(t)`, `x(t_{r-1}) = λ_r` on every subinterval.
pub fn reconstruct(
    p: &Problem,
    part: &Partition,
    lambda: &[Vector],
    rhs: &MatrixFn,
) -> Result<Reconstruction> {
    if lambda.len() != part.len() {
        return Err(Error::Shape(format!(
            "{} parameters for {} subintervals",
            lambda.len(),
            part.len()
        )));
    }
    let grid: Vec<GridFunction> = part
        .meshes
        .par_iter()
        .zip(lambda.par_iter())
        .map(|(mesh, lam)| rk4_ivp(p.a.as_fn(), rhs.as_fn(), mesh, &Matrix::from(lam.clone())))
        .collect::<Result<_>>()?;

    let continuity_residual = (1..part.len())
        .map(|r| (&lambda[r] - &grid[r - 1].last().to_vector()).max_norm())
        .fold(0.0, f64::max);

    // x at the condition points: λ-values at interior points, x(T) at the end
    let mut values: Vec<Vector> = grid.iter().map(|g| g.first().to_vector()).collect();
    values.push(grid.last().unwrap().last().to_vector());
    let mut resid = -&p.condition.d;
    for (idx, x) in part.condition_index.iter().zip(&values) {
        if let Some(i) = idx {
            resid.axpy(1.0, &p.condition.b[*i].mul_vec(x));
        }
    }

    Ok(Reconstruction {
        grid,
        boundary_residual: resid.max_norm(),
        continuity_residual,
    })
}

/// Midpoint refinement of every subinterval.
pub fn refine_partition(part: &Partition) -> Result<Partition> {
    part.refined()
}

fn simpson_scalar(mesh: &SubintervalMesh, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let w = simpson_weights(mesh);
    let mut acc = 0.0;
    for (t, wi) in mesh.nodes().zip(&w) {
        acc += wi * f(t)?;
    }
    Ok(acc)
}

/// The well-posedness constant `N(k, Δm)` and, when `certify` is set, the
/// `Q*` perturbation certificate from one mesh halving.
///
/// The constant reads the undefined factor `||C||` as `||B_m||`, identifies
/// `γ*` with `||Q*^{-1}||`, and estimates `α = max ||A(t)||` on the mesh
/// nodes. Returns `None` when `Q*` cannot be inverted.
pub fn wellposedness_diagnostics(
    p: &Problem,
    part: &Partition,
    tables: &SpecialTables,
    sys: &ParamSystem,
    certify: bool,
) -> Option<WellPosedness> {
    let q_inv = invert(&sys.q).ok()?;
    let m_inv = tables.m_inv.as_ref()?;
    let dk = p.kernel.as_degenerate()?;

    let mut alpha = 0.0f64;
    for mesh in &part.meshes {
        for t in mesh.nodes() {
            alpha = alpha.max(p.a.eval(t).ok()?.max_norm());
        }
    }
    let omega = part.max_width();
    let mut phi_bar = 0.0f64;
    for mesh in &part.meshes {
        let v = simpson_scalar(mesh, |t| {
            let mut s = 0.0;
            for phi in &dk.phi {
                s += phi.eval(t)?.max_norm();
            }
            Ok(s)
        })
        .ok()?;
        phi_bar = phi_bar.max(v);
    }
    let mut psi_bar = 0.0f64;
    for psi in &dk.psi {
        let mut total = 0.0;
        for mesh in &part.meshes {
            total += simpson_scalar(mesh, |t| Ok(psi.eval(t)?.max_norm())).ok()?;
        }
        psi_bar = psi_bar.max(total);
    }
    let norm_m = m_inv.max_norm();
    let gamma = q_inv.max_norm();
    let c_norm = p.condition.b.last()?.max_norm();

    let ex = (alpha * omega).exp();
    let lead =
        ex * (phi_bar * (norm_m * psi_bar * (ex - 1.0 + ex * phi_bar * psi_bar) + psi_bar) + 1.0);
    let bracket = 1.0f64.max(omega * ex * (1.0 + ex * phi_bar * norm_m * psi_bar));
    let tail = ex * omega * (phi_bar * norm_m * psi_bar * ex + 1.0);
    let n_constant = lead * gamma * (1.0 + c_norm) * bracket + tail;

    let epsilon_h = if certify {
        let fine = part.halved();
        build_tables(p, &fine)
            .ok()
            .filter(SpecialTables::is_regular)
            .and_then(|t| assemble_d(&t).ok())
            .map(|d| (&sys.q - &assemble_q(p, &fine, &d)).max_norm())
    } else {
        None
    };
    let qstar_certified = epsilon_h.is_some_and(|eps| gamma * eps < 1.0);

    Some(WellPosedness {
        n_constant,
        alpha,
        omega,
        phi_bar,
        psi_bar,
        norm_inv_i_minus_g: norm_m,
        gamma,
        c_norm,
        epsilon_h,
        qstar_certified,
    })
}

/// Everything about a problem that does not depend on the forcing term:
/// a regular partition, its tables, and the factored `Q*`.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub problem: Problem,
    pub partition: Partition,
    pub tables: SpecialTables,
    pub system: ParamSystem,
    pub refinements: usize,
    pub wellposedness: Option<WellPosedness>,
    lu: Lu,
    mv: Vec<Vec<Matrix>>,
}

/// Finds a regular partition, refining at midpoints as needed.
pub fn regular_tables(
    p: &Problem,
    opts: &SolveOptions,
) -> Result<(Partition, SpecialTables, usize)> {
    let mut part = Partition::from_condition(&p.condition, opts.policy(p))?;
    let mut refinements = 0;
    loop {
        let tables = build_tables(p, &part)?;
        if tables.is_regular() {
            return Ok((part, tables, refinements));
        }
        if refinements == opts.max_refinements {
            return Err(Error::NotRegular { refinements });
        }
        part = refine_partition(&part)?;
        refinements += 1;
    }
}

impl PreparedProblem {
    pub fn new(p: &Problem, opts: &SolveOptions) -> Result<Self> {
        degenerate(p)?;
        let (partition, tables, refinements) = regular_tables(p, opts)?;
        let system = assemble_param_system(p, &partition, &tables)?;
        let lu = factor_q(&system.q)?;
        let wellposedness =
            wellposedness_diagnostics(p, &partition, &tables, &system, opts.certify);
        let mv = mv_blocks(&tables)?;
        Ok(PreparedProblem {
            problem: p.clone(),
            partition,
            tables,
            system,
            refinements,
            wellposedness,
            lu,
            mv,
        })
    }

    /// Solves the prepared problem with its own forcing.
    pub fn solve(&self) -> Result<Solution> {
        let forcing = ForcingTables {
            psi_hat_f: self.tables.psi_hat_f.clone(),
            e_f: self.tables.e_f.clone(),
            g_f: self.tables.g_f.clone(),
        };
        self.solve_tables(&self.problem.f, &forcing)
    }

    /// Solves the same problem with forcing `f` in place of the original;
    /// only the forcing tables are recomputed.
    pub fn solve_with_forcing(&self, f: &MatrixFn) -> Result<Solution> {
        let forcing = forcing_tables(&self.problem, &self.partition, f)?;
        self.solve_tables(f, &forcing)
    }

    fn solve_tables(&self, f: &MatrixFn, forcing: &ForcingTables) -> Result<Solution> {
        let p = &self.problem;
        let (_, rhs) = assemble_forcing(p, &self.partition, &self.tables, forcing)?;
        let lambda = self.lu.solve_vector(&rhs)?.split(self.partition.len());
        let mu = recover_mu_with(&self.tables, &self.mv, &forcing.g_f, &lambda)?;
        let rhs_fn = rhs_function_with(p, f, &self.tables, &lambda, &mu)?;
        let rec = reconstruct(p, &self.partition, &lambda, &rhs_fn)?;
        Ok(Solution {
            partition: self.partition.clone(),
            lambda,
            mu,
            grid: rec.grid,
            diagnostics: Diagnostics {
                regular: true,
                refinements: self.refinements,
                norm_inv_i_minus_g: self
                    .tables
                    .m_inv
                    .as_ref()
                    .map_or(f64::NAN, Matrix::max_norm),
                boundary_residual: rec.boundary_residual,
                continuity_residual: rec.continuity_residual,
                wellposedness: self.wellposedness.clone(),
            },
        })
    }
}

/// Full pipeline for a degenerate kernel: tables, regularity (with midpoint
/// refinement), parameter system, moments, reconstruction and diagnostics.
pub fn solve_degenerate(p: &Problem, opts: &SolveOptions) -> Result<Solution> {
    PreparedProblem::new(p, opts)?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Kernel, MultipointCondition};

    fn one() -> MatrixFn {
        MatrixFn::scalar(|_| 1.0)
    }

    fn rank1(scale: f64, f: f64, b0: f64, b1: f64, d: f64) -> Problem {
        let dk = DegenerateKernel::new(
            vec![MatrixFn::scalar(move |_| scale)],
            vec![MatrixFn::scalar(move |_| scale)],
        )
        .unwrap();
        Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::Degenerate(dk),
            MatrixFn::scalar(move |_| f),
            MultipointCondition::new(
                vec![0.0, 1.0],
                vec![Matrix::scalar(b0), Matrix::scalar(b1)],
                Vector::new(vec![d]).unwrap(),
            ),
        )
    }

    fn worked() -> Problem {
        rank1(1.0, 0.5, 1.0, 1.0, 1.0)
    }

    fn single(p: &Problem, steps: usize) -> Partition {
        Partition::from_condition(&p.condition, MeshPolicy::Steps(steps)).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn worked_tables() {
        let p = worked();
        let t = build_tables(&p, &single(&p, 8)).unwrap();
        assert!(close(t.g[(0, 0)], 0.5));
        assert!(close(t.m_inv.as_ref().unwrap()[(0, 0)], 2.0));
        assert!(close(t.g_f[0][0], 0.25));
        assert!(close(t.v[0][0][(0, 0)], 0.5));
        let reg = check_regularity(&t);
        assert!(reg.regular);
        assert!(close(reg.norm_inv.unwrap(), 2.0));
    }

    #[test]
    fn tables_with_unit_forcing() {
        let p = rank1(1.0, 1.0, 1.0, 1.0, 1.0);
        let t = build_tables(&p, &single(&p, 4)).unwrap();
        assert!(close(t.g_f[0][0], 0.5));
    }

    #[test]
    fn tables_on_two_subintervals() {
        let mut p = worked();
        p.condition.points = vec![0.0, 0.5, 1.0];
        p.condition.b = vec![
            Matrix::scalar(1.0),
            Matrix::scalar(0.0),
            Matrix::scalar(1.0),
        ];
        let t = build_tables(&p, &single(&p, 4)).unwrap();
        assert!(close(t.g[(0, 0)], 0.25));
    }

    #[test]
    fn zero_kernel_tables() {
        let rot = Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap();
        let p = Problem::new(
            MatrixFn::constant(rot),
            Kernel::Degenerate(DegenerateKernel::zero(2)),
            MatrixFn::zeros(2, 1),
            MultipointCondition::new(
                vec![0.0, 1.0],
                vec![Matrix::identity(2); 2],
                Vector::zeros(2),
            ),
        );
        let t = build_tables(&p, &single(&p, 8)).unwrap();
        assert_eq!(t.g, Matrix::zeros(2, 2));
        assert_eq!(t.m_inv.clone().unwrap(), Matrix::identity(2));
        assert_eq!(t.v[0][0], t.psi_hat_a[0][0]);
        let reg = check_regularity(&t);
        assert_eq!(reg.norm_inv, Some(1.0));
    }

    #[test]
    fn singular_i_minus_g_is_not_regular() {
        // φ = ψ = √2 on one interval gives G = 1.
        let s = 2f64.sqrt();
        let p = rank1(s, 0.5, 1.0, 1.0, 1.0);
        let t = build_tables(&p, &single(&p, 8)).unwrap();
        assert!((t.g[(0, 0)] - 1.0).abs() < 1e-14);
        let reg = check_regularity(&t);
        assert!(!reg.regular);
        assert_eq!(reg.norm_inv, None);
        assert!(matches!(
            assemble_param_system(&p, &single(&p, 8), &t),
            Err(Error::NotRegular { .. })
        ));
    }

    #[test]
    fn refinement_recovers_regularity() {
        let s = 2f64.sqrt();
        let p = rank1(s, 0.5, 1.0, 1.0, 1.0);
        let opts = SolveOptions::with_steps(8);
        let (part, t, refinements) = regular_tables(&p, &opts).unwrap();
        assert_eq!(refinements, 1);
        assert_eq!(part.points, vec![0.0, 0.5, 1.0]);
        assert!((t.g[(0, 0)] - 0.5).abs() < 1e-14);
        let none = SolveOptions {
            max_refinements: 0,
            ..opts
        };
        assert!(matches!(
            regular_tables(&p, &none),
            Err(Error::NotRegular { refinements: 0 })
        ));
    }

    #[test]
    fn worked_param_system() {
        let p = worked();
        let part = single(&p, 8);
        let t = build_tables(&p, &part).unwrap();
        let sys = assemble_param_system(&p, &part, &t).unwrap();
        assert!(close(sys.d[0][0][(0, 0)], 2.0));
        assert!(close(sys.f[0][0], 1.0));
        assert!(close(sys.q[(0, 0)], 4.0));
        assert!(close(sys.rhs[0], 0.0));
        let lambda = solve_params(&sys).unwrap();
        assert!(lambda[0][0].abs() < 1e-12);
        let mu = recover_mu(&t, &lambda).unwrap();
        assert!(close(mu[0][0], 0.5));
        let rhs = rhs_function(&p, &t, &lambda, &mu).unwrap();
        for x in [0.0, 0.37, 1.0] {
            assert!(close(rhs.eval(x).unwrap()[(0, 0)], 1.0));
        }
    }

    #[test]
    fn zero_kernel_q_patterns() {
        let mk = |points: Vec<f64>, b: Vec<f64>| {
            let b = b.into_iter().map(Matrix::scalar).collect();
            Problem::new(
                MatrixFn::scalar(|_| 0.0),
                Kernel::Degenerate(DegenerateKernel::zero(1)),
                MatrixFn::scalar(|_| 0.0),
                MultipointCondition::new(points, b, Vector::new(vec![2.0]).unwrap()),
            )
        };
        let p = mk(vec![0.0, 1.0], vec![3.0, 5.0]);
        let part = single(&p, 4);
        let sys = assemble_param_system(&p, &part, &build_tables(&p, &part).unwrap()).unwrap();
        assert_eq!(sys.q, Matrix::scalar(8.0));

        let p = mk(vec![0.0, 0.5, 1.0], vec![1.0, 0.0, 0.0]);
        let part = single(&p, 4);
        let sys = assemble_param_system(&p, &part, &build_tables(&p, &part).unwrap()).unwrap();
        let expect = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, -1.0]]).unwrap();
        assert_eq!(sys.q, expect);
        let lambda = solve_params(&sys).unwrap();
        assert_eq!((lambda[0][0], lambda[1][0]), (2.0, 2.0));
    }

    #[test]
    fn solve_params_examples() {
        let sys = ParamSystem {
            d: vec![],
            f: vec![Vector::zeros(1), Vector::zeros(1)],
            q: Matrix::identity(2),
            rhs: Vector::new(vec![3.0, -4.0]).unwrap(),
        };
        let lam = solve_params(&sys).unwrap();
        assert_eq!((lam[0][0], lam[1][0]), (3.0, -4.0));
        let sys = ParamSystem {
            q: Matrix::zeros(2, 2),
            ..sys
        };
        assert_eq!(solve_params(&sys).unwrap_err(), Error::NotWellPosed);
    }

    #[test]
    fn mu_and_rhs_with_zero_data() {
        let p = rank1(1.0, 0.0, 1.0, 1.0, 0.0);
        let part = single(&p, 4);
        let t = build_tables(&p, &part).unwrap();
        let lambda = vec![Vector::zeros(1)];
        let mu = recover_mu(&t, &lambda).unwrap();
        assert_eq!(mu[0][0], 0.0);
        let rhs = rhs_function(&p, &t, &lambda, &mu).unwrap();
        assert_eq!(rhs.eval(0.3).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn worked_solution() {
        let sol = solve_degenerate(&worked(), &SolveOptions::with_steps(8)).unwrap();
        assert!(sol.lambda[0][0].abs() < 1e-12);
        assert!(sol.max_error(&MatrixFn::scalar(|t| t)).unwrap() <= 1e-12);
        assert!(sol.diagnostics.boundary_residual <= 1e-12);
        assert!(sol.diagnostics.continuity_residual <= 1e-12);
        assert!(sol.diagnostics.qstar_certified());
    }

    #[test]
    fn constant_solution_of_trivial_problem() {
        let p = Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::Degenerate(DegenerateKernel::zero(1)),
            MatrixFn::scalar(|_| 0.0),
            MultipointCondition::new(
                vec![0.0, 0.4, 1.0],
                vec![
                    Matrix::scalar(1.0),
                    Matrix::scalar(0.0),
                    Matrix::scalar(0.0),
                ],
                Vector::new(vec![-2.5]).unwrap(),
            ),
        );
        let sol = solve_degenerate(&p, &SolveOptions::with_steps(4)).unwrap();
        assert!(sol.max_error(&MatrixFn::scalar(|_| -2.5)).unwrap() == 0.0);
    }

    #[test]
    fn zero_boundary_operator_is_not_well_posed() {
        let p = Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::Degenerate(DegenerateKernel::zero(1)),
            MatrixFn::scalar(|_| 1.0),
            MultipointCondition::new(
                vec![0.0, 1.0],
                vec![Matrix::scalar(0.0), Matrix::scalar(0.0)],
                Vector::new(vec![1.0]).unwrap(),
            ),
        );
        assert_eq!(
            solve_degenerate(&p, &SolveOptions::default()).unwrap_err(),
            Error::NotWellPosed
        );
    }

    #[test]
    fn general_kernel_is_rejected() {
        let p = worked().with_kernel(Kernel::General(crate::model::KernelFn::scalar(|_, _| 1.0)));
        assert!(matches!(
            build_tables(&p, &single(&p, 4)),
            Err(Error::InvalidProblem(_))
        ));
    }

    #[test]
    fn wellposedness_for_zero_kernel() {
        let p = Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::Degenerate(DegenerateKernel::zero(1)),
            MatrixFn::scalar(|_| 1.0),
            MultipointCondition::new(
                vec![0.0, 1.0],
                vec![Matrix::scalar(1.0), Matrix::scalar(0.0)],
                Vector::new(vec![0.0]).unwrap(),
            ),
        );
        let sol = solve_degenerate(&p, &SolveOptions::with_steps(4)).unwrap();
        let w = sol.diagnostics.wellposedness.unwrap();
        assert_eq!(w.alpha, 0.0);
        assert_eq!(w.phi_bar, 0.0);
        // N = γ (1 + ||B_m||) max(1, ω) + ω with γ = 1, ω = 1
        assert!((w.n_constant - 2.0).abs() < 1e-14);
    }

    #[test]
    fn worked_certificate_at_coarse_meshes() {
        for steps in [8, 16, 32] {
            let sol = solve_degenerate(&worked(), &SolveOptions::with_steps(steps)).unwrap();
            let w = sol.diagnostics.wellposedness.unwrap();
            assert!(w.qstar_certified, "steps {steps}: {w:?}");
            assert!(w.epsilon_h.unwrap() < 1e-12);
        }
    }

    #[test]
    fn solve_with_forcing_reuses_tables() {
        let prepared = PreparedProblem::new(&worked(), &SolveOptions::with_steps(8)).unwrap();
        let base = prepared.solve().unwrap();
        let again = prepared
            .solve_with_forcing(&MatrixFn::scalar(|_| 0.5))
            .unwrap();
        assert!(base.sup_distance(&again) == 0.0);
        let _ = one();
    }
}
