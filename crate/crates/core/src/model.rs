//! Problem data model: coefficient functions, kernels, multipoint conditions,
//! partitions and solutions, plus validation and manufactured problems.

use std::fmt;
use std::sync::Arc;

use crate::densela::{Matrix, Vector};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::odequad::{GridFunction, SubintervalMesh};

/// Panels used for the integral term of a manufactured forcing.
pub const MANUFACTURE_PANELS: usize = 2048;

type MatFnInner = dyn Fn(f64) -> Result<Matrix> + Send + Sync;
type KerFnInner = dyn Fn(f64, f64) -> Result<Matrix> + Send + Sync;

/// A matrix-valued function of `t` with a fixed shape.
#[derive(Clone)]
pub struct MatrixFn {
    rows: usize,
    cols: usize,
    f: Arc<MatFnInner>,
}

impl MatrixFn {
    pub fn new<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(f64) -> Matrix + Send + Sync + 'static,
    {
        MatrixFn {
            rows,
            cols,
            f: Arc::new(move |t| Ok(f(t))),
        }
    }

    pub fn try_new<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(f64) -> Result<Matrix> + Send + Sync + 'static,
    {
        MatrixFn {
            rows,
            cols,
            f: Arc::new(f),
        }
    }

    /// A `1 x 1` function from a scalar closure.
    pub fn scalar<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        MatrixFn::new(1, 1, move |t| Matrix::scalar(f(t)))
    }

    /// A column function from a closure producing the entries.
    pub fn column<F>(dim: usize, f: F) -> Self
    where
        F: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        MatrixFn::try_new(dim, 1, move |t| Matrix::new(dim, 1, f(t)))
    }

    pub fn constant(m: Matrix) -> Self {
        let (rows, cols) = m.shape();
        MatrixFn::new(rows, cols, move |_| m.clone())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixFn::constant(Matrix::zeros(rows, cols))
    }

    /// Entry-wise expressions in row-major order, evaluated with `tau = 0`.
    pub fn from_exprs(rows: usize, cols: usize, exprs: Vec<Expression>) -> Result<Self> {
        if exprs.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} expressions for a {rows}x{cols} matrix",
                exprs.len()
            )));
        }
        Ok(MatrixFn::try_new(rows, cols, move |t| {
            let data = exprs
                .iter()
                .map(|e| e.eval(t, 0.0))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Matrix::new(rows, cols, data)
        }))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn eval(&self, t: f64) -> Result<Matrix> {
        (self.f)(t)
    }

    /// The function as a plain closure, for the integrators.
    pub fn as_fn(&self) -> impl Fn(f64) -> Result<Matrix> + '_ {
        move |t| (self.f)(t)
    }
}

impl fmt::Debug for MatrixFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MatrixFn({}x{})", self.rows, self.cols)
    }
}

/// A matrix-valued function of `(t, tau)`.
#[derive(Clone)]
pub struct KernelFn {
    n: usize,
    f: Arc<KerFnInner>,
}

impl KernelFn {
    pub fn new<F>(n: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> Matrix + Send + Sync + 'static,
    {
        KernelFn {
            n,
            f: Arc::new(move |t, tau| Ok(f(t, tau))),
        }
    }

    pub fn try_new<F>(n: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> Result<Matrix> + Send + Sync + 'static,
    {
        KernelFn { n, f: Arc::new(f) }
    }

    pub fn scalar<F>(f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        KernelFn::new(1, move |t, tau| Matrix::scalar(f(t, tau)))
    }

    pub fn from_exprs(n: usize, exprs: Vec<Expression>) -> Result<Self> {
        if exprs.len() != n * n {
            return Err(Error::Shape(format!(
                "{} expressions for a {n}x{n} kernel",
                exprs.len()
            )));
        }
        Ok(KernelFn::try_new(n, move |t, tau| {
            let data = exprs
                .iter()
                .map(|e| e.eval(t, tau))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Matrix::new(n, n, data)
        }))
    }

    /// Multiplies every entry by `s`.
    pub fn scaled(&self, s: f64) -> KernelFn {
        let inner = self.clone();
        KernelFn::try_new(self.n, move |t, tau| Ok(inner.eval(t, tau)?.scale(s)))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eval(&self, t: f64, tau: f64) -> Result<Matrix> {
        (self.f)(t, tau)
    }
}

impl fmt::Debug for KernelFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KernelFn({0}x{0})", self.n)
    }
}

/// Separable kernel `Σ_j φ_j(t) ψ_j(τ)`.
#[derive(Debug, Clone)]
pub struct DegenerateKernel {
    pub phi: Vec<MatrixFn>,
    pub psi: Vec<MatrixFn>,
}

impl DegenerateKernel {
    pub fn new(phi: Vec<MatrixFn>, psi: Vec<MatrixFn>) -> Result<Self> {
        if phi.is_empty() || phi.len() != psi.len() {
            return Err(Error::InvalidProblem(format!(
                "degenerate kernel needs equally many phi and psi terms (got {} and {})",
                phi.len(),
                psi.len()
            )));
        }
        Ok(DegenerateKernel { phi, psi })
    }

    /// Rank-one zero kernel.
    pub fn zero(n: usize) -> Self {
        DegenerateKernel {
            phi: vec![MatrixFn::zeros(n, n)],
            psi: vec![MatrixFn::zeros(n, n)],
        }
    }

    pub fn rank(&self) -> usize {
        self.phi.len()
    }

    pub fn eval(&self, t: f64, tau: f64) -> Result<Matrix> {
        let mut acc: Option<Matrix> = None;
        for (phi, psi) in self.phi.iter().zip(&self.psi) {
            let term = &phi.eval(t)? * &psi.eval(tau)?;
            match acc.as_mut() {
                Some(a) => *a += &term,
                None => acc = Some(term),
            }
        }
        Ok(acc.expect("rank is positive"))
    }
}

#[derive(Debug, Clone)]
pub enum Kernel {
    Degenerate(DegenerateKernel),
    General(KernelFn),
}

impl Kernel {
    pub fn eval(&self, t: f64, tau: f64) -> Result<Matrix> {
        match self {
            Kernel::Degenerate(dk) => dk.eval(t, tau),
            Kernel::General(k) => k.eval(t, tau),
        }
    }

    pub fn as_degenerate(&self) -> Option<&DegenerateKernel> {
        match self {
            Kernel::Degenerate(dk) => Some(dk),
            Kernel::General(_) => None,
        }
    }
}

/// `Σ_i B_i x(t_i) = d` with `0 = t_0 < … < t_m = T`.
#[derive(Debug, Clone)]
pub struct MultipointCondition {
    pub points: Vec<f64>,
    pub b: Vec<Matrix>,
    pub d: Vector,
}

impl MultipointCondition {
    pub fn new(points: Vec<f64>, b: Vec<Matrix>, d: Vector) -> Self {
        MultipointCondition { points, b, d }
    }

    /// Number of subintervals the points define.
    pub fn intervals(&self) -> usize {
        self.points.len().saturating_sub(1)
    }
}

/// The multipoint boundary value problem for `x' = A x + ∫K x + f`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub n: usize,
    pub horizon: f64,
    pub a: MatrixFn,
    pub kernel: Kernel,
    pub f: MatrixFn,
    pub condition: MultipointCondition,
}

impl Problem {
    pub fn new(a: MatrixFn, kernel: Kernel, f: MatrixFn, condition: MultipointCondition) -> Self {
        let horizon = condition.points.last().copied().unwrap_or(0.0);
        Problem {
            n: a.rows(),
            horizon,
            a,
            kernel,
            f,
            condition,
        }
    }

    /// Same problem with another kernel.
    pub fn with_kernel(&self, kernel: Kernel) -> Problem {
        Problem {
            kernel,
            ..self.clone()
        }
    }

    /// Same problem with another forcing term.
    pub fn with_forcing(&self, f: MatrixFn) -> Problem {
        Problem { f, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FindingCode {
    NonpositiveHorizon,
    TooFewPoints,
    NonmonotonePoints,
    EndpointMismatch,
    ShapeMismatch,
    EmptyKernel,
    EvaluationFailure,
    NonFinite,
}

impl FindingCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingCode::NonpositiveHorizon => "NONPOSITIVE_HORIZON",
            FindingCode::TooFewPoints => "TOO_FEW_POINTS",
            FindingCode::NonmonotonePoints => "NONMONOTONE_POINTS",
            FindingCode::EndpointMismatch => "ENDPOINT_MISMATCH",
            FindingCode::ShapeMismatch => "SHAPE_MISMATCH",
            FindingCode::EmptyKernel => "EMPTY_KERNEL",
            FindingCode::EvaluationFailure => "EVALUATION_FAILURE",
            FindingCode::NonFinite => "NON_FINITE",
        }
    }
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub code: FindingCode,
    pub message: String,
}

/// Checks every structural invariant of a problem. Never fails; an empty
/// result means the problem is well-formed.
pub fn validate(p: &Problem) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |code, message: String| out.push(Finding { code, message });
    let n = p.n;

    if !(p.horizon > 0.0 && p.horizon.is_finite()) {
        push(
            FindingCode::NonpositiveHorizon,
            format!("horizon T = {} must be positive", p.horizon),
        );
    }

    let cond = &p.condition;
    if cond.points.len() < 2 {
        push(
            FindingCode::TooFewPoints,
            format!(
                "{} condition points; need at least t_0 = 0 and t_m = T",
                cond.points.len()
            ),
        );
    } else {
        if cond.points.windows(2).any(|w| !(w[0] < w[1])) {
            push(
                FindingCode::NonmonotonePoints,
                "condition points must be strictly increasing".into(),
            );
        }
        if cond.points[0] != 0.0 || *cond.points.last().unwrap() != p.horizon {
            push(
                FindingCode::EndpointMismatch,
                format!(
                    "condition points must start at 0 and end at T = {} (got {} .. {})",
                    p.horizon,
                    cond.points[0],
                    cond.points.last().unwrap()
                ),
            );
        }
    }
    if cond.points.iter().any(|t| !t.is_finite()) {
        push(FindingCode::NonFinite, "non-finite condition point".into());
    }

    if cond.b.len() != cond.points.len() {
        push(
            FindingCode::ShapeMismatch,
            format!(
                "{} B matrices for {} points",
                cond.b.len(),
                cond.points.len()
            ),
        );
    }
    for (i, b) in cond.b.iter().enumerate() {
        if b.shape() != (n, n) {
            push(
                FindingCode::ShapeMismatch,
                format!("B_{i} is {}x{}, expected {n}x{n}", b.rows(), b.cols()),
            );
        }
    }
    if cond.d.dim() != n {
        push(
            FindingCode::ShapeMismatch,
            format!("d has dimension {}, expected {n}", cond.d.dim()),
        );
    }
    if p.a.rows() != n || p.a.cols() != n {
        push(
            FindingCode::ShapeMismatch,
            format!("A is {}x{}, expected {n}x{n}", p.a.rows(), p.a.cols()),
        );
    }
    if p.f.rows() != n || p.f.cols() != 1 {
        push(
            FindingCode::ShapeMismatch,
            format!("f is {}x{}, expected {n}x1", p.f.rows(), p.f.cols()),
        );
    }
    match &p.kernel {
        Kernel::Degenerate(dk) => {
            if dk.phi.is_empty() || dk.phi.len() != dk.psi.len() {
                push(
                    FindingCode::EmptyKernel,
                    format!(
                        "kernel has {} phi and {} psi terms",
                        dk.phi.len(),
                        dk.psi.len()
                    ),
                );
            }
            for (j, g) in dk.phi.iter().chain(&dk.psi).enumerate() {
                if g.rows() != n || g.cols() != n {
                    push(
                        FindingCode::ShapeMismatch,
                        format!(
                            "kernel factor #{j} is {}x{}, expected {n}x{n}",
                            g.rows(),
                            g.cols()
                        ),
                    );
                }
            }
        }
        Kernel::General(k) => {
            if k.dim() != n {
                push(
                    FindingCode::ShapeMismatch,
                    format!("kernel is {0}x{0}, expected {n}x{n}", k.dim()),
                );
            }
        }
    }

    if !out.is_empty() || !(p.horizon > 0.0 && p.horizon.is_finite()) {
        return out;
    }

    // Probe evaluability and returned shapes on a coarse grid.
    let probes: Vec<f64> = (0..=16).map(|i| p.horizon * i as f64 / 16.0).collect();
    let mut reported: Vec<String> = Vec::new();
    let mut probe = |what: &str, expect: (usize, usize), value: Result<Matrix>, t: f64| {
        let finding = match value {
            Ok(m) if m.shape() != expect => Some(Finding {
                code: FindingCode::ShapeMismatch,
                message: format!(
                    "{what} returned {}x{} at t = {t}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    expect.0,
                    expect.1
                ),
            }),
            Ok(m) if !m.is_finite() => Some(Finding {
                code: FindingCode::NonFinite,
                message: format!("{what} is not finite at t = {t}"),
            }),
            Ok(_) => None,
            Err(e) => Some(Finding {
                code: FindingCode::EvaluationFailure,
                message: format!("{what} at t = {t}: {e}"),
            }),
        };
        // one finding per quantity
        let name = what.split('(').next().unwrap_or(what).to_string();
        if let Some(f) = finding {
            if !reported.contains(&name) {
                reported.push(name);
                out.push(f);
            }
        }
    };
    for &t in &probes {
        probe("A", (n, n), p.a.eval(t), t);
        probe("f", (n, 1), p.f.eval(t), t);
        match &p.kernel {
            Kernel::Degenerate(dk) => {
                for (j, (phi, psi)) in dk.phi.iter().zip(&dk.psi).enumerate() {
                    probe(&format!("phi_{}", j + 1), (n, n), phi.eval(t), t);
                    probe(&format!("psi_{}", j + 1), (n, n), psi.eval(t), t);
                }
            }
            Kernel::General(k) => {
                for &tau in probes.iter().step_by(4) {
                    probe(&format!("K(., {tau})"), (n, n), k.eval(t, tau), t);
                }
            }
        }
    }
    out
}

/// Builds a problem whose exact solution is `xstar`.
///
/// `f(t) = x*'(t) - A(t) x*(t) - ∫ K(t, τ) x*(τ) dτ`, the integral by
/// composite Simpson with [`MANUFACTURE_PANELS`] panels, and
/// `d = Σ B_i x*(t_i)`.
pub fn manufacture(
    xstar: &MatrixFn,
    dxstar: &MatrixFn,
    a: MatrixFn,
    kernel: Kernel,
    points: Vec<f64>,
    b: Vec<Matrix>,
) -> Result<Problem> {
    let n = a.rows();
    let horizon = *points
        .last()
        .ok_or_else(|| Error::InvalidProblem("no condition points".into()))?;
    let panels = MANUFACTURE_PANELS;
    let taus: Vec<f64> = (0..=panels)
        .map(|i| {
            if i == panels {
                horizon
            } else {
                horizon * i as f64 / panels as f64
            }
        })
        .collect();
    let weights: Vec<f64> = (0..=panels)
        .map(|i| {
            let w = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * horizon / panels as f64 / 3.0
        })
        .collect();
    let xs: Arc<Vec<Matrix>> =
        Arc::new(taus.iter().map(|&t| xstar.eval(t)).collect::<Result<_>>()?);

    let mut d = Matrix::zeros(n, 1);
    for (bi, &ti) in b.iter().zip(&points) {
        d += &(bi * &xstar.eval(ti)?);
    }

    let integral: Arc<dyn Fn(f64) -> Result<Matrix> + Send + Sync> = match &kernel {
        Kernel::Degenerate(dk) => {
            // ∫ φ_j(t) ψ_j(τ) x*(τ) dτ = φ_j(t) ∫ ψ_j x*, so the moments are fixed.
            let mut moments = Vec::with_capacity(dk.rank());
            for psi in &dk.psi {
                let mut acc = Matrix::zeros(n, 1);
                for ((tau, x), w) in taus.iter().zip(xs.iter()).zip(&weights) {
                    acc.axpy(*w, &(&psi.eval(*tau)? * x));
                }
                moments.push(acc);
            }
            let phis = dk.phi.clone();
            Arc::new(move |t| {
                let mut acc = Matrix::zeros(n, 1);
                for (phi, m) in phis.iter().zip(&moments) {
                    acc += &(&phi.eval(t)? * m);
                }
                Ok(acc)
            })
        }
        Kernel::General(k) => {
            let k = k.clone();
            let xs = Arc::clone(&xs);
            Arc::new(move |t| {
                let mut acc = Matrix::zeros(n, 1);
                for ((tau, x), w) in taus.iter().zip(xs.iter()).zip(&weights) {
                    acc.axpy(*w, &(&k.eval(t, *tau)? * x));
                }
                Ok(acc)
            })
        }
    };

    let (x, dx, a_inner) = (xstar.clone(), dxstar.clone(), a.clone());
    let f = MatrixFn::try_new(n, 1, move |t| {
        let mut out = dx.eval(t)?;
        out -= &(&a_inner.eval(t)? * &x.eval(t)?);
        out -= &integral(t)?;
        Ok(out)
    });

    let condition = MultipointCondition::new(points, b, d.to_vector());
    Ok(Problem::new(a, kernel, f, condition))
}

/// How subinterval step counts are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshPolicy {
    /// Smallest even count with `h <= h_max`.
    MaxStep(f64),
    /// A fixed even count on every subinterval.
    Steps(usize),
}

impl MeshPolicy {
    pub fn mesh(&self, left: f64, right: f64) -> Result<SubintervalMesh> {
        match *self {
            MeshPolicy::MaxStep(h) => SubintervalMesh::with_max_step(left, right, h),
            MeshPolicy::Steps(s) => SubintervalMesh::new(left, right, s),
        }
    }

    /// Default `h_max = T / (64 m)`.
    pub fn default_for(condition: &MultipointCondition) -> MeshPolicy {
        let horizon = condition.points.last().copied().unwrap_or(1.0);
        MeshPolicy::MaxStep(horizon / (64.0 * condition.intervals().max(1) as f64))
    }
}

/// Partition points `t_0 < … < t_m` with a mesh on every subinterval.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub points: Vec<f64>,
    pub meshes: Vec<SubintervalMesh>,
    pub policy: MeshPolicy,
    /// For every partition point, the index of the condition point it
    /// coincides with.
    pub condition_index: Vec<Option<usize>>,
}

impl Partition {
    /// The partition whose points are exactly the condition points.
    pub fn from_condition(condition: &MultipointCondition, policy: MeshPolicy) -> Result<Self> {
        let index = (0..condition.points.len()).map(Some).collect();
        Partition::build(condition.points.clone(), policy, index)
    }

    fn build(
        points: Vec<f64>,
        policy: MeshPolicy,
        condition_index: Vec<Option<usize>>,
    ) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidMesh(
                "a partition needs at least two points".into(),
            ));
        }
        let meshes = points
            .windows(2)
            .map(|w| policy.mesh(w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Partition {
            points,
            meshes,
            policy,
            condition_index,
        })
    }

    /// Number of subintervals `m`.
    pub fn len(&self) -> usize {
        self.meshes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }

    /// Splits every subinterval at its midpoint; existing points are kept
    /// exactly and meshes are re-derived with the same policy.
    pub fn refined(&self) -> Result<Partition> {
        let mut points = Vec::with_capacity(2 * self.points.len() - 1);
        let mut index = Vec::with_capacity(2 * self.points.len() - 1);
        for (w, idx) in self.points.windows(2).zip(&self.condition_index) {
            points.push(w[0]);
            index.push(*idx);
            points.push(0.5 * (w[0] + w[1]));
            index.push(None);
        }
        points.push(*self.points.last().unwrap());
        index.push(*self.condition_index.last().unwrap());
        Partition::build(points, self.policy, index)
    }

    /// Same points with every mesh step halved.
    pub fn halved(&self) -> Partition {
        let meshes = self.meshes.iter().map(SubintervalMesh::halved).collect();
        let policy = match self.policy {
            MeshPolicy::MaxStep(h) => MeshPolicy::MaxStep(0.5 * h),
            MeshPolicy::Steps(s) => MeshPolicy::Steps(2 * s),
        };
        Partition {
            points: self.points.clone(),
            meshes,
            policy,
            condition_index: self.condition_index.clone(),
        }
    }

    /// `B` matrix at every partition point; zero at points not in the condition.
    pub fn boundary_matrices(&self, condition: &MultipointCondition, n: usize) -> Vec<Matrix> {
        self.condition_index
            .iter()
            .map(|idx| match idx {
                Some(i) => condition.b[*i].clone(),
                None => Matrix::zeros(n, n),
            })
            .collect()
    }

    /// Longest subinterval.
    pub fn max_width(&self) -> f64 {
        self.meshes.iter().map(|m| m.len()).fold(0.0, f64::max)
    }

    pub fn max_step(&self) -> f64 {
        self.meshes.iter().map(|m| m.h()).fold(0.0, f64::max)
    }
}

/// Well-posedness quantities for a solved partition.
#[derive(Debug, Clone, PartialEq)]
pub struct WellPosedness {
    /// The well-posedness constant `N(k, Δm)`.
    pub n_constant: f64,
    /// `max ||A(t)||` over the mesh nodes.
    pub alpha: f64,
    /// Longest subinterval.
    pub omega: f64,
    /// `max_r ∫_{t_{r-1}}^{t_r} Σ_j ||φ_j||`.
    pub phi_bar: f64,
    /// `max_p ∫_0^T ||ψ_p||`.
    pub psi_bar: f64,
    /// `||(I - G)^{-1}||`.
    pub norm_inv_i_minus_g: f64,
    /// `||Q*^{-1}||`.
    pub gamma: f64,
    /// Norm used for the undefined `C` factor; we take `||B_m||`.
    pub c_norm: f64,
    /// `||Q*^h - Q*^{h/2}||` from one mesh halving, when computed.
    pub epsilon_h: Option<f64>,
    /// `||(Q*^h)^{-1}|| · epsilon_h < 1`.
    pub qstar_certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub regular: bool,
    pub refinements: usize,
    pub norm_inv_i_minus_g: f64,
    pub boundary_residual: f64,
    pub continuity_residual: f64,
    pub wellposedness: Option<WellPosedness>,
}

impl Diagnostics {
    pub fn qstar_certified(&self) -> bool {
        self.wellposedness
            .as_ref()
            .is_some_and(|w| w.qstar_certified)
    }

    pub fn wellposedness_constant(&self) -> Option<f64> {
        self.wellposedness.as_ref().map(|w| w.n_constant)
    }
}

/// Parameters, moments and grid values of a computed solution.
#[derive(Debug, Clone)]
pub struct Solution {
    pub partition: Partition,
    pub lambda: Vec<Vector>,
    pub mu: Vec<Vector>,
    pub grid: Vec<GridFunction>,
    pub diagnostics: Diagnostics,
}

impl Solution {
    /// Node values with `x(t) = λ_r + u_r(t)` on `[t_{r-1}, t_r)` and the
    /// final node giving `x(T)`. Interior partition points appear once.
    pub fn nodes(&self) -> Vec<(f64, Vector)> {
        let mut out = Vec::new();
        let last = self.grid.len() - 1;
        for (r, g) in self.grid.iter().enumerate() {
            let end = if r == last {
                g.values.len()
            } else {
                g.values.len() - 1
            };
            for i in 0..end {
                out.push((g.mesh.node(i), g.values[i].to_vector()));
            }
        }
        out
    }

    /// Solution value at every partition point (left-closed convention).
    pub fn partition_values(&self) -> Vec<Vector> {
        let mut out: Vec<Vector> = self.grid.iter().map(|g| g.first().to_vector()).collect();
        out.push(self.grid.last().unwrap().last().to_vector());
        out
    }

    /// `max_t ||x(t)||` over every stored node, including left limits.
    pub fn sup_norm(&self) -> f64 {
        self.grid
            .iter()
            .flat_map(|g| g.values.iter())
            .map(Matrix::max_norm)
            .fold(0.0, f64::max)
    }

    /// `max_t ||x(t) - y(t)||` over matching grids.
    pub fn sup_distance(&self, other: &Solution) -> f64 {
        assert_eq!(
            self.grid.len(),
            other.grid.len(),
            "solutions on different partitions"
        );
        self.grid
            .iter()
            .zip(&other.grid)
            .flat_map(|(a, b)| {
                assert_eq!(a.mesh, b.mesh, "solutions on different meshes");
                a.values.iter().zip(&b.values)
            })
            .map(|(a, b)| (a - b).max_norm())
            .fold(0.0, f64::max)
    }

    /// `max_t ||x(t) - exact(t)||` over every stored node.
    pub fn max_error(&self, exact: &MatrixFn) -> Result<f64> {
        let mut worst = 0.0f64;
        for g in &self.grid {
            for (t, v) in g.iter() {
                worst = worst.max((v - &exact.eval(t)?).max_norm());
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem() -> Problem {
        let dk = DegenerateKernel::new(
            vec![MatrixFn::scalar(|_| 1.0)],
            vec![MatrixFn::scalar(|_| 1.0)],
        )
        .unwrap();
        Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::Degenerate(dk),
            MatrixFn::scalar(|_| 0.5),
            MultipointCondition::new(
                vec![0.0, 1.0],
                vec![Matrix::scalar(1.0), Matrix::scalar(1.0)],
                Vector::new(vec![1.0]).unwrap(),
            ),
        )
    }

    fn codes(p: &Problem) -> Vec<FindingCode> {
        validate(p).into_iter().map(|f| f.code).collect()
    }

    #[test]
    fn well_formed_problem_has_no_findings() {
        assert!(validate(&scalar_problem()).is_empty());
    }

    #[test]
    fn nonmonotone_points() {
        let mut p = scalar_problem();
        p.condition.points = vec![0.0, 0.7, 0.3, 1.0];
        p.condition.b = vec![Matrix::scalar(1.0); 4];
        assert!(codes(&p).contains(&FindingCode::NonmonotonePoints));
    }

    #[test]
    fn shape_mismatch_on_b() {
        let rot = Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap();
        let p = Problem::new(
            MatrixFn::constant(rot),
            Kernel::Degenerate(DegenerateKernel::zero(2)),
            MatrixFn::zeros(2, 1),
            MultipointCondition::new(
                vec![0.0, 1.0],
                vec![Matrix::zeros(2, 3), Matrix::identity(2)],
                Vector::zeros(2),
            ),
        );
        assert_eq!(codes(&p), vec![FindingCode::ShapeMismatch]);
    }

    #[test]
    fn endpoint_and_horizon_findings() {
        let mut p = scalar_problem();
        p.condition.points = vec![0.1, 1.0];
        assert!(codes(&p).contains(&FindingCode::EndpointMismatch));
        let mut p = scalar_problem();
        p.horizon = -1.0;
        assert!(codes(&p).contains(&FindingCode::NonpositiveHorizon));
        let mut p = scalar_problem();
        p.condition.points = vec![0.0];
        p.condition.b = vec![Matrix::scalar(1.0)];
        assert!(codes(&p).contains(&FindingCode::TooFewPoints));
    }

    #[test]
    fn evaluation_failures_are_findings() {
        let mut p = scalar_problem();
        p.f = MatrixFn::from_exprs(1, 1, vec![Expression::parse("1/t").unwrap()]).unwrap();
        assert_eq!(codes(&p), vec![FindingCode::EvaluationFailure]);
        let mut p = scalar_problem();
        p.f = MatrixFn::new(1, 1, |_| Matrix::zeros(2, 1));
        assert_eq!(codes(&p), vec![FindingCode::ShapeMismatch]);
    }

    #[test]
    fn manufactured_linear_solution() {
        let dk = DegenerateKernel::new(
            vec![MatrixFn::scalar(|_| 1.0)],
            vec![MatrixFn::scalar(|_| 1.0)],
        )
        .unwrap();
        let p = manufacture(
            &MatrixFn::scalar(|t| t),
            &MatrixFn::scalar(|_| 1.0),
            MatrixFn::scalar(|_| 0.0),
            Kernel::Degenerate(dk),
            vec![0.0, 1.0],
            vec![Matrix::scalar(1.0), Matrix::scalar(1.0)],
        )
        .unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert!((p.f.eval(t).unwrap()[(0, 0)] - 0.5).abs() < 1e-14);
        }
        assert_eq!(p.condition.d[0], 1.0);
        assert_eq!(p.horizon, 1.0);
    }

    #[test]
    fn manufactured_zero_solution() {
        let k = KernelFn::scalar(|t, tau| (t * tau).exp());
        let p = manufacture(
            &MatrixFn::scalar(|_| 0.0),
            &MatrixFn::scalar(|_| 0.0),
            MatrixFn::scalar(|t| t),
            Kernel::General(k),
            vec![0.0, 0.5, 1.0],
            vec![Matrix::scalar(1.0); 3],
        )
        .unwrap();
        assert_eq!(p.f.eval(0.4).unwrap()[(0, 0)], 0.0);
        assert_eq!(p.condition.d[0], 0.0);
    }

    #[test]
    fn manufactured_rotation_has_zero_forcing() {
        let rot = Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap();
        let p = manufacture(
            &MatrixFn::column(2, |t| vec![t.sin(), t.cos()]),
            &MatrixFn::column(2, |t| vec![t.cos(), -t.sin()]),
            MatrixFn::constant(rot),
            Kernel::Degenerate(DegenerateKernel::zero(2)),
            vec![0.0, 1.0],
            vec![Matrix::identity(2), Matrix::identity(2)],
        )
        .unwrap();
        for t in [0.0, 0.25, 0.9] {
            assert!(p.f.eval(t).unwrap().max_norm() < 1e-15);
        }
    }

    #[test]
    fn general_kernel_manufacture_matches_closed_form() {
        // x* = 1, K = e^{tτ}: ∫_0^1 e^{tτ} dτ = (e^t - 1)/t.
        let p = manufacture(
            &MatrixFn::scalar(|_| 1.0),
            &MatrixFn::scalar(|_| 0.0),
            MatrixFn::scalar(|_| 0.0),
            Kernel::General(KernelFn::scalar(|t, tau| (t * tau).exp())),
            vec![0.0, 1.0],
            vec![Matrix::scalar(1.0), Matrix::scalar(0.0)],
        )
        .unwrap();
        for t in [0.2f64, 0.5, 1.0] {
            let exact = -(t.exp() - 1.0) / t;
            assert!((p.f.eval(t).unwrap()[(0, 0)] - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn refinement_keeps_original_points() {
        let cond = MultipointCondition::new(
            vec![0.0, 1.0, 3.0],
            vec![Matrix::scalar(1.0); 3],
            Vector::zeros(1),
        );
        let part = Partition::from_condition(&cond, MeshPolicy::MaxStep(0.25)).unwrap();
        assert_eq!(part.meshes[0].steps(), 4);
        assert_eq!(part.meshes[1].steps(), 8);
        let r = part.refined().unwrap();
        assert_eq!(r.points, vec![0.0, 0.5, 1.0, 2.0, 3.0]);
        assert_eq!(
            r.condition_index,
            vec![Some(0), None, Some(1), None, Some(2)]
        );
        assert_eq!(r.meshes[0].steps(), 2);
        let bs = r.boundary_matrices(&cond, 1);
        assert_eq!(bs[1], Matrix::zeros(1, 1));
        assert_eq!(bs[4], Matrix::scalar(1.0));
    }
}
