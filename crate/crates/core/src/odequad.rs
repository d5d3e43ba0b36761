//! Fixed-step RK4 for linear Cauchy problems `x' = A(t) x + P(t)` and
//! composite Simpson quadrature on the same grids.
//!
//! States are matrices: an `n x n` right-hand side integrates all columns of a
//! matrix Cauchy problem in one sweep, and vectors travel as `n x 1` columns.
//! With `A = 0` an RK4 step is exactly Simpson's rule on that step.

use crate::densela::Matrix;
use crate::error::{Error, Result};

/// Uniform mesh on one partition subinterval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubintervalMesh {
    left: f64,
    right: f64,
    steps: usize,
}

impl SubintervalMesh {
    /// `steps` must be positive and even.
    pub fn new(left: f64, right: f64, steps: usize) -> Result<Self> {
        if !(left.is_finite() && right.is_finite() && left < right) {
            return Err(Error::InvalidMesh(format!(
                "bad interval [{left}, {right}]"
            )));
        }
        if steps == 0 || steps % 2 != 0 {
            return Err(Error::OddSteps(steps));
        }
        Ok(SubintervalMesh { left, right, steps })
    }

    /// Smallest even step count with `h <= h_max`.
    pub fn with_max_step(left: f64, right: f64, h_max: f64) -> Result<Self> {
        if !(h_max > 0.0 && h_max.is_finite()) {
            return Err(Error::InvalidMesh(format!(
                "h_max must be positive, got {h_max}"
            )));
        }
        let raw = ((right - left) / h_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        SubintervalMesh::new(left, right, raw + raw % 2)
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> f64 {
        self.right - self.left
    }

    pub fn h(&self) -> f64 {
        (self.right - self.left) / self.steps as f64
    }

    /// Node `i`; the last node is exactly `right`.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.right
        } else {
            self.left + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |i| self.node(i))
    }

    /// Same interval with twice as many steps.
    pub fn halved(&self) -> SubintervalMesh {
        SubintervalMesh {
            steps: self.steps * 2,
            ..*self
        }
    }
}

/// Matrix (or column) samples at every node of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub mesh: SubintervalMesh,
    pub values: Vec<Matrix>,
}

impl GridFunction {
    pub fn new(mesh: SubintervalMesh, values: Vec<Matrix>) -> Result<Self> {
        if values.len() != mesh.steps + 1 {
            return Err(Error::Shape(format!(
                "{} samples for a mesh with {} nodes",
                values.len(),
                mesh.steps + 1
            )));
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(Error::Shape("grid samples differ in shape".into()));
        }
        Ok(GridFunction { mesh, values })
    }

    /// Samples `f` at the mesh nodes.
    pub fn sample(mesh: SubintervalMesh, f: impl Fn(f64) -> Result<Matrix>) -> Result<Self> {
        let values = mesh.nodes().map(f).collect::<Result<Vec<_>>>()?;
        GridFunction::new(mesh, values)
    }

    pub fn first(&self) -> &Matrix {
        &self.values[0]
    }

    pub fn last(&self) -> &Matrix {
        self.values.last().expect("grid has at least three nodes")
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Matrix)> {
        self.mesh.nodes().zip(&self.values)
    }
}

fn checked(m: Matrix, t: f64) -> Result<Matrix> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::NonFinite { t })
    }
}

/// RK4 trajectory of `x' = A(t) x + P(t)` with `x(left) = x0`.
pub fn rk4_ivp<FA, FP>(
    a_fn: FA,
    p_fn: FP,
    mesh: &SubintervalMesh,
    x0: &Matrix,
) -> Result<GridFunction>
where
    FA: Fn(f64) -> Result<Matrix>,
    FP: Fn(f64) -> Result<Matrix>,
{
    let h = mesh.h();
    let mut values = Vec::with_capacity(mesh.steps + 1);
    let mut x = x0.clone();

    let rhs = |a: &Matrix, p: &Matrix, x: &Matrix, t: f64| -> Result<Matrix> {
        if a.cols() != x.rows() || p.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "A is {}x{}, P is {}x{}, state is {}x{} at t = {t}",
                a.rows(),
                a.cols(),
                p.rows(),
                p.cols(),
                x.rows(),
                x.cols()
            )));
        }
        let mut k = a * x;
        k += p;
        Ok(k)
    };

    let mut t = mesh.left;
    let mut a0 = a_fn(t)?;
    let mut p0 = p_fn(t)?;
    values.push(x.clone());
    for i in 0..mesh.steps {
        let t_mid = t + 0.5 * h;
        let t_next = mesh.node(i + 1);
        let a_mid = a_fn(t_mid)?;
        let p_mid = p_fn(t_mid)?;
        let a1 = a_fn(t_next)?;
        let p1 = p_fn(t_next)?;

        let k1 = rhs(&a0, &p0, &x, t)?;
        let mut y = x.clone();
        y.axpy(0.5 * h, &k1);
        let k2 = rhs(&a_mid, &p_mid, &y, t_mid)?;
        let mut y = x.clone();
        y.axpy(0.5 * h, &k2);
        let k3 = rhs(&a_mid, &p_mid, &y, t_mid)?;
        let mut y = x.clone();
        y.axpy(h, &k3);
        let k4 = rhs(&a1, &p1, &y, t_next)?;

        x.axpy(h / 6.0, &k1);
        x.axpy(h / 3.0, &k2);
        x.axpy(h / 3.0, &k3);
        x.axpy(h / 6.0, &k4);
        x = checked(x, t_next)?;
        values.push(x.clone());

        t = t_next;
        a0 = a1;
        p0 = p1;
    }
    GridFunction::new(*mesh, values)
}

/// RK4 solution of the Cauchy problem with zero initial state; this is the
/// discrete `E_{*,r}(A, P, t)` on the mesh nodes.
pub fn rk4_cauchy<FA, FP>(a_fn: FA, p_fn: FP, mesh: &SubintervalMesh) -> Result<GridFunction>
where
    FA: Fn(f64) -> Result<Matrix>,
    FP: Fn(f64) -> Result<Matrix>,
{
    let p0 = p_fn(mesh.left)?;
    let x0 = Matrix::zeros(p0.rows(), p0.cols());
    rk4_ivp(a_fn, p_fn, mesh, &x0)
}

fn simpson_weight(i: usize, steps: usize) -> f64 {
    if i == 0 || i == steps {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Composite Simpson approximation of `∫ weight(t) g(t) dt` over the mesh.
pub fn simpson<W>(weight_fn: W, g: &GridFunction) -> Result<Matrix>
where
    W: Fn(f64) -> Result<Matrix>,
{
    let mesh = &g.mesh;
    if mesh.steps % 2 != 0 {
        return Err(Error::OddSteps(mesh.steps));
    }
    let mut acc: Option<Matrix> = None;
    for (i, (t, value)) in g.iter().enumerate() {
        let w = weight_fn(t)?;
        if w.cols() != value.rows() {
            return Err(Error::Shape(format!(
                "weight {}x{} against samples {}x{}",
                w.rows(),
                w.cols(),
                value.rows(),
                value.cols()
            )));
        }
        let term = &w * value;
        match acc.as_mut() {
            Some(a) => a.axpy(simpson_weight(i, mesh.steps), &term),
            None => acc = Some(term.scale(simpson_weight(i, mesh.steps))),
        }
    }
    Ok(acc.expect("mesh has nodes").scale(mesh.h() / 3.0))
}

/// Composite Simpson approximation of `∫ g(t) dt` over the mesh.
pub fn simpson_plain(g: &GridFunction) -> Matrix {
    let mesh = &g.mesh;
    let mut acc = Matrix::zeros(g.values[0].rows(), g.values[0].cols());
    for (i, value) in g.values.iter().enumerate() {
        acc.axpy(simpson_weight(i, mesh.steps), value);
    }
    acc.scale(mesh.h() / 3.0)
}

/// Composite Simpson approximation of `∫_a^b f(t) dt` with `panels` panels.
pub fn simpson_fn<F>(f: F, a: f64, b: f64, panels: usize) -> Result<Matrix>
where
    F: Fn(f64) -> Result<Matrix>,
{
    let mesh = SubintervalMesh::new(a, b, panels)?;
    let mut acc: Option<Matrix> = None;
    for (i, t) in mesh.nodes().enumerate() {
        let value = f(t)?;
        match acc.as_mut() {
            Some(m) => m.axpy(simpson_weight(i, panels), &value),
            None => acc = Some(value.scale(simpson_weight(i, panels))),
        }
    }
    Ok(acc.expect("mesh has nodes").scale(mesh.h() / 3.0))
}

/// Simpson node weights times `h / 3` for a mesh.
pub fn simpson_weights(mesh: &SubintervalMesh) -> Vec<f64> {
    let c = mesh.h() / 3.0;
    (0..=mesh.steps)
        .map(|i| simpson_weight(i, mesh.steps) * c)
        .collect()
}
