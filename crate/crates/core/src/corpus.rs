//! Benchmark problems with known solutions.
//!
//! Most are manufactured: an exact solution `x*` is chosen and the forcing
//! and boundary data are derived from it with [`manufacture`].

use crate::densela::{Matrix, Vector};
use crate::model::{manufacture, DegenerateKernel, Kernel, KernelFn, MatrixFn, MultipointCondition, Problem};

/// A named problem and, when known, its exact solution.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: &'static str,
    pub problem: Problem,
    pub exact: Option<MatrixFn>,
}

fn scalar_condition(points: Vec<f64>, b: &[f64], d: f64) -> MultipointCondition {
    MultipointCondition::new(
        points,
        b.iter().map(|&v| Matrix::scalar(v)).collect(),
        Vector::new(vec![d]).expect("finite"),
    )
}

/// `x' = ∫_0^1 x dτ + 1/2`, `x(0) + x(1) = 1`; the solution is `x(t) = t`.
pub fn worked() -> Case {
    let dk = DegenerateKernel::new(vec![MatrixFn::scalar(|_| 1.0)], vec![MatrixFn::scalar(|_| 1.0)])
        .expect("rank one");
    Case {
        name: "worked",
        problem: Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::Degenerate(dk),
            MatrixFn::scalar(|_| 0.5),
            scalar_condition(vec![0.0, 1.0], &[1.0, 1.0], 1.0),
        ),
        exact: Some(MatrixFn::scalar(|t| t)),
    }
}

fn rotation() -> MatrixFn {
    MatrixFn::constant(Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]).expect("2x2"))
}

/// Rank-two polynomial kernel used by [`rotation_system`].
pub fn polynomial_kernel() -> DegenerateKernel {
    DegenerateKernel::new(
        vec![
            MatrixFn::new(2, 2, |_| Matrix::identity(2).scale(0.3)),
            MatrixFn::new(2, 2, |t| Matrix::from_rows(&[&[t, 0.5], &[0.0, 1.0 - t]]).expect("2x2")),
        ],
        vec![
            MatrixFn::new(2, 2, |tau| Matrix::from_rows(&[&[tau, 0.0], &[0.2, tau * tau]]).expect("2x2")),
            MatrixFn::new(2, 2, |tau| {
                Matrix::from_rows(&[&[0.1, -0.1 * tau], &[0.05 * tau, 0.2]]).expect("2x2")
            }),
        ],
    )
    .expect("rank two")
}

/// `n = 2`, `A` a rotation, `x* = (sin t, cos t)` on `[0, 2]` with a rank-two
/// polynomial kernel and a three-point condition at `0, 1, 2`.
pub fn rotation_system() -> Case {
    let xstar = MatrixFn::column(2, |t| vec![t.sin(), t.cos()]);
    let dx = MatrixFn::column(2, |t| vec![t.cos(), -t.sin()]);
    let b = vec![
        Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.5]]).expect("2x2"),
        Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).expect("2x2"),
        Matrix::from_rows(&[&[0.5, 0.0], &[1.0, 1.0]]).expect("2x2"),
    ];
    let problem = manufacture(
        &xstar,
        &dx,
        rotation(),
        Kernel::Degenerate(polynomial_kernel()),
        vec![0.0, 1.0, 2.0],
        b,
    )
    .expect("manufactured");
    Case {
        name: "rotation",
        problem,
        exact: Some(xstar),
    }
}

/// `x' = A(t) x + ∫ e^{-(t+τ)} x dτ + f` with variable `A`, a scalar
/// exponential-product kernel and `x* = e^{-t} + t^2 / 4` on `[0, 1.5]`,
/// four-point condition.
pub fn variable_coefficient() -> Case {
    let xstar = MatrixFn::scalar(|t| (-t).exp() + t * t / 4.0);
    let dx = MatrixFn::scalar(|t| -(-t).exp() + t / 2.0);
    let dk = DegenerateKernel::new(
        vec![MatrixFn::scalar(|t| (-t).exp())],
        vec![MatrixFn::scalar(|tau| (-tau).exp())],
    )
    .expect("rank one");
    let b = [1.0, 0.5, -0.25, 1.0].map(Matrix::scalar).to_vec();
    let problem = manufacture(
        &xstar,
        &dx,
        MatrixFn::scalar(|t| -0.5 + 0.3 * t),
        Kernel::Degenerate(dk),
        vec![0.0, 0.5, 1.0, 1.5],
        b,
    )
    .expect("manufactured");
    Case {
        name: "variable-coefficient",
        problem,
        exact: Some(xstar),
    }
}

/// Zero kernel, rotation, `x* = (sin t, cos t)`, two-point condition.
pub fn zero_kernel() -> Case {
    let xstar = MatrixFn::column(2, |t| vec![t.sin(), t.cos()]);
    let dx = MatrixFn::column(2, |t| vec![t.cos(), -t.sin()]);
    let problem = manufacture(
        &xstar,
        &dx,
        rotation(),
        Kernel::Degenerate(DegenerateKernel::zero(2)),
        vec![0.0, 1.0],
        vec![Matrix::identity(2), Matrix::identity(2)],
    )
    .expect("manufactured");
    Case {
        name: "zero-kernel",
        problem,
        exact: Some(xstar),
    }
}

/// General kernel `s e^{tτ}` on `[0, 1]`, `A = 0`, `x* ≡ 1`, `x(0) = 1`;
/// `f(t) = -s (e^t - 1) / t`.
pub fn exponential_kernel(scale: f64) -> Case {
    let f = MatrixFn::scalar(move |t| if t == 0.0 { -scale } else { -scale * t.exp_m1() / t });
    Case {
        name: "exponential-kernel",
        problem: Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::General(KernelFn::scalar(move |t, tau| scale * (t * tau).exp())),
            f,
            scalar_condition(vec![0.0, 1.0], &[1.0, 0.0], 1.0),
        ),
        exact: Some(MatrixFn::scalar(|_| 1.0)),
    }
}

/// General kernel `tτ` on `[0, 1]`, `x* = t`, `x(0) = 0`.
pub fn separable_general() -> Case {
    Case {
        name: "separable-general",
        problem: Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::General(KernelFn::scalar(|t, tau| t * tau)),
            MatrixFn::scalar(|t| 1.0 - t / 3.0),
            scalar_condition(vec![0.0, 1.0], &[1.0, 0.0], 0.0),
        ),
        exact: Some(MatrixFn::scalar(|t| t)),
    }
}

/// Strongly non-separable kernel `s sin(5 t τ)` with the data of
/// [`exponential_kernel`]; large `s` defeats the contraction test.
pub fn oscillating_kernel(scale: f64) -> Case {
    let base = exponential_kernel(1.0);
    Case {
        name: "oscillating-kernel",
        problem: base
            .problem
            .with_kernel(Kernel::General(KernelFn::scalar(move |t, tau| scale * (5.0 * t * tau).sin()))),
        exact: None,
    }
}

/// Zero boundary operators: `Q*` vanishes.
pub fn zero_boundary() -> Case {
    Case {
        name: "zero-boundary",
        problem: Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::Degenerate(DegenerateKernel::zero(1)),
            MatrixFn::scalar(|_| 1.0),
            scalar_condition(vec![0.0, 1.0], &[0.0, 0.0], 1.0),
        ),
        exact: None,
    }
}

/// `φ = ψ = √2` on `[0, 1]`: `G = 1` on the trivial partition, `1/2` after
/// one refinement.
pub fn singular_on_one_interval() -> Case {
    let s = std::f64::consts::SQRT_2;
    let dk = DegenerateKernel::new(vec![MatrixFn::scalar(move |_| s)], vec![MatrixFn::scalar(move |_| s)])
        .expect("rank one");
    Case {
        name: "singular-one-interval",
        problem: Problem::new(
            MatrixFn::scalar(|_| 0.0),
            Kernel::Degenerate(dk),
            MatrixFn::scalar(|_| 1.0),
            scalar_condition(vec![0.0, 1.0], &[1.0, 1.0], 1.0),
        ),
        exact: None,
    }
}

/// Problems with degenerate kernels and known solutions.
pub fn degenerate_cases() -> Vec<Case> {
    vec![worked(), rotation_system(), variable_coefficient(), zero_kernel()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;

    #[test]
    fn corpus_validates() {
        let mut all = degenerate_cases();
        all.extend([
            exponential_kernel(1.0),
            separable_general(),
            oscillating_kernel(40.0),
            zero_boundary(),
            singular_on_one_interval(),
        ]);
        for case in all {
            assert!(validate(&case.problem).is_empty(), "{}", case.name);
        }
    }
}
