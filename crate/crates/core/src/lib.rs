//! Parameterization method for linear Fredholm integro-differential systems
//! with multipoint boundary conditions.
//!
//! The problem
//!
//! ```text
//! x'(t) = A(t) x(t) + ∫_0^T K(t, τ) x(τ) dτ + f(t),   t ∈ (0, T)
//! Σ_{i=0}^{m} B_i x(t_i) = d,                          0 = t_0 < … < t_m = T
//! ```
//!
//! is split at the condition points, the left endpoint values of each
//! subinterval become unknown parameters, and for degenerate kernels
//! `K(t, τ) = Σ_j φ_j(t) ψ_j(τ)` the whole problem reduces to one dense
//! linear system for those parameters ([`degsolve`]). General kernels are
//! approximated by degenerate ones ([`kapprox`]) and the residual is removed
//! by a fixed-point iteration ([`itersolve`]).
//!
//! ```
//! use mpfide::prelude::*;
//!
//! // x' = ∫_0^1 x(τ) dτ + 1/2,  x(0) + x(1) = 1  has the solution x(t) = t.
//! let kernel = DegenerateKernel::new(
//!     vec![MatrixFn::scalar(|_| 1.0)],
//!     vec![MatrixFn::scalar(|_| 1.0)],
//! ).unwrap();
//! let problem = Problem::new(
//!     MatrixFn::scalar(|_| 0.0),
//!     Kernel::Degenerate(kernel),
//!     MatrixFn::scalar(|_| 0.5),
//!     MultipointCondition::new(
//!         vec![0.0, 1.0],
//!         vec![Matrix::scalar(1.0), Matrix::scalar(1.0)],
//!         Vector::new(vec![1.0]).unwrap(),
//!     ),
//! );
//! let sol = solve_degenerate(&problem, &SolveOptions::default()).unwrap();
//! assert!(sol.max_error(&MatrixFn::scalar(|t| t)).unwrap() < 1e-12);
//! ```

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod degsolve;
pub mod densela;
pub mod error;
pub mod expr;
pub mod itersolve;
pub mod kapprox;
pub mod model;
pub mod odequad;
pub mod refcheck;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::degsolve::{solve_degenerate, PreparedProblem, SolveOptions};
    pub use crate::densela::{Matrix, Vector};
    pub use crate::error::{Error, Result};
    pub use crate::expr::Expression;
    pub use crate::itersolve::{solve_nondegenerate, IterOptions, IterationTrace};
    pub use crate::kapprox::{build_degenerate_approx, estimate_epsilon, ApproximationReport};
    pub use crate::model::{
        DegenerateKernel, Kernel, KernelFn, MatrixFn, MeshPolicy, MultipointCondition, Partition,
        Problem, Solution,
    };
}
