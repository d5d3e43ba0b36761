//! The guide in `book/`, compiled as documentation so that `cargo test`
//! runs every snippet in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/expressions.md")]
pub mod expressions {}
#[doc = include_str!("../../../book/src/problem-files.md")]
pub mod problem_files {}
#[doc = include_str!("../../../book/src/parameterization.md")]
pub mod parameterization {}
#[doc = include_str!("../../../book/src/numerics.md")]
pub mod numerics {}
#[doc = include_str!("../../../book/src/wellposedness.md")]
pub mod wellposedness {}
#[doc = include_str!("../../../book/src/general-kernels.md")]
pub mod general_kernels {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
