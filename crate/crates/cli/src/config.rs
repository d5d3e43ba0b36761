//! Problem files.
//!
//! A problem file is TOML. Every coefficient is an expression string in `t`
//! (kernels also in `tau`); matrices are written row-major as flat arrays.
//!
//! ```toml
//! [problem]
//! n = 1
//! T = 1.0
//!
//! [A]
//! entries = ["0"]
//!
//! [f]
//! entries = ["0.5"]
//!
//! [kernel]
//! kind = "degenerate"
//! phi = [["1"]]
//! psi = [["1"]]
//!
//! [condition]
//! d = [1.0]
//!
//! [[condition.points]]
//! t = 0.0
//! B = [1.0]
//!
//! [[condition.points]]
//! t = 1.0
//! B = [1.0]
//! ```

use std::path::Path;

use mpfide::densela::{Matrix, Vector};
use mpfide::expr::{Expression, Var};
use mpfide::model::{DegenerateKernel, Kernel, KernelFn, MatrixFn, MultipointCondition, Problem};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub problem: ProblemSection,
    #[serde(rename = "A")]
    pub a: Entries,
    pub f: Entries,
    pub kernel: KernelSection,
    pub condition: ConditionSection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entries {
    pub entries: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSection {
    Degenerate { phi: Vec<Vec<String>>, psi: Vec<Vec<String>> },
    General {
        #[serde(rename = "K")]
        k: Vec<String>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSection {
    pub d: Vec<f64>,
    pub points: Vec<PointSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSection {
    pub t: f64,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub degree: Option<usize>,
    pub h_max: Option<f64>,
    pub steps: Option<usize>,
    pub max_refinements: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<ProblemFile, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    /// Builds the problem, parsing every expression.
    pub fn to_problem(&self) -> Result<Problem, CliError> {
        let n = self.problem.n;
        if n == 0 {
            return Err(CliError::parse("problem.n must be positive"));
        }
        let a = MatrixFn::from_exprs(n, n, exprs("A.entries", &self.a.entries, n * n, false)?)?;
        let f = MatrixFn::from_exprs(n, 1, exprs("f.entries", &self.f.entries, n, false)?)?;
        let kernel = match &self.kernel {
            KernelSection::Degenerate { phi, psi } => {
                if phi.is_empty() || phi.len() != psi.len() {
                    return Err(CliError::parse(format!(
                        "kernel needs equally many phi and psi matrices (got {} and {})",
                        phi.len(),
                        psi.len()
                    )));
                }
                let build = |name: &str, mats: &[Vec<String>]| -> Result<Vec<MatrixFn>, CliError> {
                    mats.iter()
                        .enumerate()
                        .map(|(j, m)| {
                            let field = format!("kernel.{name}[{j}]");
                            Ok(MatrixFn::from_exprs(n, n, exprs(&field, m, n * n, false)?)?)
                        })
                        .collect()
                };
                Kernel::Degenerate(DegenerateKernel::new(build("phi", phi)?, build("psi", psi)?)?)
            }
            KernelSection::General { k } => Kernel::General(KernelFn::from_exprs(n, exprs("kernel.K", k, n * n, true)?)?),
        };

        let c = &self.condition;
        if c.d.len() != n {
            return Err(CliError::parse(format!("condition.d has {} entries, expected {n}", c.d.len())));
        }
        let mut points = Vec::with_capacity(c.points.len());
        let mut b = Vec::with_capacity(c.points.len());
        for (i, p) in c.points.iter().enumerate() {
            if p.b.len() != n * n {
                return Err(CliError::parse(format!(
                    "condition.points[{i}].B has {} entries, expected {}",
                    p.b.len(),
                    n * n
                )));
            }
            points.push(p.t);
            b.push(Matrix::new(n, n, p.b.clone()).map_err(|e| CliError::parse(format!("condition.points[{i}].B: {e}")))?);
        }
        let d = Vector::new(c.d.clone()).map_err(|e| CliError::parse(format!("condition.d: {e}")))?;
        let mut problem = Problem::new(a, kernel, f, MultipointCondition::new(points, b, d));
        problem.horizon = self.problem.horizon;
        Ok(problem)
    }
}

impl std::str::FromStr for ProblemFile {
    type Err = CliError;

    fn from_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse {
            field: None,
            offset: e.span().map(|s| s.start),
            message: e.message().to_string(),
        })
    }
}

fn exprs(field: &str, sources: &[String], expected: usize, allow_tau: bool) -> Result<Vec<Expression>, CliError> {
    if sources.len() != expected {
        return Err(CliError::parse(format!(
            "{field} has {} entries, expected {expected}",
            sources.len()
        )));
    }
    sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let field = format!("{field}[{i}]");
            let e = Expression::parse(src).map_err(|e| CliError::Parse {
                field: Some(field.clone()),
                offset: e.offset(),
                message: e.to_string(),
            })?;
            if !allow_tau && e.mentions(Var::Tau) {
                return Err(CliError::Parse {
                    field: Some(field),
                    offset: None,
                    message: "only the kernel may depend on tau".into(),
                });
            }
            Ok(e)
        })
        .collect()
}
