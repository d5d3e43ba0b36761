//! Diagnostics report written next to the solution table.

use mpfide::degsolve::SpecialTables;
use mpfide::densela::Matrix;
use mpfide::itersolve::IterationTrace;
use mpfide::kapprox::ApproximationReport;
use mpfide::model::{Diagnostics, Partition, Problem, WellPosedness};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub command: String,
    pub status: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<FindingEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approximation: Option<ApproximationEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularity: Option<RegularityEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wellposedness: Option<WellPosednessEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iteration: Option<IterationEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorEntry {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FindingEntry {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemEntry {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub kernel: String,
    pub points: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApproximationEntry {
    pub degree: usize,
    pub rank: usize,
    pub epsilon: f64,
    pub epsilon_kind: String,
    pub t_points: usize,
    pub tau_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityEntry {
    pub regular: bool,
    pub refinements: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub partition: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_inv_i_minus_g: Option<f64>,
    #[serde(rename = "G", skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualEntry {
    pub boundary: f64,
    pub continuity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WellPosednessEntry {
    #[serde(rename = "N")]
    pub n_constant: f64,
    pub alpha: f64,
    pub omega: f64,
    pub phi_bar: f64,
    pub psi_bar: f64,
    pub norm_inv_i_minus_g: f64,
    pub gamma: f64,
    pub c_norm: f64,
    /// Which matrix the `||C||` factor was read as.
    pub c_norm_source: String,
    pub epsilon_h: Option<f64>,
    pub qstar_certified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationEntry {
    pub q_estimate: f64,
    pub c_k: f64,
    pub epsilon: f64,
    pub norm_fd: f64,
    pub converged: bool,
    pub steps: Vec<IterationStep>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationStep {
    pub i: usize,
    pub delta: Option<f64>,
    pub bound: f64,
}

pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

impl Report {
    pub fn new(command: &str) -> Self {
        Report {
            command: command.to_string(),
            status: "ok".to_string(),
            ..Default::default()
        }
    }

    pub fn fail(&mut self, err: &CliError) {
        self.status = "failed".to_string();
        self.exit_code = err.exit_code();
        let (field, offset) = match err {
            CliError::Parse { field, offset, .. } => (field.clone(), *offset),
            CliError::Solve(mpfide::Error::Expr(e)) => (None, e.offset()),
            _ => (None, None),
        };
        if let CliError::Invalid(findings) = err {
            self.findings = findings
                .iter()
                .map(|f| FindingEntry {
                    code: f.code.as_str().to_string(),
                    message: f.message.clone(),
                })
                .collect();
        }
        if let CliError::Solve(mpfide::Error::NotRegular { refinements }) = err {
            self.regularity = Some(RegularityEntry {
                regular: false,
                refinements: *refinements,
                partition: Vec::new(),
                steps: Vec::new(),
                norm_inv_i_minus_g: None,
                g: None,
                m: None,
            });
        }
        self.error = Some(ErrorEntry {
            code: err.code().to_string(),
            message: err.to_string(),
            field,
            offset,
        });
    }

    pub fn set_problem(&mut self, p: &Problem) {
        self.problem = Some(ProblemEntry {
            n: p.n,
            horizon: p.horizon,
            kernel: match p.kernel.as_degenerate() {
                Some(_) => "degenerate",
                None => "general",
            }
            .to_string(),
            points: p.condition.points.clone(),
        });
    }

    pub fn set_approximation(&mut self, a: &ApproximationReport) {
        self.approximation = Some(ApproximationEntry {
            degree: a.degree,
            rank: a.kernel.rank(),
            epsilon: a.epsilon,
            epsilon_kind: "measured".to_string(),
            t_points: a.sample_grid.t_points,
            tau_steps: a.sample_grid.tau_steps,
        });
    }

    pub fn set_regularity(&mut self, part: &Partition, refinements: usize, tables: Option<&SpecialTables>, norm: f64) {
        self.regularity = Some(RegularityEntry {
            regular: true,
            refinements,
            partition: part.points.clone(),
            steps: part.meshes.iter().map(|m| m.steps()).collect(),
            norm_inv_i_minus_g: Some(norm),
            g: tables.map(|t| matrix_rows(&t.g)),
            m: tables.and_then(|t| t.m_inv.as_ref()).map(matrix_rows),
        });
    }

    pub fn set_diagnostics(&mut self, d: &Diagnostics) {
        self.residuals = Some(ResidualEntry {
            boundary: d.boundary_residual,
            continuity: d.continuity_residual,
        });
        if let Some(w) = &d.wellposedness {
            self.set_wellposedness(w);
        }
    }

    pub fn set_wellposedness(&mut self, w: &WellPosedness) {
        self.wellposedness = Some(WellPosednessEntry {
            n_constant: w.n_constant,
            alpha: w.alpha,
            omega: w.omega,
            phi_bar: w.phi_bar,
            psi_bar: w.psi_bar,
            norm_inv_i_minus_g: w.norm_inv_i_minus_g,
            gamma: w.gamma,
            c_norm: w.c_norm,
            c_norm_source: "||B_m||".to_string(),
            epsilon_h: w.epsilon_h,
            qstar_certified: w.qstar_certified,
        });
    }

    pub fn set_trace(&mut self, t: &IterationTrace) {
        self.iteration = Some(IterationEntry {
            q_estimate: t.q_estimate,
            c_k: t.c_k,
            epsilon: t.epsilon,
            norm_fd: t.norm_fd,
            converged: t.converged,
            steps: t
                .bound_history
                .iter()
                .enumerate()
                .map(|(i, &bound)| IterationStep {
                    i,
                    delta: t.delta(i),
                    bound,
                })
                .collect(),
        });
    }
}
