//! The `solve` and `check` commands.

use std::path::PathBuf;

use mpfide::degsolve::{
    assemble_param_system, regular_tables, wellposedness_diagnostics, PreparedProblem, SolveOptions,
};
use mpfide::itersolve::{solve_nondegenerate, IterOptions};
use mpfide::kapprox::{build_degenerate_approx, ApproximationReport};
use mpfide::model::{validate, Kernel, MeshPolicy, Problem};

use crate::config::ProblemFile;
use crate::output::{self, Format};
use crate::report::Report;
use crate::CliError;

pub const DEFAULT_DEGREE: usize = 6;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_MAX_REFINE: usize = 6;

/// Paths and command-line overrides for one run. Overrides take precedence
/// over the `[solver]` section of the problem file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub format: Format,
    pub degree: Option<usize>,
    pub h_max: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_refine: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Check,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Check => "check",
        }
    }
}

/// Result of a run: exit status, serialized report, and the table when one
/// was produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub report: Report,
    pub table: Option<String>,
}

impl Outcome {
    pub fn report_json(&self) -> String {
        output::to_json(&self.report)
    }
}

struct Settings {
    degree: usize,
    solve: SolveOptions,
    iter: IterOptions,
}

fn settings(cfg: &RunConfig, file: &ProblemFile) -> Result<Settings, CliError> {
    let s = &file.solver;
    let tol = cfg.tol.or(s.tol).unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CliError::parse(format!("tol must be positive, got {tol}")));
    }
    let h_max = cfg.h_max.or(s.h_max);
    if let Some(h) = h_max {
        if !(h > 0.0 && h.is_finite()) {
            return Err(CliError::parse(format!("h_max must be positive, got {h}")));
        }
    }
    let mesh = match (cfg.h_max, s.steps, h_max) {
        (Some(h), _, _) => Some(MeshPolicy::MaxStep(h)),
        (None, Some(steps), _) => Some(MeshPolicy::Steps(steps)),
        (None, None, h) => h.map(MeshPolicy::MaxStep),
    };
    let solve = SolveOptions {
        mesh,
        max_refinements: cfg.max_refine.or(s.max_refinements).unwrap_or(DEFAULT_MAX_REFINE),
        certify: true,
    };
    Ok(Settings {
        degree: cfg.degree.or(s.degree).unwrap_or(DEFAULT_DEGREE),
        iter: IterOptions {
            tol,
            max_iter: cfg.max_iter.or(s.max_iter).unwrap_or(DEFAULT_MAX_ITER),
            solve: solve.clone(),
            ..Default::default()
        },
        solve,
    })
}

fn load(cfg: &RunConfig, report: &mut Report) -> Result<(Problem, Settings), CliError> {
    let file = ProblemFile::load(&cfg.config)?;
    let problem = file.to_problem()?;
    let settings = settings(cfg, &file)?;
    report.set_problem(&problem);
    let findings = validate(&problem);
    if !findings.is_empty() {
        return Err(CliError::Invalid(findings));
    }
    Ok((problem, settings))
}

fn solve(cfg: &RunConfig, report: &mut Report) -> Result<String, CliError> {
    let (problem, s) = load(cfg, report)?;
    let sol = match &problem.kernel {
        Kernel::Degenerate(_) => {
            let prepared = PreparedProblem::new(&problem, &s.solve)?;
            let norm = prepared.tables.m_inv.as_ref().map_or(f64::NAN, |m| m.max_norm());
            report.set_regularity(&prepared.partition, prepared.refinements, Some(&prepared.tables), norm);
            prepared.solve()?
        }
        Kernel::General(_) => {
            let (sol, trace) = solve_nondegenerate(&problem, s.degree, &s.iter)?;
            report.set_trace(&trace);
            report.approximation = Some(crate::report::ApproximationEntry {
                degree: s.degree,
                rank: s.degree + 1,
                epsilon: trace.epsilon,
                epsilon_kind: "measured".to_string(),
                t_points: s.iter.epsilon_grid.t_points,
                tau_steps: s.iter.epsilon_grid.tau_steps,
            });
            report.set_regularity(
                &sol.partition,
                sol.diagnostics.refinements,
                None,
                sol.diagnostics.norm_inv_i_minus_g,
            );
            sol
        }
    };
    report.set_diagnostics(&sol.diagnostics);
    Ok(output::table(&sol, cfg.format))
}

fn check(cfg: &RunConfig, report: &mut Report) -> Result<(), CliError> {
    let (problem, s) = load(cfg, report)?;
    let (problem, approx): (Problem, Option<ApproximationReport>) = match &problem.kernel {
        Kernel::Degenerate(_) => (problem, None),
        Kernel::General(k) => {
            let a = build_degenerate_approx(k, s.degree, problem.horizon, problem.n)?;
            report.set_approximation(&a);
            (problem.with_kernel(Kernel::Degenerate(a.kernel.clone())), Some(a))
        }
    };
    let (part, tables, refinements) = regular_tables(&problem, &s.solve)?;
    let norm = tables.m_inv.as_ref().map_or(f64::NAN, |m| m.max_norm());
    report.set_regularity(&part, refinements, Some(&tables), norm);
    let sys = assemble_param_system(&problem, &part, &tables)?;
    let w = wellposedness_diagnostics(&problem, &part, &tables, &sys, true).ok_or(mpfide::Error::NotWellPosed)?;
    report.set_wellposedness(&w);
    if let Some(a) = approx {
        let q = mpfide::itersolve::SAFETY * w.n_constant * a.epsilon;
        report.iteration = Some(crate::report::IterationEntry {
            q_estimate: q,
            c_k: w.n_constant,
            epsilon: a.epsilon,
            norm_fd: f64::NAN,
            converged: false,
            steps: Vec::new(),
        });
    }
    if !w.qstar_certified {
        return Err(CliError::NotCertified {
            product: w.gamma * w.epsilon_h.unwrap_or(f64::INFINITY),
        });
    }
    Ok(())
}

/// Runs a command without touching the filesystem beyond reading the
/// problem file.
pub fn execute(command: Command, cfg: &RunConfig) -> Outcome {
    let mut report = Report::new(command.name());
    let result = match command {
        Command::Solve => solve(cfg, &mut report).map(Some),
        Command::Check => check(cfg, &mut report).map(|_| None),
    };
    match result {
        Ok(table) => Outcome {
            exit_code: 0,
            report,
            table,
        },
        Err(e) => {
            report.fail(&e);
            Outcome {
                exit_code: e.exit_code(),
                report,
                table: None,
            }
        }
    }
}

fn write(path: Option<&PathBuf>, text: &str, fallback: impl FnOnce(&str)) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            fallback(text);
            Ok(())
        }
    }
}

/// Executes and writes outputs: the table to `--out` (stdout by default) and
/// the report to `--report` (stderr by default). Returns the exit status.
pub fn run(command: Command, cfg: &RunConfig) -> i32 {
    let outcome = execute(command, cfg);
    let mut code = outcome.exit_code;
    if let Some(table) = &outcome.table {
        if let Err(e) = write(cfg.out.as_ref(), table, |t| print!("{t}")) {
            eprintln!("{e}");
            code = e.exit_code();
        }
    }
    if let Err(e) = write(cfg.report.as_ref(), &outcome.report_json(), |t| eprint!("{t}")) {
        eprintln!("{e}");
        code = e.exit_code();
    }
    code
}

pub fn run_solve(cfg: &RunConfig) -> i32 {
    run(Command::Solve, cfg)
}

pub fn run_check(cfg: &RunConfig) -> i32 {
    run(Command::Check, cfg)
}
