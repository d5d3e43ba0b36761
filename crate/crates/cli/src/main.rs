use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpfide_cli::{run_check, run_solve, Format, RunConfig};

/// Solve multipoint boundary value problems for linear Fredholm
/// integro-differential systems.
#[derive(Parser)]
#[command(name = "mpfide", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the problem and write the solution table.
    Solve(Opts),
    /// Validate the problem and report regularity and well-posedness
    /// diagnostics without solving.
    Check(Opts),
}

#[derive(Args)]
struct Opts {
    /// Problem file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Solution table path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report path; stderr when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Chebyshev degree for general kernels.
    #[arg(long)]
    degree: Option<usize>,
    /// Largest RK4 step.
    #[arg(long)]
    hmax: Option<f64>,
    /// Iteration tolerance for general kernels.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Midpoint refinements allowed when the partition is not regular.
    #[arg(long)]
    max_refine: Option<usize>,
}

impl From<Opts> for RunConfig {
    fn from(o: Opts) -> Self {
        RunConfig {
            config: o.config,
            out: o.out,
            report: o.report,
            format: o.format,
            degree: o.degree,
            h_max: o.hmax,
            tol: o.tol,
            max_iter: o.max_iter,
            max_refine: o.max_refine,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Cmd::Solve(o) => run_solve(&o.into()),
        Cmd::Check(o) => run_check(&o.into()),
    };
    ExitCode::from(code as u8)
}
