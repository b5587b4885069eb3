use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use igabem::bem::{QuadConfig, Rhs};
use igabem::driver::{run_observed, Mode, OutputPaths, RunConfig, StopReason};
use igabem::estimators::EstimatorKind;
use igabem::geometry::GeometryKind;
use igabem::report::{fit_line, write_indicators, write_report, INDICATOR_HEADER};
use igabem::trace::{write_triplets, MeshTrace};
use igabem::{Error, Result};

/// Adaptive isogeometric BEM for the 2D single-layer equation.
#[derive(Parser)]
#[command(name = "igabem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive or uniform loop and write a report.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    geometry: GeometryKind,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value = "mu")]
    estimator: EstimatorKind,
    #[arg(long, default_value = "adaptive")]
    mode: Mode,
    #[arg(long, default_value_t = 2000)]
    max_dofs: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// right-hand side: one, x1, abs-pow or abs-pow:<exponent>
    #[arg(long, default_value = "one")]
    rhs: Rhs,
    /// elements of the initial mesh
    #[arg(long, default_value_t = 4)]
    n0: usize,
    #[arg(long, default_value_t = 16)]
    quad_n: usize,
    #[arg(long, default_value_t = 16)]
    quad_log_n: usize,
    /// write zero instead of wall times, for reproducible reports
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
    #[arg(long)]
    dump_indicators: Option<PathBuf>,
    /// Galerkin matrix of the last level as `i j value` lines
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            geometry: self.geometry,
            p: self.p,
            theta: self.theta,
            estimator: self.estimator,
            mode: self.mode,
            rhs: self.rhs,
            max_dofs: self.max_dofs,
            max_iters: self.max_iters,
            quad: QuadConfig {
                n: self.quad_n,
                log_n: self.quad_log_n,
            },
            n0: self.n0,
            timing: !self.no_timing,
            outputs: OutputPaths {
                out: self.out.clone(),
                dump_mesh: self.dump_mesh.clone(),
                dump_indicators: self.dump_indicators.clone(),
                dump_matrix: self.dump_matrix.clone(),
            },
            ..RunConfig::default()
        }
    }
}

fn create(path: &Option<PathBuf>) -> Result<Option<BufWriter<File>>> {
    path.as_ref()
        .map(|p| {
            File::create(p)
                .map(BufWriter::new)
                .map_err(|e| Error::Config(format!("cannot create {}: {e}", p.display())))
        })
        .transpose()
}

fn execute(args: &RunArgs) -> Result<()> {
    let config = args.config();
    config.validate()?;
    let outputs = &config.outputs;
    let mut out = create(&outputs.out)?;
    let mut mesh_file = create(&outputs.dump_mesh)?;
    let mut indicator_file = create(&outputs.dump_indicators)?;
    let mut matrix_file = create(&outputs.dump_matrix)?;
    if let Some(w) = indicator_file.as_mut() {
        writeln!(w, "{INDICATOR_HEADER}")?;
    }
    let mut last_matrix: Option<DMatrix<f64>> = None;

    let report = run_observed(&config, |level| {
        let iter = level.record.iter;
        if let Some(w) = mesh_file.as_mut() {
            MeshTrace::of(iter, level.mesh).write(w)?;
        }
        if let Some(w) = indicator_file.as_mut() {
            write_indicators(w, iter, level.mu, level.eta)?;
        }
        if matrix_file.is_some() {
            last_matrix = Some(level.system.matrix.clone());
        }
        Ok(())
    })?;
    if report.stop == StopReason::Resolution {
        eprintln!("warning: stopped at the resolution limit of double precision");
    }

    if let (Some(w), Some(a)) = (matrix_file.as_mut(), &last_matrix) {
        write_triplets(w, a)?;
    }
    for w in [&mut mesh_file, &mut indicator_file, &mut matrix_file]
        .into_iter()
        .flatten()
    {
        w.flush()?;
    }
    let stdout = io::stdout();
    let mut console = stdout.lock();
    match out.as_mut() {
        Some(w) => {
            write_report(w, &report)?;
            w.flush()?;
            let last = report.records.last();
            writeln!(
                console,
                "{} iterations, {} dofs, {} = {:e}",
                report.records.len(),
                last.map_or(0, |r| r.dofs),
                config.estimator,
                last.map_or(f64::NAN, |r| r.estimator(config.estimator))
            )?;
            writeln!(console, "stopped: {}", report.stop)?;
            writeln!(console, "{}", fit_line(&report).trim_start_matches("# "))?;
        }
        None => write_report(&mut console, &report)?,
    }
    console.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => execute(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
