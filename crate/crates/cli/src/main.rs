//! Command-line front end: `run`, `sweep`, `blocking` and `solve`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ranslice_core::harness::{self, GridValue, Scenario, SweepParam};
use ranslice_core::solver::{self, ConvexSubproblem};
use ranslice_core::Error;

#[derive(Parser)]
#[command(name = "ran-slicer", version, about = "Two-timescale RAN slicing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Run a single seed instead of the scenario's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of slot samples M.
    #[arg(long)]
    samples: Option<usize>,
    /// Number of minislots T.
    #[arg(long)]
    minislots: Option<usize>,
    /// Report CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-minislot CSV path.
    #[arg(long)]
    minislots_out: Option<PathBuf>,
    /// Slot decisions and beamformers as JSON.
    #[arg(long)]
    decisions_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (and its sweep, if it has one).
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep one parameter over a grid.
    Sweep {
        scenario: PathBuf,
        /// deadline, rate, eta, bandwidth, mode, snr_case or ue_count.
        #[arg(long)]
        param: String,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Blocking probabilities of the scenario's URLLC loss system.
    Blocking {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one serialized convex subproblem and print the result as JSON.
    Solve {
        subproblem: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_scenario(path: &Path, o: Option<&Overrides>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut s = Scenario::from_json(&text)?;
    if let Some(o) = o {
        if let Some(seed) = o.seed {
            s.seeds = vec![seed];
        }
        if o.samples.is_some() {
            s.samples = o.samples;
        }
        if o.minislots.is_some() {
            s.minislots = o.minislots;
        }
        s.validate()?;
    }
    Ok(s)
}

fn emit(report: &harness::RunReport, o: &Overrides) -> Result<()> {
    report.write_csv(output(o.out.as_deref())?)?;
    if let Some(p) = &o.minislots_out {
        report.write_minislot_csv(output(Some(p))?)?;
    }
    if let Some(p) = &o.decisions_out {
        serde_json::to_writer_pretty(output(Some(p))?, &report.jobs)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, overrides } => {
            let s = load_scenario(&scenario, Some(&overrides))?;
            emit(&harness::run(&s)?, &overrides)
        }
        Command::Sweep { scenario, param, grid, overrides } => {
            let s = load_scenario(&scenario, Some(&overrides))?;
            let param: SweepParam = param.parse()?;
            let grid: Vec<GridValue> = grid.iter().map(|g| GridValue::parse(g)).collect();
            emit(&harness::sweep(&s, param, &grid)?, &overrides)
        }
        Command::Blocking { scenario, out } => {
            let s = load_scenario(&scenario, None)?;
            harness::write_blocking_csv(&harness::blocking_report(&s)?, output(out.as_deref())?)?;
            Ok(())
        }
        Command::Solve { subproblem, out } => {
            let text = std::fs::read_to_string(&subproblem).with_context(|| format!("reading {}", subproblem.display()))?;
            let p: ConvexSubproblem =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("subproblem JSON: {e}")))?;
            let result = solver::solve(&p, &solver::SolverOptions::default())?;
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &result)?;
            writeln!(w)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Exit code 2 is reserved for infeasible scenarios, so usage errors exit 1.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Infeasible(_) | Error::Quorum { .. }) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
