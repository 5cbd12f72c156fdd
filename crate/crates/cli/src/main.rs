use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use bdd_core::geometry::make_grid;
use bdd_core::io::{
    create, read_boundary, read_dataset, write_bias_table, write_covariance, write_estimates, write_replications,
    write_report,
};
use bdd_core::oracle::fixed_h_bias;
use bdd_core::simulation::{default_grid, run_monte_carlo, DgpSpec, McConfig};
use bdd_core::{estimate_grid, Error, Euclidean, Result};
use clap::{Parser, Subcommand};

mod options;

use options::{parse_s_grid, Options};

#[derive(Parser)]
#[command(name = "bdd", version, about = "Distance-based estimation for boundary discontinuity designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate effects, intervals and a uniform band along a boundary.
    Estimate(Options),
    /// Monte Carlo study under the calibrated design.
    Simulate(Options),
    /// Exact fixed-bandwidth bias near the kink of a quadrant boundary.
    BiasOracle(Options),
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    /// Some points or replications failed; output was still written.
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Estimate(o) => o.resolve().and_then(|o| estimate(&o)),
        Command::Simulate(o) => o.resolve().and_then(|o| simulate(&o)),
        Command::BiasOracle(o) => o.resolve().and_then(|o| bias_oracle(&o)),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BDD_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidInput(format!("BDD_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut file = std::io::BufWriter::new(create(p)?);
            f(&mut file)?;
            file.flush().map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })
        }
        None => f(&mut std::io::stdout().lock()),
    }
}

fn estimate(o: &Options) -> Result<Status> {
    let sample = read_dataset(Options::require(&o.data, "data")?)?;
    let boundary = read_boundary(Options::require(&o.boundary, "boundary")?)?;
    let grid = make_grid(&boundary.polyline, o.grid_size())?;
    let cfg = o.fit_config()?;
    let est = estimate_grid(&sample, &boundary, &grid, &Euclidean, &cfg, o.seed())?;
    for w in &est.warnings {
        eprintln!(
            "warning: boundary length {:.4} within h = {:.4} of ({}, {}) is large; the band may be unreliable there",
            w.local_length, w.h, w.eval_pt.x1, w.eval_pt.x2
        );
    }
    for p in &est.points {
        if let Err(e) = &p.outcome {
            eprintln!("point {}: {e}", p.point_id + 1);
        }
    }
    with_output(o.out.as_deref(), |w| write_estimates(&est, w, o.precision()))?;
    if let (Some(path), Some(surface)) = (&o.dump_cov, &est.surface) {
        with_output(Some(path), |w| write_covariance(surface, w, o.precision()))?;
    }
    Ok(if est.failures() > 0 { Status::Partial } else { Status::Ok })
}

fn simulate(o: &Options) -> Result<Status> {
    let cfg = McConfig {
        dgp: DgpSpec::calibrated(),
        n: o.n.unwrap_or(5000),
        reps: o.reps.unwrap_or(100),
        grid: default_grid(o.grid_size(), o.grid_extent())?.points,
        fit: o.fit_config()?,
        seed: o.seed(),
    };
    let report = run_monte_carlo(&cfg)?;
    with_output(o.out.as_deref(), |w| write_report(&report, w, o.precision()))?;
    if let Some(path) = &o.reps_out {
        with_output(Some(path), |w| write_replications(&report.replications, w, o.precision()))?;
    }
    if !report.failures.is_empty() {
        eprintln!(
            "{} of {} replications failed (first: {})",
            report.failures.len(),
            report.reps_requested,
            report.failures[0].message
        );
    }
    if report.invalid {
        eprintln!("warning: failure rate above 5%; the report is not valid");
        return Ok(Status::Partial);
    }
    Ok(Status::Ok)
}

fn bias_oracle(o: &Options) -> Result<Status> {
    let h = *Options::require(&o.h, "h")?;
    let s_grid = match &o.s_grid {
        Some(spec) => parse_s_grid(spec)?,
        None => parse_s_grid(&format!("0:{h}:21"))?,
    };
    let rows = s_grid
        .iter()
        .map(|&s| fixed_h_bias(o.kernel(), o.p(), h, s).map(|b| (s, b)))
        .collect::<Result<Vec<_>>>()?;
    with_output(o.out.as_deref(), |w| write_bias_table(&rows, w, o.precision()))?;
    Ok(Status::Ok)
}
