use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use carmsim::config::{resolve_config, ConfigError, ExperimentConfig};
use carmsim::experiment::{prepare, run_cell_trial, run_experiment, ExperimentError};
use carmsim::perturbation::{focal_shift_mm, Cell};
use carmsim::report::{self, Metric, ReportError, ReportFormat};
use clap::{Parser, Subcommand, ValueEnum};

/// Intrinsic-calibration sensitivity simulator for biplanar C-arm rigs.
#[derive(Parser)]
#[command(name = "carmsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full perturbation grid and write the report.
    Simulate {
        /// Config file, or the name of a bundled config (sim_default, phantom_default).
        config: String,
        /// CSV report path; defaults to output.csv from the config, then report.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// JSON report path; defaults to output.json from the config.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Emit the filtered evaluation point set with per-point scores as CSV.
    Sample {
        config: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run one trial and print a breakdown.
    Trial {
        config: String,
        /// Signed focal-length perturbation (px).
        #[arg(long, allow_negative_numbers = true)]
        focal: f64,
        /// Principal-point perturbation level (px).
        #[arg(long)]
        pp: f64,
        /// Master seed; replaces the one in the config.
        #[arg(long)]
        seed: u64,
    },
    /// Extract one error-vs-focal curve from a CSV report.
    Figure {
        report: PathBuf,
        #[arg(long)]
        pp: f64,
        #[arg(long, value_enum, default_value_t = MetricArg::Recon)]
        metric: MetricArg,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Recon,
    ReprojAp,
    ReprojLat,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Recon => Metric::Recon,
            MetricArg::ReprojAp => Metric::ReprojAp,
            MetricArg::ReprojLat => Metric::ReprojLat,
        }
    }
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.into()),
            _ => Failure::Validation(e.into()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => c.into(),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::NoSuchPpLevel(_) | ReportError::Header(_) | ReportError::Schema(_) => {
                Failure::Validation(e.into())
            }
            other => Failure::Runtime(other.into()),
        }
    }
}

fn output(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(
    config: ExperimentConfig,
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
    threads: Option<usize>,
) -> Result<(), Failure> {
    let csv = csv
        .or_else(|| config.output.csv.clone())
        .unwrap_or_else(|| PathBuf::from("report.csv"));
    let json = json.or_else(|| config.output.json.clone());
    let start = Instant::now();
    let report = run_experiment(&config, threads)?;
    report::write_report(&report, ReportFormat::Csv, &csv)?;
    if let Some(j) = &json {
        report::write_report(&report, ReportFormat::Json, j)?;
    }
    let failed: usize = report.cells.iter().map(|c| c.n_failed).sum();
    let worst = report
        .cells
        .iter()
        .map(|c| c.recon_rmse.mean)
        .fold(f64::NAN, f64::max);
    eprintln!(
        "{} cells x {} trials on {} points in {:.1}s; {} failed; worst mean error {:.4} mm",
        report.cells.len(),
        config.perturbation.trials_per_cell,
        report.provenance.eval_points,
        start.elapsed().as_secs_f64(),
        failed,
        worst
    );
    eprintln!("wrote {}", csv.display());
    if let Some(j) = json {
        eprintln!("wrote {}", j.display());
    }
    if report.is_partial() {
        eprintln!("warning: partial results, some cells lost more than 10% of their trials");
    }
    Ok(())
}

fn sample(config: ExperimentConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let setup = prepare(&config)?;
    let w = output(out.as_ref())?;
    report::write_point_table(&setup.eval_points, &setup.rig, w)?;
    eprintln!("{} points", setup.eval_points.len());
    Ok(())
}

fn trial(mut config: ExperimentConfig, focal: f64, pp: f64, seed: u64) -> Result<(), Failure> {
    config.seed = seed;
    let setup = prepare(&config)?;
    let cell = Cell {
        index: 0,
        focal_level: focal,
        pp_level: pp,
    };
    let start = Instant::now();
    let r = run_cell_trial(&config, &setup, &cell, 0).context("trial failed")?;
    let elapsed = start.elapsed();
    println!("seed                {seed}");
    println!("mode                {}", config.perturbation.mode);
    println!(
        "points              {} eval, {} landmarks",
        setup.eval_points.len(),
        setup.landmarks().len()
    );
    println!(
        "focal delta         AP {:+.3} px, LAT {:+.3} px ({:+.1} mm at {} mm/px)",
        r.focal_delta_ap,
        r.focal_delta_lat,
        focal_shift_mm(r.focal_delta_ap),
        carmsim::perturbation::NOMINAL_PIXEL_SPACING_MM
    );
    println!(
        "pp delta            AP ({:+.3}, {:+.3}) px, LAT ({:+.3}, {:+.3}) px",
        r.pp_delta_ap.x, r.pp_delta_ap.y, r.pp_delta_lat.x, r.pp_delta_lat.y
    );
    println!(
        "pose refinement     AP {} ({} steps), LAT {} ({} steps)",
        if r.converged_ap {
            "converged"
        } else {
            "did not converge"
        },
        r.iterations_ap,
        if r.converged_lat {
            "converged"
        } else {
            "did not converge"
        },
        r.iterations_lat
    );
    println!("recon_rmse          {:.6e} mm", r.recon_rmse);
    println!("recon_rmse (raw)    {:.6e} mm", r.recon_rmse_unaligned);
    println!("reproj_ap           {:.6e} px", r.reproj_ap);
    println!("reproj_lat          {:.6e} px", r.reproj_lat);
    println!("elapsed             {:.3} s", elapsed.as_secs_f64());
    Ok(())
}

fn figure(path: PathBuf, pp: f64, metric: MetricArg, out: Option<PathBuf>) -> Result<(), Failure> {
    let file = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    let cells = report::read_csv(file)?;
    let curve = report::figure_curve(&cells, pp, metric.into())?;
    report::write_curve(&curve, output(out.as_ref())?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            config,
            csv,
            json,
            threads,
        } => simulate(resolve_config(&config)?, csv, json, threads),
        Command::Sample { config, out } => sample(resolve_config(&config)?, out),
        Command::Trial {
            config,
            focal,
            pp,
            seed,
        } => trial(resolve_config(&config)?, focal, pp, seed),
        Command::Figure {
            report,
            pp,
            metric,
            out,
        } => figure(report, pp, metric, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
