use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dpkm::data::{gen_synthetic, load_csv, normalize, to_csv, write_csv, SyntheticSpec};
use dpkm::error_models::DEFAULT_RHO;
use dpkm::eugkm::{eugkm_grid, publish_synopsis, DEFAULT_THETA};
use dpkm::harness::{predict_table, run_experiment, ExperimentConfig, PredictLattice, Protocol};
use dpkm::{Budget, DpError, Rng};

#[derive(Parser)]
#[command(name = "dpkm", version, about = "Differentially private k-means benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-mixture CSV and its true centers.
    Gen {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        separation: f64,
        /// Cluster standard deviation (default separation / 6).
        #[arg(long)]
        std: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV for the points.
        #[arg(long)]
        out: PathBuf,
        /// Output CSV for the true centers (default `<out>.centers.csv`).
        #[arg(long)]
        centers: Option<PathBuf>,
    },
    /// Run an experiment config and print the report CSV.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// 10 initial sets and 10 repetitions per algorithm.
        #[arg(long, conflicts_with = "paper")]
        desk: bool,
        /// Full protocol: 30 initial sets, 100 runs per set, and so on.
        #[arg(long)]
        paper: bool,
        /// Record wall-clock time per row.
        #[arg(long)]
        timing: bool,
    },
    /// Publish a noisy grid synopsis of a CSV dataset.
    Synopsis {
        csv: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the error-model table over a parameter lattice.
    Predict {
        #[arg(long, value_delimiter = ',', default_value = "10000")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2")]
        d: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "5")]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        t: usize,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = DEFAULT_RHO)]
        rho: f64,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &DpError) -> u8 {
    match err {
        DpError::Parameter(_) | DpError::Config(_) | DpError::Infeasible(_) => 2,
        DpError::Io { .. } | DpError::Format { .. } => 3,
        DpError::Budget { .. } | DpError::Audit(_) => 4,
    }
}

fn emit(text: &str, out: Option<&Path>) -> dpkm::Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| DpError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> dpkm::Result<()> {
    match cli.command {
        Command::Gen {
            d,
            k,
            n,
            separation,
            std,
            r,
            seed,
            out,
            centers,
        } => {
            let spec = SyntheticSpec {
                d,
                k,
                n,
                separation,
                cluster_std: std,
                r,
                seed,
            };
            let (data, truth) = gen_synthetic(&spec)?;
            write_csv(&data, &out)?;
            let centers = centers.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".centers.csv");
                PathBuf::from(p)
            });
            let text = to_csv(truth.as_flat().chunks_exact(d));
            fs::write(&centers, text).map_err(|e| DpError::io(&centers, e))
        }
        Command::Run {
            config,
            out,
            desk,
            paper,
            timing,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if desk {
                cfg.protocol = Protocol::Desk;
            } else if paper {
                cfg.protocol = Protocol::Paper;
            }
            cfg.timing |= timing;
            let report = run_experiment(&cfg)?;
            emit(&report.to_csv(), out.as_deref())
        }
        Command::Synopsis {
            csv,
            eps,
            theta,
            r,
            seed,
            out,
        } => {
            let data = normalize(&load_csv(&csv, None)?, r)?;
            let grid = eugkm_grid(data.n(), data.d(), r, eps, theta)?;
            let mut budget = Budget::new(eps)?;
            let mut rng = Rng::new(seed);
            let synopsis = publish_synopsis(&data, &grid, eps, &mut rng, &mut budget)?;
            emit(&synopsis.to_text(), out.as_deref())
        }
        Command::Predict {
            n,
            d,
            k,
            eps,
            t,
            r,
            rho,
            theta,
            out,
        } => {
            let lattice = PredictLattice {
                n,
                d,
                k,
                eps,
                t,
                r,
                rho,
                theta,
            };
            emit(&predict_table(&lattice), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
