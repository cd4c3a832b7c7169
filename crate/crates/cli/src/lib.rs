//! File formats, configuration and command drivers behind the `wbary`
//! binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{InputSpec, RunConfig};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "wbary", version, about = "Wasserstein barycenters on a grid by mirror descent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Barycenter of point clouds, histograms, densities or Gaussians.
    Barycenter(RunArgs),
    /// Closed-form covariance iteration for Gaussian inputs.
    Gaussian(RunArgs),
    /// Draw samples from a stored density.
    Sample(SampleArgs),
    /// Single transport solve, printing the W2² estimate and its residual.
    Ot(OtArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.set)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// `kind,path[,weight]`; replaces the inputs of the config file.
    #[arg(long = "input", value_name = "KIND,PATH[,WEIGHT]")]
    pub inputs: Vec<InputSpec>,
    /// Print the resolved configuration, defaults included, and exit.
    #[arg(long)]
    pub dump_config: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = self.config.resolve()?;
        if !self.inputs.is_empty() {
            cfg.inputs = self.inputs.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Density grid file.
    #[arg(long)]
    pub density: PathBuf,
    /// Number of samples.
    #[arg(short = 'n', long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output point cloud CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OtArgs {
    #[arg(long, value_name = "KIND,PATH")]
    pub source: InputSpec,
    #[arg(long, value_name = "KIND,PATH")]
    pub target: InputSpec,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Runs a parsed command line, printing results to stdout.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Barycenter(args) => {
            let cfg = args.resolve()?;
            if args.dump_config {
                print!("{}", cfg.dump());
                return Ok(());
            }
            let report = commands::barycenter(&cfg)?;
            println!("best_k = {}", report.best_k);
            println!("best_objective = {}", formats::fmt_f64(report.best_objective));
            Ok(())
        }
        Command::Gaussian(args) => {
            let cfg = args.resolve()?;
            if args.dump_config {
                print!("{}", cfg.dump());
                return Ok(());
            }
            let bw = commands::gaussian(&cfg)?;
            println!("final_bw_distance = {}", formats::fmt_f64(bw));
            Ok(())
        }
        Command::Sample(args) => commands::sample(&args.density, args.n, args.seed, &args.out),
        Command::Ot(args) => {
            let cfg = args.config.resolve()?;
            let report = commands::ot(&args.source, &args.target, &cfg)?;
            println!("method = {}", if report.semidiscrete { "semidiscrete" } else { "discrete" });
            println!("w2_squared = {}", formats::fmt_f64(report.w2_squared));
            println!("residual = {}", formats::fmt_f64(report.residual));
            Ok(())
        }
    }
}
