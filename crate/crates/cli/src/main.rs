#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use duom::samplers::{SamplerConfig, SamplerKind};
use duom_cli::commands;
use duom_cli::server::{serve_blocking, MockMode};
use duom_cli::{CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "duom", version, about = "Trainable Ohzeki-method solver for constrained QUBO")]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Sampler kind: mh, sqa, exact or remote (overrides the config).
    #[arg(long = "sampler.kind", global = true)]
    sampler_kind: Option<SamplerKind>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate evaluation and training instances.
    GenData,
    /// Train a step-size schedule on the training instances.
    Train {
        /// Schedule name; defaults to the sampler kind.
        #[arg(long)]
        name: Option<String>,
    },
    /// Solve one instance with a constant step or a schedule file.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Execute a learned schedule with the configured sampler.
    Transfer {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Grid-search a constant step size.
    Gridsearch,
    /// Compare methods on the evaluation instances.
    Benchmark,
    /// Serve the remote sampler protocol locally.
    ServeMock {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Response returned in fixed mode.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Inverse temperature in proxy mode when no config is given.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Sweeps per read in proxy mode when no config is given.
        #[arg(long, default_value_t = 1000)]
        sweeps: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fixed,
    ProxyMh,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        sampler_kind: cli.sampler_kind,
    });
    Ok(cfg)
}

fn print_solve(out: &commands::SolveOutput) {
    let zero = out
        .first_zero_mse
        .map_or("never".to_string(), |t| format!("at iteration {t}"));
    println!(
        "{}: {} iterations, best loss {}, final MSE {}, MSE 0 reached {zero}",
        out.label,
        out.iterations,
        out.best_loss,
        out.final_mse.map_or("n/a".to_string(), |m| m.to_string()),
    );
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData => {
            let m = commands::cmd_gen_data(&load_config(&cli)?)?;
            println!("wrote {} files", m.files.len());
        }
        Command::Train { name } => {
            let m = commands::cmd_train(&load_config(&cli)?, name.as_deref())?;
            for f in &m.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Solve { instance, schedule } => {
            let (_, out) = commands::cmd_solve(&load_config(&cli)?, instance, schedule.as_deref())?;
            print_solve(&out);
        }
        Command::Transfer { instance, schedule } => {
            let (_, out) = commands::cmd_transfer(&load_config(&cli)?, instance, schedule)?;
            print_solve(&out);
        }
        Command::Gridsearch => {
            let (_, grid) = commands::cmd_gridsearch(&load_config(&cli)?)?;
            println!("best eta {}", grid.best_eta);
        }
        Command::Benchmark => {
            commands::cmd_benchmark(&load_config(&cli)?)?;
        }
        Command::ServeMock {
            port,
            mode,
            fixture,
            beta,
            sweeps,
        } => {
            let mode = match mode {
                Mode::Fixed => {
                    let path = fixture
                        .as_ref()
                        .ok_or_else(|| CliError::Config("fixed mode needs --fixture".into()))?;
                    MockMode::fixed_from_file(path)?
                }
                Mode::ProxyMh => {
                    let base = match &cli.config {
                        Some(_) => load_config(&cli)?.sampler.config,
                        None => SamplerConfig::new(*beta).with_reads(1, *sweeps),
                    };
                    base.validate().map_err(|e| CliError::Config(e.to_string()))?;
                    MockMode::ProxyMh(base)
                }
            };
            serve_blocking(SocketAddr::from(([127, 0, 0, 1], *port)), mode)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
