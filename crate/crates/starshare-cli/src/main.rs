//! Command-line driver for the starshare library.
//!
//! One configuration file describes the network and per-command inputs;
//! every command writes deterministic output files into a chosen directory.
//! Timestamps appear only in the sidecar `run.log`, never in data files.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use starshare_cli::commands::{self, CliError, CmdOutcome};
use starshare_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "starshare",
    version,
    about = "Rate calculus, simulation, and tail-decay estimation for bandwidth-sharing star networks"
)]
struct Cli {
    /// Path to the experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the configuration's `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Size of the worker pool for parallel replications and multistarts.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Evaluate the local rate L(x, D) with its face and cost breakdown.
    Rate,
    /// Simulate one trajectory; write histograms and decay estimates.
    Simulate,
    /// Optimize the variational tail decay rate of one channel.
    Optimize,
    /// Sweep the reference three-channel network and tabulate decay rates.
    ExampleFig4,
    /// Evaluate the cost of holding a set of routes near the origin.
    StayCost,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Rate => "rate",
            Command::Simulate => "simulate",
            Command::Optimize => "optimize",
            Command::ExampleFig4 => "example-fig4",
            Command::StayCost => "stay-cost",
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Appends run metadata to the sidecar log; the one file allowed to differ
/// between reruns.
fn append_log(out: &Path, lines: &[String]) {
    let path = out.join("run.log");
    if let Ok(mut file) = OpenOptions::new().create(true).append(true).open(path) {
        for line in lines {
            let _ = writeln!(file, "{line}");
        }
    }
}

fn run(cli: &Cli) -> Result<CmdOutcome, CliError> {
    if let Some(threads) = cli.threads {
        // Ignore the error when a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let config_path = cli.config.as_ref().ok_or_else(|| {
        CliError::Validation("--config PATH is required; see --help".to_string())
    })?;
    let text = fs::read_to_string(config_path).map_err(|e| {
        CliError::Validation(format!("--config {}: {e}", config_path.display()))
    })?;
    let mut config = ExperimentConfig::from_json(&text)?;
    config.apply_overrides(
        cli.out.as_ref().and_then(|p| p.to_str()),
        cli.seed,
    );

    let out = PathBuf::from(&config.output.directory);
    fs::create_dir_all(&out)?;
    append_log(
        &out,
        &[format!("{} start {}", unix_now(), cli.command.name())],
    );

    let outcome = match cli.command {
        Command::Rate => commands::cmd_rate(&config, &out),
        Command::Simulate => commands::cmd_simulate(&config, &out),
        Command::Optimize => commands::cmd_optimize(&config, &out),
        Command::ExampleFig4 => commands::cmd_example_fig4(&config, &out),
        Command::StayCost => commands::cmd_stay_cost(&config, &out),
    };

    let mut log_lines = Vec::new();
    match &outcome {
        Ok(result) => {
            for warning in &result.warnings {
                log_lines.push(format!("{} warning {}", unix_now(), warning));
            }
            log_lines.push(format!(
                "{} done {} exit {}",
                unix_now(),
                cli.command.name(),
                result.exit_code
            ));
        }
        Err(err) => {
            log_lines.push(format!(
                "{} error {} exit {}: {err}",
                unix_now(),
                cli.command.name(),
                err.code()
            ));
        }
    }
    append_log(&out, &log_lines);
    outcome
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code() as u8)
        }
    }
}
