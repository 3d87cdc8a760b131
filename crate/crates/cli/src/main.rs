use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vfeel_core::harness::{
    cmd_eval, cmd_gen_data, cmd_overhead, cmd_signal_demo, cmd_sweep, cmd_train, load_config, parse_config,
    ExperimentConfig, Profile, Report,
};
use vfeel_core::vfeel::Scheme;
use vfeel_core::{Error, Result};

/// Simulation testbed for vertical federated edge learning over distributed
/// ISAC.
#[derive(Parser)]
#[command(name = "vfeel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// full or reduced; overrides the configuration file.
    #[arg(long)]
    profile: Option<String>,
    /// Output directory; overrides the configuration file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single training seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Run every job on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/test spectrogram datasets.
    GenData(Common),
    /// Train one or more schemes for every seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Comma-separated scheme names; defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        scheme: Option<Vec<String>>,
    },
    /// Re-evaluate a stored checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: String,
    },
    /// Print the communication and computation overhead table.
    Overhead(Common),
    /// Write waveform, spectrogram and constellation plot data.
    SignalDemo {
        #[command(flatten)]
        common: Common,
        /// Post-correlation SNR of the constellation demo.
        #[arg(long, default_value_t = 15.0)]
        snr_db: f64,
        #[arg(long, default_value_t = 1_000_000)]
        bits: usize,
    },
    /// Generate data, train every configured scheme and summarize.
    Sweep(Common),
}

fn build_config(c: &Common) -> Result<ExperimentConfig> {
    let profile = c.profile.as_deref().map(Profile::parse).transpose()?;
    let mut cfg = match &c.config {
        Some(path) => load_config(path, profile)?,
        None => parse_config("", profile)?,
    };
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(list) = &c.seeds {
        if list.is_empty() {
            return Err(Error::Config("--seeds needs at least one value".into()));
        }
        cfg.seeds = list.clone();
    }
    if c.sequential {
        cfg.exec = vfeel_core::Execution::Sequential;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Report> {
    match cli.command {
        Command::GenData(c) => Ok(cmd_gen_data(&build_config(&c)?)?.1),
        Command::Train { common, scheme } => {
            let cfg = build_config(&common)?;
            let schemes = match scheme {
                Some(names) => names.iter().map(|n| Scheme::parse(n)).collect::<Result<Vec<_>>>()?,
                None => cfg.schemes.clone(),
            };
            Ok(cmd_train(&cfg, &schemes)?.1)
        }
        Command::Eval { common, scheme } => {
            let cfg = build_config(&common)?;
            let scheme = Scheme::parse(&scheme)?;
            let mut report = Report::default();
            for &seed in &cfg.seeds {
                let (_, r) = cmd_eval(&cfg, scheme, seed)?;
                report.lines.extend(r.lines);
            }
            Ok(report)
        }
        Command::Overhead(c) => Ok(cmd_overhead(&build_config(&c)?)?.1),
        Command::SignalDemo { common, snr_db, bits } => {
            let cfg = build_config(&common)?;
            Ok(cmd_signal_demo(&cfg, cfg.seeds[0], snr_db, bits)?.1)
        }
        Command::Sweep(c) => Ok(cmd_sweep(&build_config(&c)?)?.1),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            println!("{}", report.text());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Io { .. } => 3,
                Error::Format(_) => 4,
                _ => 1,
            })
        }
    }
}
