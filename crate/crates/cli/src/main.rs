//! `nore` command line: pretrain the world model, run a single
//! preference-learning cell, run the full mechanism × volatility sweep, or
//! regenerate figures and the report from existing outputs.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nore_core::preferences::MechanismKind;
use nore_core::runner::{
    self, parse_config, ExperimentConfig, Profile,
};

#[derive(Parser)]
#[command(name = "nore", version, about = "Non-reinforced preference learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Plain-text config file (`[section]` + `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scale profile when no config file is given.
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the world model with the disagreement-driven explorer and
    /// write the checkpoint.
    Pretrain(CommonOpts),
    /// Run one mechanism × volatility cell against the checkpoint.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Preference mechanism: nore, pepper, or baseline-G.
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: Option<MechanismKind>,
        /// Layout reset period in steps, or `never`.
        #[arg(long)]
        reset_period: Option<String>,
    },
    /// Run the full 3-mechanism × 5-period sweep.
    Sweep(CommonOpts),
    /// Regenerate report.txt from the outputs already on disk.
    Report(CommonOpts),
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    Profile::parse(s).ok_or_else(|| format!("unknown profile `{s}` (expected desk or paper)"))
}

fn parse_mechanism(s: &str) -> Result<MechanismKind, String> {
    MechanismKind::parse(s)
        .ok_or_else(|| format!("unknown mechanism `{s}` (expected nore, pepper, or baseline-G)"))
}

fn parse_period(s: &str) -> Result<Option<u32>, String> {
    if s == "never" || s == "none" || s == "static" {
        return Ok(None);
    }
    let p: u32 = s.parse().map_err(|_| format!("bad period `{s}`"))?;
    if p == 0 {
        return Err("period must be >= 1".into());
    }
    Ok(Some(p))
}

fn load_config(common: &CommonOpts) -> Result<ExperimentConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            parse_config(&text).map_err(|e| e.to_string())?
        }
        None => ExperimentConfig::for_profile(common.profile.unwrap_or(Profile::Desk)),
    };
    if let Some(profile) = common.profile {
        if common.config.is_none() {
            cfg = ExperimentConfig::for_profile(profile);
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Pretrain(common) => {
            let cfg = load_config(&common)?;
            let report = runner::pretrain_world_model(&cfg).map_err(|e| e.to_string())?;
            println!(
                "pretrained {} steps; elbo {:.4} -> {:.4}; reconstruction accuracy {:.3}",
                report.train_steps,
                report.initial_elbo,
                report.final_elbo_smoothed,
                report.reconstruction_accuracy
            );
            println!("checkpoint: {}", report.manifest_path.display());
        }
        Command::Run {
            common,
            mechanism,
            reset_period,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = mechanism {
                cfg.mechanism = m;
            }
            if let Some(raw) = reset_period {
                let p = parse_period(&raw)?;
                cfg.reset_period = p;
                cfg.randomize_start = p.is_some();
            }
            let record = runner::run_single(&cfg).map_err(|e| e.to_string())?;
            println!(
                "ran {} episodes for {}; outputs in {}",
                record.trajectories.len(),
                record.label(),
                record.cell_dir.display()
            );
        }
        Command::Sweep(common) => {
            let cfg = load_config(&common)?;
            let report = runner::run_sweep(&cfg).map_err(|e| e.to_string())?;
            println!(
                "sweep complete: {} cells; exploration: {}; entropy: {}; report: {}",
                report.records.len(),
                report.exploration_csv.display(),
                report.entropy_csv.display(),
                report.report_path.display()
            );
        }
        Command::Report(common) => {
            let cfg = load_config(&common)?;
            let path = runner::write_report(&cfg).map_err(|e| e.to_string())?;
            println!("report: {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            // Single-line, machine-parsable error.
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
