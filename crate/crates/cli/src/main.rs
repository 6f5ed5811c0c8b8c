use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nbsim::backdoor::{builtin_triggers, triggers_json};
use nbsim::config::{parse_config, presets, ExperimentConfig};
use nbsim::experiment::{output_dir, run_experiment, verify, RunOptions};

/// Federated-learning simulator for non-cooperative backdoor attacks.
#[derive(Parser)]
#[command(name = "nbsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment from a TOML file or a built-in preset name.
    Run {
        config: String,
        /// Output directory (default: config `output_dir`, else runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Validate and print the resolved configuration without training.
        #[arg(long)]
        dry_run: bool,
        /// Print every round instead of every 10th.
        #[arg(long)]
        verbose: bool,
    },
    /// Trigger catalogue.
    Triggers {
        #[command(subcommand)]
        cmd: TriggersCmd,
    },
    /// Re-run the config recorded in a manifest and diff the round CSVs.
    Verify {
        manifest: PathBuf,
        /// Where to write the re-run (default: <manifest dir>/verify).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// List the built-in presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Subcommand)]
enum TriggersCmd {
    /// Print the eight built-in triggers as JSON.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &str) -> nbsim::Result<ExperimentConfig> {
    let path = Path::new(config);
    if path.exists() || config.ends_with(".toml") || config.contains(std::path::MAIN_SEPARATOR) {
        return parse_config(path);
    }
    let cfg = presets::load(config)?;
    cfg.validate(true)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> nbsim::Result<ExitCode> {
    match cli.cmd {
        Cmd::Run {
            config,
            out,
            threads,
            dry_run,
            verbose,
        } => {
            let cfg = load(&config)?;
            let opts = RunOptions { out_dir: out, threads };
            if dry_run {
                println!("{}", cfg.resolved().to_json_pretty());
                println!("output directory: {}", output_dir(&cfg, &opts).display());
                return Ok(ExitCode::SUCCESS);
            }
            let summary = run_experiment(&cfg, &opts, |r| {
                if verbose || r.round % 10 == 0 {
                    eprintln!("round {:>5}  MA {:>7.2}  BA_Avg {:>7.2}", r.round, r.ma, r.ba_avg());
                }
            })?;
            println!("{}", summary.line());
        }
        Cmd::Triggers {
            cmd: TriggersCmd::Export { out },
        } => {
            let json = triggers_json(&builtin_triggers(10)?);
            match out {
                Some(p) => std::fs::write(&p, json + "\n").map_err(|e| nbsim::Error::io(&p, e))?,
                None => println!("{json}"),
            }
        }
        Cmd::Verify { manifest, out, threads } => {
            let out = out.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("verify"));
            let report = verify(&manifest, &out, threads)?;
            match &report.first_mismatch {
                None => println!("identical: {} rounds match", report.rows_compared),
                Some((line, want, got)) => {
                    println!("MISMATCH at line {line}\n  recorded: {want}\n  rerun:    {got}");
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Cmd::Presets { name: None } => {
            for n in presets::names() {
                println!("{n}");
            }
        }
        Cmd::Presets { name: Some(n) } => {
            presets::load(&n)?;
            print!("{}", presets::source(&n).unwrap_or_default());
        }
    }
    Ok(ExitCode::SUCCESS)
}
