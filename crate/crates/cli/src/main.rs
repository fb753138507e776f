//! `xmodal`: probe, transform, train, iterate and report from one config.
//!
//! Exit codes: 0 success, 2 configuration, 3 data, 4 training, 5 i/o.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xmodal::harness::{self, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "xmodal", version, about = "Cross-modal CNN topology compiler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); every field has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent runs; overrides `parallel`.
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Measure per-modality informativeness.
    Probe(Common),
    /// Build the cross-modal blueprint.
    Transform(Common),
    /// Retention sweep: train the cross-modal network and the stacked base.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train this cross-modal blueprint instead of transforming per run.
        #[arg(long)]
        xblueprint: Option<PathBuf>,
    },
    /// Refine connection weights over generations (resumes from `<out>/iterate`).
    Iterate {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Summarize metrics.csv files into comparison tables.
    Report {
        /// Directory holding metrics.csv; defaults to --out or the config's output_dir.
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(c: &Common) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if c.parallel.is_some() {
        cfg.parallel = c.parallel;
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn announce(what: &str, path: &Path) {
    println!("{what}: {}", path.display());
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Probe(c) => {
            let (cfg, out) = resolve(&c)?;
            announce("informativeness", &harness::cmd_probe(&cfg, &out)?);
        }
        Command::Transform(c) => {
            let (cfg, out) = resolve(&c)?;
            announce("xblueprint", &harness::cmd_transform(&cfg, &out)?);
        }
        Command::Train { common, xblueprint } => {
            let (cfg, out) = resolve(&common)?;
            harness::cmd_train(&cfg, &out, xblueprint.as_deref())?;
            print!(
                "{}",
                std::fs::read_to_string(out.join(harness::REPORT_FILE)).unwrap_or_default()
            );
            announce("metrics", &out.join(harness::METRICS_FILE));
        }
        Command::Iterate { common, stop_after } => {
            let (cfg, out) = resolve(&common)?;
            match harness::cmd_iterate(&cfg, &out, stop_after)? {
                Some(row) => println!(
                    "best generation {} (val {:.4}), test accuracy {:.4}",
                    row.best_epoch, row.best_val_accuracy, row.test_accuracy
                ),
                None => println!(
                    "stopped early; rerun to resume from {}",
                    out.join("iterate").display()
                ),
            }
        }
        Command::Report { dir, common } => {
            let dir = match (dir, &common.out, &common.config) {
                (Some(d), _, _) => d,
                (None, Some(o), _) => o.clone(),
                (None, None, _) => resolve(&common)?.1,
            };
            print!("{}", harness::cmd_report(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xmodal: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
