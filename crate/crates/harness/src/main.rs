use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use obbo_harness::report::write_report;
use obbo_harness::run::{run_config, RunOptions, RunStatus};
use obbo_harness::validate::validate_config;
use obbo_harness::HarnessConfig;

#[derive(Parser)]
#[command(
    name = "obbo",
    version,
    about = "Run and summarize online bilevel optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a config and write traces plus a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out_dir` in the config and OBBO_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds replacing each experiment's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Worker threads; 0 or unset uses all cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate a results directory into plot-ready tables.
    Report {
        #[arg(long, env = "OBBO_OUT_DIR", default_value = "results")]
        dir: PathBuf,
    },
    /// Check parameters of a config against its streams' constants.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve_out_dir(cli: Option<PathBuf>, config: &HarnessConfig, base: &Path) -> PathBuf {
    if let Some(p) = cli {
        return p;
    }
    if let Some(p) = &config.out_dir {
        return if p.is_absolute() { p.clone() } else { base.join(p) };
    }
    std::env::var_os("OBBO_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            jobs,
        } => {
            let cfg = HarnessConfig::load(&config)?;
            let base = config_dir(&config);
            if cfg.experiment.is_empty() {
                eprintln!("warning: {} defines no experiments", config.display());
            }
            let opts = RunOptions {
                out_dir: resolve_out_dir(out, &cfg, &base),
                seeds,
                jobs,
                base_dir: base,
            };
            let manifest = run_config(&cfg, &opts)?;
            let failed: Vec<_> = manifest.runs.iter().filter(|r| r.status == RunStatus::Failed).collect();
            for r in &failed {
                eprintln!(
                    "run {} seed {} failed: {}",
                    r.experiment,
                    r.seed,
                    r.error.as_deref().unwrap_or("")
                );
            }
            println!(
                "{} runs, {} failed; results in {}",
                manifest.runs.len(),
                failed.len(),
                opts.out_dir.display()
            );
            Ok(if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Report { dir } => {
            let summary = write_report(&dir)?;
            for m in &summary.missing {
                eprintln!("missing run: {m}");
            }
            println!(
                "wrote {} files to {}",
                summary.files.len(),
                dir.join("report").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = HarnessConfig::load(&config)?;
            let findings = validate_config(&cfg, &config_dir(&config));
            for f in &findings {
                println!("{f}");
            }
            if findings.is_empty() {
                println!("no findings");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
