//! `charlee` command-line driver.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use charlee::{Error, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "charlee", version, about = "Channel-adaptive early exiting for multivariate time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Savings factor in [0, 1].
    #[arg(long)]
    delta: Option<f64>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Output root.
    #[arg(long, env = "CHARLEE_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test data and its ideal utilization table.
    Synth(Common),
    /// Rank channels and write the keep-priority order and groups.
    Rank(Common),
    /// Train one model per seed.
    Train(Common),
    /// Evaluate trained models on the test split.
    Eval(Common),
    /// Train and score the time-only baseline.
    Toee {
        #[command(flatten)]
        common: Common,
        /// Target savings; defaults to the mean savings of the evaluated runs.
        #[arg(long)]
        savings: Option<f64>,
    },
    /// Standalone classifier accuracy over truncation fractions.
    Viability(Common),
    /// Combine summary tables into a comparison table.
    Report {
        /// Directories searched recursively for summary.csv and toee.csv.
        dirs: Vec<PathBuf>,
        /// Output CSV; defaults to report.csv in the first directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// F1 margin separating a win or loss from a tie.
        #[arg(long, default_value_t = 0.01)]
        margin: f64,
    },
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = common.delta {
        cfg.delta = d;
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(e) = common.epochs {
        cfg.epochs = e;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    let root = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    Ok((cfg, root))
}

fn show(path: &Path) {
    println!("{}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let (cfg, root) = resolve(&c)?;
            show(&commands::synth(&cfg, &root)?);
        }
        Command::Rank(c) => {
            let (cfg, root) = resolve(&c)?;
            show(&commands::rank(&cfg, &root)?);
        }
        Command::Train(c) => {
            let (cfg, root) = resolve(&c)?;
            commands::train(&cfg, &root)?.iter().for_each(|d| show(d));
        }
        Command::Eval(c) => {
            let (cfg, root) = resolve(&c)?;
            for r in commands::eval(&cfg, &root)? {
                println!(
                    "seed {}: macro F1 {:.4}, savings {:.4}, reward {:.4}",
                    r.seed.unwrap_or_default(),
                    r.macro_f1,
                    r.mean_savings,
                    r.mean_reward
                );
            }
        }
        Command::Toee { common, savings } => {
            let (cfg, root) = resolve(&common)?;
            show(&commands::toee(&cfg, &root, savings)?);
        }
        Command::Viability(c) => {
            let (cfg, root) = resolve(&c)?;
            show(&commands::viability(&cfg, &root)?);
        }
        Command::Report { dirs, out, margin } => {
            let dirs = if dirs.is_empty() {
                vec![std::env::var_os("CHARLEE_OUT").map(PathBuf::from).unwrap_or_else(|| "runs".into())]
            } else {
                dirs
            };
            let rows = commands::report(&dirs, margin)?;
            let path = out.unwrap_or_else(|| dirs[0].join("report.csv"));
            commands::write_report(&rows, &path)?;
            println!("dataset\tdelta\tcharlee f1\tsavings\ttoee f1\tverdict");
            for r in &rows {
                let toee = r
                    .toee_f1_mean
                    .zip(r.toee_f1_std)
                    .map(|(m, s)| format!("{m:.4} ± {s:.4}"))
                    .unwrap_or_else(|| "-".into());
                let v = r.verdict.map(|v| format!("{v:?}").to_lowercase()).unwrap_or_else(|| "-".into());
                println!(
                    "{}\t{}\t{:.4} ± {:.4}\t{:.4} ± {:.4}\t{toee}\t{v}",
                    r.dataset, r.delta, r.charlee_f1_mean, r.charlee_f1_std, r.charlee_savings_mean, r.charlee_savings_std
                );
            }
            show(&path);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Input(_) | Error::Parse { .. } | Error::UnsupportedFormat(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
        Error::Numeric(_) | Error::Domain(_) | Error::Invariant(_) | Error::State(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
