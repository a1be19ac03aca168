use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use fedentropy::datagen;
use fedentropy::experiment::{self, ExperimentConfig};
use fedentropy::federation::TrainingState;
use fedentropy::selftest;

#[derive(Parser)]
#[command(
    name = "fedentropy",
    version,
    about = "Federated learning with maximum-entropy device grouping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed(s), comma separated. Overrides `seeds`.
    #[arg(long)]
    seed: Option<String>,
    /// Mode(s), comma separated. Overrides `modes`.
    #[arg(long)]
    mode: Option<String>,
    /// Accuracy target for rounds-to-target (fraction in [0, 1]).
    #[arg(long)]
    target_acc: Option<String>,
    /// Any other config key, e.g. `--set rounds=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = Vec::new();
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            overrides.push((k.to_string(), v.to_string()));
        }
        for (key, value) in [
            ("seeds", &self.seed),
            ("modes", &self.mode),
            ("target_accuracy", &self.target_acc),
        ] {
            if let Some(v) = value {
                overrides.push((key.to_string(), v.clone()));
            }
        }
        Ok(experiment::load_config(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured (mode, seed) pair and write rounds.csv and summary.csv.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Write the per-device class histogram of the configured partition.
    PartitionStats {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the judgment-oracle and gradient-check suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Run { cfg, out_dir } => {
            let cfg = cfg.load()?;
            let result = experiment::run_experiment(&cfg)?;
            let (rounds, summary) = experiment::write_outputs(&result, &out_dir)?;
            for s in &result.summaries {
                let rounds_txt = match s.rounds_to_target_stats() {
                    Some((m, sd)) => format!("{m:.2}±{sd:.2}"),
                    None if s.target_accuracy.is_some() => format!(">{}", s.rounds),
                    None => "-".into(),
                };
                writeln!(
                    out,
                    "{:<20} accuracy {:.2}±{:.2}%  rounds-to-target {}",
                    s.mode.name(),
                    100.0 * s.accuracy_mean,
                    100.0 * s.accuracy_std,
                    rounds_txt
                )?;
            }
            writeln!(out, "wrote {} and {}", rounds.display(), summary.display())?;
            Ok(true)
        }
        Command::PartitionStats { cfg, out_dir } => {
            let cfg = cfg.load()?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for &seed in &cfg.seeds {
                let state = TrainingState::new(&cfg.run_config(cfg.modes[0], seed))?;
                let stats = datagen::partition_stats(&state.partition, &state.train);
                let path = out_dir.join(format!("partition_seed{seed}.csv"));
                stats.save(&path)?;
                writeln!(out, "wrote {}", path.display())?;
            }
            Ok(true)
        }
        Command::Selftest { seed } => {
            let mut ok = true;
            for check in selftest::run_all(seed)? {
                writeln!(
                    out,
                    "[{}] {}: {}",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                )?;
                ok &= check.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
