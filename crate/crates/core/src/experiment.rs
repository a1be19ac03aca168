//! Experiment configuration, multi-seed runs and CSV reporting.
//!
//! Configuration is a flat `key = value` text file (`#` starts a comment);
//! command-line overrides are applied on top. Every key has a default, so an
//! empty file is a valid configuration.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::datagen::{BlobSpec, CaseKind, HeterogeneityCase};
use crate::error::{Error, Result};
use crate::federation::{
    run_training, ClientConfig, LocalOptimizer, RoundReport, RunConfig, SelectionStrategy,
};
use crate::scheduler::SelectionConfig;

/// Rounds at the end of a run whose accuracy is averaged for the summary.
pub const DEFAULT_LAST_K: usize = 10;

/// Default accuracy target for rounds-to-target on the default blobs task.
pub const DEFAULT_TARGET_ACCURACY: f64 = 0.8;

/// Which selection strategy and local optimizer a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    FedEntropy,
    FedAvgRandom,
    FedProxRandom,
    FedProxFedEntropy,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::FedEntropy,
        Mode::FedAvgRandom,
        Mode::FedProxRandom,
        Mode::FedProxFedEntropy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::FedEntropy => "fedentropy",
            Mode::FedAvgRandom => "fedavg_random",
            Mode::FedProxRandom => "fedprox_random",
            Mode::FedProxFedEntropy => "fedprox_fedentropy",
        }
    }

    pub fn strategy(&self) -> SelectionStrategy {
        match self {
            Mode::FedEntropy | Mode::FedProxFedEntropy => SelectionStrategy::Entropy,
            Mode::FedAvgRandom | Mode::FedProxRandom => SelectionStrategy::Random,
        }
    }

    pub fn optimizer(&self, mu: f64) -> LocalOptimizer {
        match self {
            Mode::FedEntropy | Mode::FedAvgRandom => LocalOptimizer::FedAvg,
            Mode::FedProxRandom | Mode::FedProxFedEntropy => LocalOptimizer::FedProx { mu },
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::config(
                "modes",
                format!("unknown mode `{s}` (fedentropy, fedavg_random, fedprox_random, fedprox_fedentropy)"),
            )
        })
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub blobs: BlobSpec,
    pub test_fraction: f64,
    pub case: CaseKind,
    pub beta: f64,
    /// Hidden tanh units; `None` for a linear softmax model.
    pub hidden: Option<usize>,
    pub devices: usize,
    pub fraction: f64,
    pub epsilon: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub mu: f64,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub target_accuracy: Option<f64>,
    pub last_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            blobs: BlobSpec {
                classes: 10,
                dims: 16,
                per_class: 200,
                spread: 0.5,
            },
            test_fraction: 0.2,
            case: CaseKind::SingleLabel,
            beta: 0.1,
            hidden: None,
            devices: 20,
            fraction: 0.25,
            epsilon: 0.8,
            local_epochs: 5,
            batch_size: 50,
            learning_rate: 0.01,
            momentum: 0.5,
            mu: 0.01,
            rounds: 100,
            seeds: vec![1, 2, 3],
            modes: vec![Mode::FedEntropy, Mode::FedAvgRandom],
            target_accuracy: Some(DEFAULT_TARGET_ACCURACY),
            last_k: DEFAULT_LAST_K,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "classes" => self.blobs.classes = parse_value(key, value)?,
            "dims" => self.blobs.dims = parse_value(key, value)?,
            "per_class" => self.blobs.per_class = parse_value(key, value)?,
            "spread" => self.blobs.spread = parse_value(key, value)?,
            "test_fraction" => self.test_fraction = parse_value(key, value)?,
            "case" => self.case = value.parse()?,
            "beta" => self.beta = parse_value(key, value)?,
            "hidden" => {
                let h: usize = match value {
                    "" | "none" => 0,
                    v => parse_value(key, v)?,
                };
                self.hidden = (h > 0).then_some(h);
            }
            "devices" => self.devices = parse_value(key, value)?,
            "fraction" => self.fraction = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "local_epochs" => self.local_epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "mu" => self.mu = parse_value(key, value)?,
            "rounds" => self.rounds = parse_value(key, value)?,
            "seeds" | "seed" => self.seeds = parse_list(key, value)?,
            "modes" | "mode" => {
                self.modes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "target_accuracy" | "target_acc" => {
                self.target_accuracy = match value {
                    "" | "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "last_k" => self.last_k = parse_value(key, value)?,
            other => return Err(Error::config(other, "unknown configuration key")),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults (not yet validated).
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.modes.is_empty() {
            return Err(Error::config("modes", "at least one mode is required"));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("target_accuracy", format!("{t} is outside [0, 1]")));
            }
        }
        if self.last_k < 1 {
            return Err(Error::config("last_k", "must be at least 1"));
        }
        if self.case == CaseKind::Dirichlet && !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", format!("{} must be positive", self.beta)));
        }
        // component checks
        self.run_config(self.modes[0], self.seeds[0]).validate()
    }

    pub fn heterogeneity(&self) -> HeterogeneityCase {
        match self.case {
            CaseKind::SingleLabel => HeterogeneityCase::SingleLabel,
            CaseKind::TwoLabel => HeterogeneityCase::TwoLabel,
            CaseKind::Dirichlet => HeterogeneityCase::Dirichlet { beta: self.beta },
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            device_count: self.devices,
            fraction: self.fraction,
            epsilon: self.epsilon,
        }
    }

    pub fn run_config(&self, mode: Mode, seed: u64) -> RunConfig {
        RunConfig {
            blobs: self.blobs,
            test_fraction: self.test_fraction,
            case: self.heterogeneity(),
            hidden: self.hidden,
            selection: self.selection(),
            client: ClientConfig {
                local_epochs: self.local_epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                momentum: self.momentum,
                optimizer: mode.optimizer(self.mu),
            },
            strategy: mode.strategy(),
            rounds: self.rounds,
            seed,
        }
    }
}

/// Reads an optional config file, applies `overrides` in order, validates.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })?;
            ExperimentConfig::parse_str(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reports of one (mode, seed) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub mode: Mode,
    pub seed: u64,
    pub reports: Vec<RoundReport>,
}

/// Per-mode aggregate over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: Mode,
    pub seeds: usize,
    pub rounds: usize,
    /// Last-k averaged accuracy of each seed.
    pub final_accuracy: Vec<f64>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// First round reaching the target, per seed (`None`: never reached).
    pub rounds_to_target: Vec<Option<usize>>,
    pub bytes_models_to_target: Vec<Option<usize>>,
    pub bytes_labels_to_target: Vec<Option<usize>>,
    pub bytes_models_total: Vec<usize>,
    pub target_accuracy: Option<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn all_reached(values: &[Option<usize>]) -> Option<Vec<f64>> {
    values.iter().map(|v| v.map(|x| x as f64)).collect()
}

impl SummaryRow {
    /// Mean/std of rounds-to-target, `None` if a seed never reached it.
    pub fn rounds_to_target_stats(&self) -> Option<(f64, f64)> {
        self.target_accuracy?;
        all_reached(&self.rounds_to_target).map(|v| mean_std(&v))
    }

    pub fn bytes_models_to_target_mean(&self) -> Option<f64> {
        self.target_accuracy?;
        all_reached(&self.bytes_models_to_target).map(|v| mean_std(&v).0)
    }

    pub fn bytes_labels_to_target_mean(&self) -> Option<f64> {
        self.target_accuracy?;
        all_reached(&self.bytes_labels_to_target).map(|v| mean_std(&v).0)
    }
}

/// Last-k averaged accuracy of one run.
pub fn last_k_accuracy(reports: &[RoundReport], k: usize) -> f64 {
    let tail = &reports[reports.len().saturating_sub(k)..];
    tail.iter().map(|r| r.test_accuracy).sum::<f64>() / tail.len() as f64
}

/// Index (1-based round) of the first report with accuracy ≥ target.
pub fn rounds_to_target(reports: &[RoundReport], target: f64) -> Option<usize> {
    reports
        .iter()
        .find(|r| r.test_accuracy >= target)
        .map(|r| r.round)
}

/// Builds the summary of one mode from its per-seed reports.
pub fn summarize(mode: Mode, runs: &[&[RoundReport]], target: Option<f64>, last_k: usize) -> SummaryRow {
    let final_accuracy: Vec<f64> = runs.iter().map(|r| last_k_accuracy(r, last_k)).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&final_accuracy);
    let hit: Vec<Option<usize>> = runs
        .iter()
        .map(|r| target.and_then(|t| rounds_to_target(r, t)))
        .collect();
    let upto = |r: &[RoundReport], n: Option<usize>, f: fn(&RoundReport) -> usize| {
        n.map(|n| r.iter().take(n).map(f).sum())
    };
    SummaryRow {
        mode,
        seeds: runs.len(),
        rounds: runs.first().map_or(0, |r| r.len()),
        accuracy_mean,
        accuracy_std,
        bytes_models_to_target: runs
            .iter()
            .zip(&hit)
            .map(|(r, &n)| upto(r, n, |x| x.bytes_models))
            .collect(),
        bytes_labels_to_target: runs
            .iter()
            .zip(&hit)
            .map(|(r, &n)| upto(r, n, |x| x.bytes_labels))
            .collect(),
        bytes_models_total: runs
            .iter()
            .map(|r| r.iter().map(|x| x.bytes_models).sum())
            .collect(),
        final_accuracy,
        rounds_to_target: hit,
        target_accuracy: target,
    }
}

/// All runs plus one summary per mode (in config order).
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<SummaryRow>,
}

/// Runs every (mode, seed) pair and summarizes per mode.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let jobs: Vec<(Mode, u64)> = cfg
        .modes
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let outcome = run_training(&cfg.run_config(mode, seed))?;
            Ok(RunRecord {
                mode,
                seed,
                reports: outcome.reports,
            })
        })
        .collect::<Result<_>>()?;
    let summaries = cfg
        .modes
        .iter()
        .map(|&mode| {
            let per_seed: Vec<&[RoundReport]> = runs
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| r.reports.as_slice())
                .collect();
            summarize(mode, &per_seed, cfg.target_accuracy, cfg.last_k)
        })
        .collect();
    Ok(ExperimentResult { runs, summaries })
}

pub const ROUND_CSV_HEADER: [&str; 11] = [
    "round",
    "mode",
    "seed",
    "accuracy",
    "selected",
    "accepted",
    "rejected",
    "entropy_initial",
    "entropy_final",
    "bytes_models",
    "bytes_labels",
];

pub const SUMMARY_CSV_HEADER: [&str; 12] = [
    "mode",
    "seeds",
    "accuracy_mean",
    "accuracy_std",
    "test_accuracy_pct",
    "rounds_to_target_mean",
    "rounds_to_target_std",
    "communication_rounds",
    "target_accuracy",
    "bytes_models_to_target_mean",
    "bytes_labels_to_target_mean",
    "bytes_models_total_mean",
];

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// One row per round per run, in run order.
pub fn write_round_csv(runs: &[RunRecord], path: &Path) -> Result<()> {
    if runs.iter().all(|r| r.reports.is_empty()) {
        return Err(Error::Empty("round reports"));
    }
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(ROUND_CSV_HEADER).map_err(&err)?;
    for run in runs {
        for r in &run.reports {
            w.write_record([
                r.round.to_string(),
                run.mode.to_string(),
                run.seed.to_string(),
                r.test_accuracy.to_string(),
                r.selected.len().to_string(),
                r.accepted.len().to_string(),
                r.rejected.len().to_string(),
                r.entropy_initial.to_string(),
                r.entropy_final.to_string(),
                r.bytes_models.to_string(),
                r.bytes_labels.to_string(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Summary table: numeric columns plus `mean±std` renderings of accuracy
/// (percent) and rounds-to-target. An unreached target renders as `>T`.
pub fn write_summary(summaries: &[SummaryRow], path: &Path) -> Result<()> {
    if summaries.is_empty() {
        return Err(Error::Empty("summaries"));
    }
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(SUMMARY_CSV_HEADER).map_err(&err)?;
    for s in summaries {
        let mut pct = String::new();
        let _ = write!(
            pct,
            "{:.2}±{:.2}",
            100.0 * s.accuracy_mean,
            100.0 * s.accuracy_std
        );
        let (rounds_mean, rounds_std, rounds_fmt) = match (s.target_accuracy, s.rounds_to_target_stats()) {
            (None, _) => (String::new(), String::new(), String::new()),
            (Some(_), Some((m, sd))) => (m.to_string(), sd.to_string(), format!("{m:.2}±{sd:.2}")),
            (Some(_), None) => {
                let sentinel = format!(">{}", s.rounds);
                (sentinel.clone(), String::new(), sentinel)
            }
        };
        let total: Vec<f64> = s.bytes_models_total.iter().map(|&b| b as f64).collect();
        w.write_record([
            s.mode.to_string(),
            s.seeds.to_string(),
            s.accuracy_mean.to_string(),
            s.accuracy_std.to_string(),
            pct,
            rounds_mean,
            rounds_std,
            rounds_fmt,
            opt(s.target_accuracy),
            opt(s.bytes_models_to_target_mean()),
            opt(s.bytes_labels_to_target_mean()),
            mean_std(&total).0.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `rounds.csv` and `summary.csv` under `out_dir` and returns their paths.
pub fn write_outputs(result: &ExperimentResult, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let rounds = out_dir.join("rounds.csv");
    let summary = out_dir.join("summary.csv");
    write_round_csv(&result.runs, &rounds)?;
    write_summary(&result.summaries, &summary)?;
    Ok((rounds, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn report(round: usize, acc: f64, accepted: usize) -> RoundReport {
        RoundReport {
            round,
            selected: (0..3).collect(),
            accepted: (0..accepted).collect(),
            rejected: (accepted..3).collect(),
            primary_pool: None,
            entropy_initial: 1.0,
            entropy_final: 1.0,
            bytes_models: accepted * 80,
            bytes_labels: 48,
            test_accuracy: acc,
            positive_pool: 0,
            negative_pool: 0,
            wall_time: Duration::ZERO,
        }
    }

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = ExperimentConfig::parse_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.epsilon, 0.8);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.momentum, 0.5);
        assert_eq!(cfg.batch_size, 50);
        assert_eq!(cfg.local_epochs, 5);
        assert_eq!(cfg.mu, 0.01);
        assert_eq!(cfg.beta, 0.1);
        cfg.validate().unwrap();
    }

    #[test]
    fn parses_keys_and_comments() {
        let cfg = ExperimentConfig::parse_str(
            "# desk run\nrounds = 7\nseeds = 4, 5\nmodes=fedentropy,fedprox_random\ncase = dirichlet # skewed\nbeta=0.5\nhidden = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.rounds, 7);
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.modes, vec![Mode::FedEntropy, Mode::FedProxRandom]);
        assert_eq!(cfg.heterogeneity(), HeterogeneityCase::Dirichlet { beta: 0.5 });
        assert_eq!(cfg.hidden, Some(8));
    }

    #[test]
    fn none_disables_optional_keys() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("hidden", "4").unwrap();
        cfg.set("hidden", "none").unwrap();
        cfg.set("target_acc", "none").unwrap();
        assert_eq!(cfg.hidden, None);
        assert_eq!(cfg.target_accuracy, None);
    }

    fn field_of(err: Error) -> String {
        match err {
            Error::InvalidConfig { field, .. } => field,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("epsilon", "1.5").unwrap();
        assert_eq!(field_of(cfg.validate().unwrap_err()), "epsilon");

        let mut cfg = ExperimentConfig::default();
        cfg.set("case", "dirichlet").unwrap();
        cfg.set("beta", "0").unwrap();
        assert_eq!(field_of(cfg.validate().unwrap_err()), "beta");

        let mut cfg = ExperimentConfig::default();
        assert_eq!(
            field_of(cfg.set("learning_rat", "0.1").unwrap_err()),
            "learning_rat"
        );
        assert_eq!(field_of(cfg.set("rounds", "many").unwrap_err()), "rounds");
        assert_eq!(
            field_of(ExperimentConfig::parse_str("rounds 3").unwrap_err()),
            "line 1"
        );
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "rounds = 3\nepsilon = 0.5\n").unwrap();
        let cfg = load_config(Some(&path), &[("rounds".into(), "9".into())]).unwrap();
        assert_eq!(cfg.rounds, 9);
        assert_eq!(cfg.epsilon, 0.5);
        let missing = load_config(Some(&dir.path().join("nope.cfg")), &[]);
        assert!(matches!(missing, Err(Error::Io { .. })));
    }

    #[test]
    fn summary_statistics() {
        let a: Vec<RoundReport> = (1..=12).map(|r| report(r, r as f64 / 20.0, 2)).collect();
        let b: Vec<RoundReport> = (1..=12).map(|r| report(r, 0.1, 3)).collect();
        let s = summarize(Mode::FedEntropy, &[&a, &b], Some(0.25), 10);
        // a: rounds 3..=12 → mean 7.5/20
        assert!((s.final_accuracy[0] - 0.375).abs() < 1e-12);
        assert!((s.final_accuracy[1] - 0.1).abs() < 1e-12);
        assert!((s.accuracy_mean - (0.375 + 0.1) / 2.0).abs() < 1e-12);
        assert_eq!(s.rounds_to_target, vec![Some(5), None]);
        assert_eq!(s.bytes_models_to_target[0], Some(5 * 160));
        assert_eq!(s.rounds_to_target_stats(), None);

        let single = summarize(Mode::FedEntropy, &[&a], Some(0.0), 10);
        assert_eq!(single.accuracy_std, 0.0);
        assert_eq!(single.rounds_to_target, vec![Some(1)]);
        assert_eq!(single.rounds_to_target_stats(), Some((1.0, 0.0)));
    }

    #[test]
    fn summary_csv_renders_unreached_target() {
        let a: Vec<RoundReport> = (1..=4).map(|r| report(r, 0.1, 3)).collect();
        let b: Vec<RoundReport> = (1..=4).map(|r| report(r, 0.9, 3)).collect();
        let rows = vec![
            summarize(Mode::FedAvgRandom, &[&a], Some(0.5), 10),
            summarize(Mode::FedEntropy, &[&b], Some(0.5), 10),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], SUMMARY_CSV_HEADER.join(","));
        assert!(lines[1].starts_with("fedavg_random,1,0.1,0,10.00±0.00,>4,,>4,0.5,"));
        assert!(lines[2].contains(",1,0,1.00±0.00,"));
    }

    #[test]
    fn round_csv_rows() {
        let runs = vec![
            RunRecord {
                mode: Mode::FedEntropy,
                seed: 1,
                reports: (1..=3).map(|r| report(r, 0.5, 2)).collect(),
            },
            RunRecord {
                mode: Mode::FedAvgRandom,
                seed: 1,
                reports: (1..=3).map(|r| report(r, 0.5, 3)).collect(),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rounds.csv");
        write_round_csv(&runs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], ROUND_CSV_HEADER.join(","));
        assert_eq!(lines[1], "1,fedentropy,1,0.5,3,2,1,1,1,160,48");
        let bad = dir.path().join("missing-dir").join("rounds.csv");
        assert!(matches!(write_round_csv(&runs, &bad), Err(Error::Io { .. })));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("scaffold".parse::<Mode>().is_err());
    }
}
