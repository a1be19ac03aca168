//! The cloud-device training loop.
//!
//! A round: pick devices, broadcast the global model, train every picked
//! device locally, collect averaged soft labels, run the entropy judgment,
//! upload and aggregate only the accepted models, return devices to their
//! pools and evaluate. The random-selection baseline runs the same pipeline
//! with the pools and the judgment switched off.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{self, BlobSpec, Dataset, HeterogeneityCase, Partition, PartitionSpec};
use crate::entropy::{aggregate_soft_labels, get_entropy, judge_entropy, SoftLabelSummary};
use crate::error::{Error, Result};
use crate::numerics::{forward, loss_and_grad, sgd_step, Batch, ModelParams, ModelShape, Proximal};
use crate::scheduler::{sample_without_replacement, DevicePools, PoolKind, SelectionConfig};

/// Local objective used on devices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalOptimizer {
    FedAvg,
    FedProx { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer: LocalOptimizer,
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs < 1 {
            return Err(Error::config("local_epochs", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                format!("{} must be non-negative", self.learning_rate),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(
                "momentum",
                format!("{} is outside [0, 1)", self.momentum),
            ));
        }
        if let LocalOptimizer::FedProx { mu } = self.optimizer {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::config("mu", format!("{mu} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// How the cloud picks and filters devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    /// ε-greedy pools plus maximum-entropy judgment.
    Entropy,
    /// Uniform selection over all devices, every selected model aggregated.
    Random,
}

/// Everything needed for one seeded training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub blobs: BlobSpec,
    pub test_fraction: f64,
    pub case: HeterogeneityCase,
    pub hidden: Option<usize>,
    pub selection: SelectionConfig,
    pub client: ClientConfig,
    pub strategy: SelectionStrategy,
    pub rounds: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.blobs.validate()?;
        self.selection.validate()?;
        self.client.validate()?;
        if let HeterogeneityCase::Dirichlet { beta } = self.case {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::config("beta", format!("{beta} must be positive")));
            }
        }
        if self.hidden == Some(0) {
            return Err(Error::config("hidden", "hidden layer needs at least one unit"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(
                "test_fraction",
                format!("{} is outside (0, 1)", self.test_fraction),
            ));
        }
        Ok(())
    }
}

/// Per-round record.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    pub selected: BTreeSet<usize>,
    pub accepted: BTreeSet<usize>,
    pub rejected: BTreeSet<usize>,
    pub primary_pool: Option<PoolKind>,
    pub entropy_initial: f64,
    pub entropy_final: f64,
    pub bytes_models: usize,
    pub bytes_labels: usize,
    pub test_accuracy: f64,
    pub positive_pool: usize,
    pub negative_pool: usize,
    pub wall_time: Duration,
}

/// Result of local training on one device.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub model: ModelParams,
    pub summary: SoftLabelSummary,
    /// Mean mini-batch loss of each local epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh copy of the global model on one device's data and reports
/// its averaged soft label, computed with the trained local model.
pub fn client_update<R: Rng + ?Sized>(
    global: &ModelParams,
    device_data: &Batch,
    device_id: usize,
    cfg: &ClientConfig,
    rng: &mut R,
) -> Result<ClientUpdate> {
    if device_data.is_empty() {
        return Err(Error::Empty("device data"));
    }
    let mut model = global.clone();
    model.reset_velocity();
    let proximal = match cfg.optimizer {
        LocalOptimizer::FedAvg => None,
        LocalOptimizer::FedProx { mu } => Some(Proximal { mu, anchor: global }),
    };
    let mut order: Vec<usize> = (0..device_data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.local_epochs);
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = device_data.select(chunk);
            let (loss, grads) = loss_and_grad(&model, &batch, proximal)?;
            sgd_step(&mut model, &grads, cfg.learning_rate, cfg.momentum)?;
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let summary = aggregate_soft_labels(&model, device_data, device_id)?;
    Ok(ClientUpdate {
        model,
        summary,
        epoch_losses,
    })
}

/// Sample-count weighted mean of the accepted models. Velocity is zeroed.
///
/// Accumulated as a running weighted mean, so identical inputs come back
/// bit-for-bit.
pub fn aggregate(
    models: &BTreeMap<usize, ModelParams>,
    counts: &BTreeMap<usize, usize>,
    accepted: &BTreeSet<usize>,
) -> Result<ModelParams> {
    let first = accepted.first().ok_or(Error::Empty("accepted device set"))?;
    let lookup = |id: &usize| -> Result<(&ModelParams, usize)> {
        let model = models
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no model for accepted device {id}")))?;
        let count = *counts
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no sample count for device {id}")))?;
        if count == 0 {
            return Err(Error::InvalidArgument(format!("device {id} has zero samples")));
        }
        Ok((model, count))
    };
    let (template, _) = lookup(first)?;
    let mut mean = vec![0.0; template.param_count()];
    let mut seen = 0.0;
    for id in accepted {
        let (model, count) = lookup(id)?;
        if !model.same_shape(template) {
            return Err(Error::ShapeMismatch(format!(
                "model of device {id} has a different shape"
            )));
        }
        seen += count as f64;
        let weight = count as f64 / seen;
        for (m, w) in mean.iter_mut().zip(model.params()) {
            *m += weight * (w - *m);
        }
    }
    let mut out = template.clone();
    out.set_flat_params(&mean)?;
    out.reset_velocity();
    Ok(out)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn evaluate(model: &ModelParams, test: &Batch) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let out = forward(model, test)?;
    let correct = (0..out.probs.rows())
        .filter(|&i| {
            let row = out.probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == test.labels[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Derives an independent seed for one named purpose.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_DATA: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_PARTITION: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_SELECTION: u64 = 5;
const STREAM_CLIENTS: u64 = 6;

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub global: ModelParams,
    pub pools: DevicePools,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    device_data: Vec<Batch>,
    test_batch: Batch,
    round: usize,
    selection_rng: ChaCha8Rng,
    client_seed: u64,
}

impl TrainingState {
    /// Generates data, partitions it and initializes the global model, all
    /// from `cfg.seed`.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let full = datagen::make_blobs(&cfg.blobs, sub_seed(cfg.seed, STREAM_DATA))?;
        let (train, test) =
            datagen::train_test_split(&full, cfg.test_fraction, sub_seed(cfg.seed, STREAM_SPLIT))?;
        let partition = datagen::partition(
            &train,
            &PartitionSpec {
                case: cfg.case,
                device_count: cfg.selection.device_count,
                seed: sub_seed(cfg.seed, STREAM_PARTITION),
            },
        )?;
        let shape = ModelShape {
            inputs: cfg.blobs.dims,
            hidden: cfg.hidden,
            classes: cfg.blobs.classes,
        };
        let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, STREAM_INIT));
        let global = ModelParams::init_uniform(shape, &mut init_rng);
        Self::from_parts(global, train, test, partition, cfg.seed)
    }

    /// Builds a state around caller-supplied data and model.
    pub fn from_parts(
        global: ModelParams,
        train: Dataset,
        test: Dataset,
        partition: Partition,
        seed: u64,
    ) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::Empty("test set"));
        }
        if let Some(k) = partition.assignments.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!("device {k} has no data")));
        }
        let device_data = partition
            .assignments
            .iter()
            .map(|idx| train.subset(idx))
            .collect();
        let pools = DevicePools::new(partition.device_count())?;
        Ok(Self {
            global,
            pools,
            test_batch: test.as_batch(),
            train,
            test,
            partition,
            device_data,
            round: 0,
            selection_rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_SELECTION)),
            client_seed: sub_seed(seed, STREAM_CLIENTS),
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn device_count(&self) -> usize {
        self.device_data.len()
    }

    pub fn device_data(&self, device: usize) -> &Batch {
        &self.device_data[device]
    }

    fn client_rng(&self, device: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.client_seed);
        rng.set_stream((self.round as u64) * (self.device_count() as u64) + device as u64);
        rng
    }
}

/// Parameters shared by every round of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundConfig {
    pub selection: SelectionConfig,
    pub client: ClientConfig,
}

fn train_selected(
    state: &TrainingState,
    selected: &BTreeSet<usize>,
    cfg: &ClientConfig,
) -> Result<Vec<ClientUpdate>> {
    let ids: Vec<usize> = selected.iter().copied().collect();
    ids.par_iter()
        .map(|&id| {
            let mut rng = state.client_rng(id);
            client_update(&state.global, &state.device_data[id], id, cfg, &mut rng)
        })
        .collect()
}

fn check_device_count(state: &TrainingState, cfg: &RoundConfig) -> Result<()> {
    if cfg.selection.device_count != state.device_count() {
        return Err(Error::InvalidArgument(format!(
            "selection config has {} devices, state has {}",
            cfg.selection.device_count,
            state.device_count()
        )));
    }
    Ok(())
}

/// Cloud-side decision for one round, before aggregation.
struct RoundVerdict {
    selected: BTreeSet<usize>,
    accepted: BTreeSet<usize>,
    rejected: BTreeSet<usize>,
    entropies: (f64, f64),
    primary_pool: Option<PoolKind>,
    bytes_labels: usize,
}

fn finish_round(
    state: &mut TrainingState,
    updates: Vec<ClientUpdate>,
    verdict: RoundVerdict,
    started: Instant,
) -> Result<RoundReport> {
    let RoundVerdict {
        selected,
        accepted,
        rejected,
        entropies,
        primary_pool,
        bytes_labels,
    } = verdict;
    let counts: BTreeMap<usize, usize> = updates
        .iter()
        .map(|u| (u.summary.device_id, u.summary.sample_count))
        .collect();
    // only accepted devices upload their model
    let models: BTreeMap<usize, ModelParams> = updates
        .into_iter()
        .filter(|u| accepted.contains(&u.summary.device_id))
        .map(|u| (u.summary.device_id, u.model))
        .collect();
    let bytes_models = models.values().map(ModelParams::size_bytes).sum();
    state.global = aggregate(&models, &counts, &accepted)?;
    let test_accuracy = evaluate(&state.global, &state.test_batch)?;
    state.round += 1;
    Ok(RoundReport {
        round: state.round,
        selected,
        accepted,
        rejected,
        primary_pool,
        entropy_initial: entropies.0,
        entropy_final: entropies.1,
        bytes_models,
        bytes_labels,
        test_accuracy,
        positive_pool: state.pools.positive().len(),
        negative_pool: state.pools.negative().len(),
        wall_time: started.elapsed(),
    })
}

/// One round with ε-greedy pools and maximum-entropy judgment.
pub fn run_round(state: &mut TrainingState, cfg: &RoundConfig) -> Result<RoundReport> {
    check_device_count(state, cfg)?;
    let started = Instant::now();
    let selection = state
        .pools
        .select_round(&cfg.selection, &mut state.selection_rng)?;
    let selected = selection.devices;
    let updates = train_selected(state, &selected, &cfg.client)?;

    let summaries: BTreeMap<usize, SoftLabelSummary> = updates
        .iter()
        .map(|u| (u.summary.device_id, u.summary.clone()))
        .collect();
    let bytes_labels = summaries
        .values()
        .map(|s| s.p.len() * std::mem::size_of::<f64>())
        .sum();
    let verdict = judge_entropy(&selected, &summaries)?;
    state.pools.return_devices(&verdict.accepted, &verdict.rejected)?;
    let verdict = RoundVerdict {
        selected,
        accepted: verdict.accepted,
        rejected: verdict.rejected,
        entropies: (verdict.initial_entropy, verdict.final_entropy),
        primary_pool: Some(selection.primary),
        bytes_labels,
    };
    finish_round(state, updates, verdict, started)
}

/// FedAvg-style round: uniform selection over all devices, every model uploaded.
///
/// Draws the same uniform variate as [`run_round`] before sampling so both
/// strategies pick the same first-round devices under one seed. Soft labels
/// are still computed for the entropy columns but are not uploaded.
pub fn baseline_random_selection_round(state: &mut TrainingState, cfg: &RoundConfig) -> Result<RoundReport> {
    check_device_count(state, cfg)?;
    let started = Instant::now();
    let m = cfg.selection.round_size();
    if state.device_count() < m {
        return Err(Error::InsufficientDevices {
            needed: m,
            available: state.device_count(),
        });
    }
    let _: f64 = state.selection_rng.random();
    let mut all: Vec<usize> = (0..state.device_count()).collect();
    let selected: BTreeSet<usize> = sample_without_replacement(&mut all, m, &mut state.selection_rng)
        .into_iter()
        .collect();
    let updates = train_selected(state, &selected, &cfg.client)?;
    let summaries: Vec<SoftLabelSummary> = updates.iter().map(|u| u.summary.clone()).collect();
    let h = get_entropy(&summaries)?;
    let verdict = RoundVerdict {
        accepted: selected.clone(),
        selected,
        rejected: BTreeSet::new(),
        entropies: (h, h),
        primary_pool: None,
        bytes_labels: 0,
    };
    finish_round(state, updates, verdict, started)
}

/// Reports of every round plus the final global model.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub reports: Vec<RoundReport>,
    pub global: ModelParams,
    pub initial_global: ModelParams,
}

/// Runs `cfg.rounds` rounds from a freshly seeded state.
pub fn run_training(cfg: &RunConfig) -> Result<TrainingOutcome> {
    let mut state = TrainingState::new(cfg)?;
    let initial_global = state.global.clone();
    let round_cfg = RoundConfig {
        selection: cfg.selection,
        client: cfg.client,
    };
    let mut reports = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let report = match cfg.strategy {
            SelectionStrategy::Entropy => run_round(&mut state, &round_cfg)?,
            SelectionStrategy::Random => baseline_random_selection_round(&mut state, &round_cfg)?,
        };
        reports.push(report);
    }
    Ok(TrainingOutcome {
        reports,
        global: state.global,
        initial_global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{DenseMatrix, Layer};

    fn client_cfg(lr: f64, optimizer: LocalOptimizer) -> ClientConfig {
        ClientConfig {
            local_epochs: 2,
            batch_size: 4,
            learning_rate: lr,
            momentum: 0.5,
            optimizer,
        }
    }

    fn small_batch() -> Batch {
        Batch::new(
            DenseMatrix::from_rows(&[
                vec![1.0, 0.2],
                vec![0.1, 1.0],
                vec![0.9, -0.3],
                vec![-0.2, 1.1],
                vec![1.2, 0.0],
            ])
            .unwrap(),
            vec![0, 1, 0, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let global = ModelParams::init_uniform(ModelShape::linear(2, 2), &mut rng);
        let out = client_update(
            &global,
            &small_batch(),
            3,
            &client_cfg(0.0, LocalOptimizer::FedAvg),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.model.flat_params(), global.flat_params());
        assert_eq!(out.summary.sample_count, 5);
        assert_eq!(out.summary.device_id, 3);
    }

    #[test]
    fn fedprox_zero_mu_matches_fedavg() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let global = ModelParams::init_uniform(ModelShape::linear(2, 2), &mut rng);
        let a = client_update(
            &global,
            &small_batch(),
            0,
            &client_cfg(0.1, LocalOptimizer::FedAvg),
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = client_update(
            &global,
            &small_batch(),
            0,
            &client_cfg(0.1, LocalOptimizer::FedProx { mu: 0.0 }),
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn empty_device_is_an_error() {
        let global = ModelParams::zeros(ModelShape::linear(2, 2));
        let empty = small_batch().select(&[]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(client_update(
            &global,
            &empty,
            0,
            &client_cfg(0.1, LocalOptimizer::FedAvg),
            &mut rng
        )
        .is_err());
    }

    fn constant_model(v: f64) -> ModelParams {
        let mut m = ModelParams::zeros(ModelShape::linear(2, 2));
        m.params_mut().for_each(|p| *p = v);
        m
    }

    #[test]
    fn aggregate_rules() {
        let models: BTreeMap<usize, ModelParams> = [
            (0, constant_model(0.1)),
            (1, constant_model(0.1)),
            (2, constant_model(0.7)),
        ]
        .into();
        let counts: BTreeMap<usize, usize> = [(0, 3), (1, 5), (2, 5)].into();

        let same = aggregate(&models, &counts, &BTreeSet::from([0, 1])).unwrap();
        assert_eq!(same, models[&0]);

        let single = aggregate(&models, &counts, &BTreeSet::from([2])).unwrap();
        assert_eq!(single, models[&2]);

        let mid = aggregate(&models, &counts, &BTreeSet::from([1, 2])).unwrap();
        assert!(mid.params().all(|v| (v - 0.4).abs() < 1e-15));

        assert!(matches!(
            aggregate(&models, &counts, &BTreeSet::new()),
            Err(Error::Empty(_))
        ));
        assert!(aggregate(&models, &counts, &BTreeSet::from([9])).is_err());
    }

    #[test]
    fn aggregate_zeroes_velocity() {
        let mut m = constant_model(0.3);
        let mut g = crate::numerics::loss_and_grad(&m, &small_batch(), None)
            .unwrap()
            .1;
        g.values_mut().for_each(|v| *v = 1.0);
        sgd_step(&mut m, &g, 0.1, 0.5).unwrap();
        assert!(m.velocity().iter().any(|l| l.bias.iter().any(|&v| v != 0.0)));
        let out = aggregate(&[(0, m)].into(), &[(0, 1)].into(), &BTreeSet::from([0])).unwrap();
        assert!(out.velocity().iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn evaluate_tie_breaks_low() {
        let batch = Batch::new(DenseMatrix::zeros(4, 2), vec![0, 1, 2, 0]).unwrap();
        let uniform = ModelParams::zeros(ModelShape::linear(2, 3));
        assert_eq!(evaluate(&uniform, &batch).unwrap(), 0.5);

        let mut layer = Layer::zeros(2, 2);
        layer.weight.set(0, 0, 5.0);
        layer.weight.set(1, 1, 5.0);
        let perfect = ModelParams::from_layers(vec![layer]).unwrap();
        assert_eq!(evaluate(&perfect, &small_batch()).unwrap(), 1.0);
        assert!(evaluate(&perfect, &small_batch().select(&[])).is_err());
    }

    #[test]
    fn client_config_validation() {
        let mut c = client_cfg(0.1, LocalOptimizer::FedAvg);
        c.local_epochs = 0;
        assert!(c.validate().is_err());
        let c = client_cfg(0.1, LocalOptimizer::FedProx { mu: -1.0 });
        assert!(c.validate().is_err());
    }
}
