//! Positive/negative device pools and ε-greedy round selection.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};

/// Cloud-side device pools. Devices accepted by the last judgment they took
/// part in live in `positive`, rejected ones in `negative`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DevicePools {
    positive: BTreeSet<usize>,
    negative: BTreeSet<usize>,
}

/// Which pool a round drew from first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub device_count: usize,
    /// Fraction `C` of devices active per round.
    pub fraction: f64,
    /// Probability of drawing from the positive pool first.
    pub epsilon: f64,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.device_count < 1 {
            return Err(Error::config("devices", "must be at least 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config(
                "fraction",
                format!("{} is outside (0, 1]", self.fraction),
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(
                "epsilon",
                format!("{} is outside [0, 1]", self.epsilon),
            ));
        }
        Ok(())
    }

    /// Devices per round: `round(N·C)`, at least one.
    pub fn round_size(&self) -> usize {
        ((self.device_count as f64 * self.fraction).round() as usize).max(1)
    }
}

/// Devices picked for one round and the pool the ε draw pointed at.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSelection {
    pub devices: BTreeSet<usize>,
    pub primary: PoolKind,
    pub from_positive: usize,
    pub from_negative: usize,
}

impl DevicePools {
    pub fn new(device_count: usize) -> Result<Self> {
        if device_count < 1 {
            return Err(Error::InvalidArgument(
                "device pools need at least one device".into(),
            ));
        }
        Ok(Self {
            positive: (0..device_count).collect(),
            negative: BTreeSet::new(),
        })
    }

    pub fn positive(&self) -> &BTreeSet<usize> {
        &self.positive
    }

    pub fn negative(&self) -> &BTreeSet<usize> {
        &self.negative
    }

    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pool_mut(&mut self, kind: PoolKind) -> &mut BTreeSet<usize> {
        match kind {
            PoolKind::Positive => &mut self.positive,
            PoolKind::Negative => &mut self.negative,
        }
    }

    /// Draws the round's devices and removes them from the pools.
    ///
    /// With probability `epsilon` the positive pool is primary, otherwise the
    /// negative one. Up to `m` devices come uniformly from the primary pool;
    /// any shortfall is filled uniformly from the other pool.
    pub fn select_round<R: Rng + ?Sized>(
        &mut self,
        cfg: &SelectionConfig,
        rng: &mut R,
    ) -> Result<RoundSelection> {
        let m = cfg.round_size();
        if self.len() < m {
            return Err(Error::InsufficientDevices {
                needed: m,
                available: self.len(),
            });
        }
        let u: f64 = rng.random();
        let (primary, secondary) = if u < cfg.epsilon {
            (PoolKind::Positive, PoolKind::Negative)
        } else {
            (PoolKind::Negative, PoolKind::Positive)
        };
        let first = take_uniform(self.pool_mut(primary), m, rng);
        let second = take_uniform(self.pool_mut(secondary), m - first.len(), rng);
        let (from_positive, from_negative) = match primary {
            PoolKind::Positive => (first.len(), second.len()),
            PoolKind::Negative => (second.len(), first.len()),
        };
        Ok(RoundSelection {
            devices: first.into_iter().chain(second).collect(),
            primary,
            from_positive,
            from_negative,
        })
    }

    /// Puts the round's devices back: accepted into positive, rejected into negative.
    pub fn return_devices(&mut self, accepted: &BTreeSet<usize>, rejected: &BTreeSet<usize>) -> Result<()> {
        if let Some(id) = accepted.intersection(rejected).next() {
            return Err(Error::PoolViolation(format!(
                "device {id} both accepted and rejected"
            )));
        }
        if let Some(id) = accepted
            .iter()
            .chain(rejected)
            .find(|id| self.positive.contains(id) || self.negative.contains(id))
        {
            return Err(Error::PoolViolation(format!("device {id} is already pooled")));
        }
        self.positive.extend(accepted);
        self.negative.extend(rejected);
        Ok(())
    }
}

/// Removes `k` uniformly chosen ids from `pool` (or all of them if fewer).
pub(crate) fn take_uniform<R: Rng + ?Sized>(pool: &mut BTreeSet<usize>, k: usize, rng: &mut R) -> Vec<usize> {
    let mut ids: Vec<usize> = pool.iter().copied().collect();
    let chosen = sample_without_replacement(&mut ids, k, rng);
    for id in &chosen {
        pool.remove(id);
    }
    chosen
}

/// Partial Fisher-Yates over `items`; draws nothing from `rng` when `k == 0`.
pub(crate) fn sample_without_replacement<R: Rng + ?Sized>(
    items: &mut [usize],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let k = k.min(items.len());
    for i in 0..k {
        let j = rng.random_range(i..items.len());
        items.swap(i, j);
    }
    items[..k].to_vec()
}
