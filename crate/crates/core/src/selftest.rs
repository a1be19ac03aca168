//! Oracle-equivalence and gradient-check suites runnable from the CLI.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::entropy::{judge_entropy, SoftLabelSummary};
use crate::error::Result;
use crate::numerics::{
    finite_diff_grad, loss_and_grad, max_relative_error, Batch, DenseMatrix, ModelParams, ModelShape,
    Proximal,
};
use crate::oracle::greedy_oracle;
use crate::prob::ProbVector;

/// Relative-error floor used when comparing gradients.
pub const GRADIENT_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Random device set and summaries: `1..=max_devices` devices with
/// `2..=max_classes` classes. Some vectors are sparse and some are
/// duplicated so that ties and zero entries get exercised.
pub fn random_judgment_instance<R: Rng + ?Sized>(
    rng: &mut R,
    max_devices: usize,
    max_classes: usize,
) -> (BTreeSet<usize>, BTreeMap<usize, SoftLabelSummary>) {
    let n = rng.random_range(1..=max_devices);
    let c = rng.random_range(2..=max_classes);
    let mut ids = BTreeSet::new();
    while ids.len() < n {
        ids.insert(rng.random_range(0..50));
    }
    let mut summaries = BTreeMap::new();
    let mut previous: Option<ProbVector> = None;
    for &id in &ids {
        let p = match (&previous, rng.random_range(0..6)) {
            (Some(prev), 0) => prev.clone(),
            (_, 1) => ProbVector::one_hot(c, rng.random_range(0..c)),
            _ => {
                let raw: Vec<f64> = (0..c)
                    .map(|_| {
                        if rng.random_bool(0.2) {
                            0.0
                        } else {
                            rng.random::<f64>()
                        }
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                if total > 0.0 {
                    ProbVector::new(raw.iter().map(|v| v / total).collect()).expect("normalized")
                } else {
                    ProbVector::uniform(c)
                }
            }
        };
        previous = Some(p.clone());
        let count = rng.random_range(1..=200);
        summaries.insert(id, SoftLabelSummary::new(id, p, count).expect("positive count"));
    }
    (ids, summaries)
}

/// Runs `instances` random judgments through both implementations.
pub fn judgment_equivalence(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut max_gap: f64 = 0.0;
    for _ in 0..instances {
        let (ids, summaries) = random_judgment_instance(&mut rng, 8, 5);
        let fast = judge_entropy(&ids, &summaries)?;
        let slow = greedy_oracle(&ids, &summaries)?;
        let gap = (fast.final_entropy - slow.final_entropy).abs();
        max_gap = max_gap.max(gap);
        if fast.accepted != slow.accepted || fast.rejected != slow.rejected || gap > 1e-12 {
            mismatches += 1;
        }
    }
    Ok(CheckOutcome {
        name: "judgment matches greedy oracle",
        passed: mismatches == 0,
        detail: format!("{instances} instances, {mismatches} mismatches, max entropy gap {max_gap:.3e}"),
    })
}

/// Random model, batch and (optionally) proximal anchor.
pub fn random_gradient_problem<R: Rng + ?Sized>(rng: &mut R) -> (ModelParams, ModelParams, Batch) {
    let inputs = rng.random_range(2..=5);
    let classes = rng.random_range(2..=4);
    let hidden = rng.random_bool(0.5).then(|| rng.random_range(2..=5));
    let shape = ModelShape {
        inputs,
        hidden,
        classes,
    };
    let model = ModelParams::init_uniform(shape, rng);
    let anchor = ModelParams::init_uniform(shape, rng);
    let n = rng.random_range(1..=8);
    let data = (0..n * inputs).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let batch = Batch::new(DenseMatrix::new(n, inputs, data).expect("sized"), labels).expect("sized");
    (model, anchor, batch)
}

/// Compares analytic and finite-difference gradients on random problems,
/// alternating the proximal term on and off.
pub fn gradient_check(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let (model, anchor, batch) = random_gradient_problem(&mut rng);
        let prox = (i % 2 == 1).then_some(Proximal {
            mu: 0.05,
            anchor: &anchor,
        });
        let (_, analytic) = loss_and_grad(&model, &batch, prox)?;
        let numeric = finite_diff_grad(&model, &batch, prox)?;
        worst = worst.max(max_relative_error(&analytic, &numeric, GRADIENT_ERROR_FLOOR));
    }
    Ok(CheckOutcome {
        name: "analytic gradients match finite differences",
        passed: worst < 1e-4,
        detail: format!("{instances} instances, max relative error {worst:.3e}"),
    })
}

pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![judgment_equivalence(1000, seed)?, gradient_check(20, seed)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for check in run_all(0).unwrap() {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }
}
