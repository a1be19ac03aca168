//! Soft-label summaries, group entropy and the greedy maximum-entropy filter.
//!
//! Each selected device reports the mean of its softmax outputs over all of
//! its samples together with its sample count. The cloud treats the
//! count-weighted mean of those vectors as the label distribution the group
//! would contribute to aggregation, and drops devices one at a time while
//! doing so raises the entropy of that mixture.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::numerics::{forward, Batch, ModelParams};
use crate::prob::ProbVector;

/// Minimum entropy gain for a removal to count as an improvement. Candidate
/// removals within this distance of the best one are treated as tied.
pub const JUDGMENT_TOLERANCE: f64 = 1e-12;

/// Averaged soft label `p` and sample count `l` reported by one device.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelSummary {
    pub device_id: usize,
    pub p: ProbVector,
    pub sample_count: usize,
}

impl SoftLabelSummary {
    pub fn new(device_id: usize, p: ProbVector, sample_count: usize) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::InvalidArgument(format!(
                "device {device_id} reports zero samples"
            )));
        }
        Ok(Self {
            device_id,
            p,
            sample_count,
        })
    }
}

/// Outcome of [`judge_entropy`].
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentResult {
    pub accepted: BTreeSet<usize>,
    pub rejected: BTreeSet<usize>,
    pub initial_entropy: f64,
    pub final_entropy: f64,
    /// Group entropy before the first removal and after each committed one.
    pub entropy_trace: Vec<f64>,
}

/// Mean softmax output of `model` over every sample of a device.
pub fn aggregate_soft_labels(
    model: &ModelParams,
    device_data: &Batch,
    device_id: usize,
) -> Result<SoftLabelSummary> {
    if device_data.is_empty() {
        return Err(Error::Empty("device data"));
    }
    let out = forward(model, device_data)?;
    let c = out.probs.cols();
    let mut mean = vec![0.0; c];
    for i in 0..out.probs.rows() {
        for (m, v) in mean.iter_mut().zip(out.probs.row(i)) {
            *m += v;
        }
    }
    let n = device_data.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    SoftLabelSummary::new(device_id, ProbVector::from_raw(mean), device_data.len())
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(p: &ProbVector) -> f64 {
    entropy_of(p.as_slice())
}

fn entropy_of(values: &[f64]) -> f64 {
    values
        .iter()
        .filter(|&&v| v > 0.0)
        .fold(0.0, |acc, &v| acc - v * v.ln())
}

/// Entropy of the sample-count weighted mean of the summaries.
pub fn get_entropy(summaries: &[SoftLabelSummary]) -> Result<f64> {
    let first = summaries.first().ok_or(Error::Empty("summary list"))?;
    let c = first.p.len();
    let mut weighted = vec![0.0; c];
    let mut total = 0.0;
    for s in summaries {
        if s.p.len() != c {
            return Err(Error::ShapeMismatch("summaries disagree on class count".into()));
        }
        let l = s.sample_count as f64;
        for (w, v) in weighted.iter_mut().zip(s.p.as_slice()) {
            *w += l * v;
        }
        total += l;
    }
    weighted.iter_mut().for_each(|w| *w /= total);
    Ok(entropy_of(&weighted))
}

/// Checks that `summaries` covers exactly `selected` with consistent class counts.
pub(crate) fn validate_judgment_input(
    selected: &BTreeSet<usize>,
    summaries: &BTreeMap<usize, SoftLabelSummary>,
) -> Result<usize> {
    if selected.is_empty() {
        return Err(Error::Empty("selected device set"));
    }
    if let Some(&missing) = selected.iter().find(|id| !summaries.contains_key(id)) {
        return Err(Error::MissingSummary(missing));
    }
    if let Some(&extra) = summaries.keys().find(|id| !selected.contains(id)) {
        return Err(Error::InvalidArgument(format!(
            "summary for device {extra} which was not selected"
        )));
    }
    let c = summaries[selected.first().unwrap()].p.len();
    if summaries.values().any(|s| s.p.len() != c) {
        return Err(Error::ShapeMismatch("summaries disagree on class count".into()));
    }
    Ok(c)
}

/// Greedy maximum-entropy judgment over the selected devices.
///
/// Repeatedly evaluates every single-device removal from the accepted set and
/// commits the one giving the highest group entropy, provided it beats the
/// current entropy by more than [`JUDGMENT_TOLERANCE`]. Ties go to the lowest
/// device id. At least one device is always kept.
pub fn judge_entropy(
    selected: &BTreeSet<usize>,
    summaries: &BTreeMap<usize, SoftLabelSummary>,
) -> Result<JudgmentResult> {
    let c = validate_judgment_input(selected, summaries)?;
    let mut accepted: Vec<&SoftLabelSummary> = selected.iter().map(|id| &summaries[id]).collect();
    let mut rejected = BTreeSet::new();
    let mut trace = Vec::new();
    let mut mixture = vec![0.0; c];

    loop {
        let mut weighted = vec![0.0; c];
        let mut total = 0.0;
        for s in &accepted {
            let l = s.sample_count as f64;
            for (w, v) in weighted.iter_mut().zip(s.p.as_slice()) {
                *w += l * v;
            }
            total += l;
        }
        for (m, w) in mixture.iter_mut().zip(&weighted) {
            *m = w / total;
        }
        let current = entropy_of(&mixture);
        trace.push(current);
        if accepted.len() == 1 {
            break;
        }

        let candidates: Vec<f64> = accepted
            .iter()
            .map(|s| {
                let l = s.sample_count as f64;
                let rest = total - l;
                for ((m, w), v) in mixture.iter_mut().zip(&weighted).zip(s.p.as_slice()) {
                    *m = ((w - l * v) / rest).max(0.0);
                }
                entropy_of(&mixture)
            })
            .collect();
        let best = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best <= current + JUDGMENT_TOLERANCE {
            break;
        }
        let pos = candidates
            .iter()
            .position(|&e| e >= best - JUDGMENT_TOLERANCE)
            .expect("best candidate exists");
        rejected.insert(accepted.remove(pos).device_id);
    }

    Ok(JudgmentResult {
        accepted: accepted.iter().map(|s| s.device_id).collect(),
        rejected,
        initial_entropy: trace[0],
        final_entropy: *trace.last().unwrap(),
        entropy_trace: trace,
    })
}
