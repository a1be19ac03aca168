//! Reference implementations used to cross-check the production paths.
//!
//! Nothing here is used by the simulator itself. The greedy judgment below
//! recomputes every candidate group from scratch, with plain loops, so that
//! it shares no arithmetic shortcuts with [`crate::entropy::judge_entropy`].

use std::collections::{BTreeMap, BTreeSet};

use crate::entropy::{validate_judgment_input, JudgmentResult, SoftLabelSummary, JUDGMENT_TOLERANCE};
use crate::error::Result;

fn naive_group_entropy(group: &[usize], summaries: &BTreeMap<usize, SoftLabelSummary>, c: usize) -> f64 {
    let mut total_count = 0.0;
    for id in group {
        total_count += summaries[id].sample_count as f64;
    }
    let mut h = 0.0;
    for class in 0..c {
        let mut mass = 0.0;
        for id in group {
            let s = &summaries[id];
            mass += s.p[class] * s.sample_count as f64;
        }
        let q = mass / total_count;
        if q > 0.0 {
            h -= q * q.ln();
        }
    }
    h
}

/// Exhaustive step-by-step re-implementation of the greedy judgment.
pub fn greedy_oracle(
    selected: &BTreeSet<usize>,
    summaries: &BTreeMap<usize, SoftLabelSummary>,
) -> Result<JudgmentResult> {
    let c = validate_judgment_input(selected, summaries)?;
    let mut group: Vec<usize> = selected.iter().copied().collect();
    let mut rejected = BTreeSet::new();
    let mut trace = vec![naive_group_entropy(&group, summaries, c)];

    while group.len() > 1 {
        let current = *trace.last().unwrap();
        let mut outcomes = Vec::new();
        for &drop in &group {
            let rest: Vec<usize> = group.iter().copied().filter(|&id| id != drop).collect();
            outcomes.push((drop, naive_group_entropy(&rest, summaries, c)));
        }
        let mut best = f64::NEG_INFINITY;
        for &(_, h) in &outcomes {
            if h > best {
                best = h;
            }
        }
        if best <= current + JUDGMENT_TOLERANCE {
            break;
        }
        let mut victim = usize::MAX;
        for &(id, h) in &outcomes {
            if h >= best - JUDGMENT_TOLERANCE && id < victim {
                victim = id;
            }
        }
        group.retain(|&id| id != victim);
        rejected.insert(victim);
        trace.push(naive_group_entropy(&group, summaries, c));
    }

    Ok(JudgmentResult {
        accepted: group.into_iter().collect(),
        rejected,
        initial_entropy: trace[0],
        final_entropy: *trace.last().unwrap(),
        entropy_trace: trace,
    })
}
