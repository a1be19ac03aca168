use std::collections::{BTreeMap, BTreeSet};

use fedentropy::entropy::{entropy, get_entropy, judge_entropy, SoftLabelSummary};
use fedentropy::numerics::softmax;
use fedentropy::scheduler::{DevicePools, SelectionConfig};
use fedentropy::ProbVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn prob_vector(c: usize) -> impl Strategy<Value = ProbVector> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], c).prop_map(move |raw| {
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            ProbVector::new(raw.iter().map(|v| v / total).collect()).unwrap()
        } else {
            ProbVector::uniform(c)
        }
    })
}

fn summaries(max_devices: usize) -> impl Strategy<Value = Vec<SoftLabelSummary>> {
    (2usize..=5).prop_flat_map(move |c| {
        prop::collection::vec((prob_vector(c), 1usize..200), 1..=max_devices).prop_map(|items| {
            items
                .into_iter()
                .enumerate()
                .map(|(id, (p, l))| SoftLabelSummary::new(id, p, l).unwrap())
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 2..12)) {
        let p = softmax(&logits).unwrap();
        let total: f64 = p.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn softmax_ignores_constant_shift(
        logits in prop::collection::vec(-20.0f64..20.0, 2..12),
        shift in -100.0f64..100.0,
    ) {
        let a = softmax(&logits).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_bounds(p in (2usize..10).prop_flat_map(prob_vector)) {
        let h = entropy(&p);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn group_entropy_permutation_and_scale(list in summaries(8), k in 1usize..5) {
        let h = get_entropy(&list).unwrap();
        let reversed: Vec<_> = list.iter().rev().cloned().collect();
        prop_assert!((get_entropy(&reversed).unwrap() - h).abs() < 1e-12);
        let scaled: Vec<_> = list
            .iter()
            .map(|s| SoftLabelSummary::new(s.device_id, s.p.clone(), s.sample_count * k).unwrap())
            .collect();
        prop_assert!((get_entropy(&scaled).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn judgment_trace_strictly_increases(list in summaries(8)) {
        let ids: BTreeSet<usize> = list.iter().map(|s| s.device_id).collect();
        let map: BTreeMap<usize, SoftLabelSummary> =
            list.into_iter().map(|s| (s.device_id, s)).collect();
        let r = judge_entropy(&ids, &map).unwrap();
        prop_assert!(!r.accepted.is_empty());
        prop_assert!(r.accepted.is_disjoint(&r.rejected));
        let union: BTreeSet<usize> = r.accepted.union(&r.rejected).copied().collect();
        prop_assert_eq!(union, ids);
        prop_assert_eq!(r.entropy_trace.len(), r.rejected.len() + 1);
        for w in r.entropy_trace.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        let kept: Vec<_> = r.accepted.iter().map(|id| map[id].clone()).collect();
        let all: Vec<_> = map.values().cloned().collect();
        prop_assert!(get_entropy(&kept).unwrap() >= get_entropy(&all).unwrap() - 1e-12);
    }

    #[test]
    fn pools_stay_disjoint_and_complete(
        n in 1usize..40,
        fraction in 0.05f64..1.0,
        seed in any::<u64>(),
        verdicts in prop::collection::vec(any::<u64>(), 1..30),
    ) {
        let cfg = SelectionConfig { device_count: n, fraction, epsilon: 0.8 };
        let mut pools = DevicePools::new(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for bits in verdicts {
            let sel = pools.select_round(&cfg, &mut rng).unwrap();
            prop_assert_eq!(sel.devices.len(), cfg.round_size());
            prop_assert!(sel.devices.is_disjoint(pools.positive()));
            prop_assert!(sel.devices.is_disjoint(pools.negative()));
            let (a, r): (BTreeSet<usize>, BTreeSet<usize>) =
                sel.devices.iter().partition(|&&id| bits >> (id % 64) & 1 == 1);
            pools.return_devices(&a, &r).unwrap();
            prop_assert!(pools.positive().is_disjoint(pools.negative()));
            prop_assert_eq!(pools.len(), n);
        }
    }
}
