use std::collections::BTreeMap;

use barnmap_core::ucb::{assign_buckets, quantile_edges, UcbConfig, UcbState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn buckets(sizes: &[usize]) -> (Vec<f64>, Vec<Vec<String>>) {
    let mut edges = vec![1.0];
    for i in 1..sizes.len() {
        edges.push(1.0 + i as f64);
    }
    edges.push(f64::INFINITY);
    let mut b = vec![Vec::new()];
    for (k, &n) in sizes.iter().enumerate() {
        b.push((0..n).map(|i| format!("b{k}-{i:05}")).collect());
    }
    (edges, b)
}

fn rate_of(id: &str, rates: &[f64]) -> f64 {
    let k: usize = id[1..id.find('-').unwrap()].parse().unwrap();
    rates[k]
}

proptest! {
    #[test]
    fn pi_is_a_distribution_and_bookkeeping_is_monotone(
        sizes in prop::collection::vec(0usize..40, 1..6),
        rates in prop::collection::vec(0.0f64..1.0, 6),
        alpha in 0.0f64..3.0,
        m in 1usize..20,
        seed in any::<u64>(),
    ) {
        let (edges, b) = buckets(&sizes);
        let cfg = UcbConfig { alpha, images_per_round: m, seed, ..Default::default() };
        let mut st = UcbState::new(edges, b, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut prev_found = 0;
        let mut prev_n = st.visits();
        while let Some(log) = st.run_round(|id| Ok(rng.gen::<f64>() < rate_of(id, &rates))).unwrap() {
            let total: f64 = log.pi.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(log.pi.iter().all(|p| *p >= 0.0));
            prop_assert!(log.found >= prev_found);
            prop_assert!(log.n.iter().zip(&prev_n).all(|(a, b)| a >= b));
            prop_assert!(log.mu.iter().all(|m| (0.0..=1.0).contains(m)));
            prev_found = log.found;
            prev_n = log.n.clone();
        }
        prop_assert_eq!(st.visits().iter().sum::<u64>() as usize, sizes.iter().sum::<usize>());
    }

    #[test]
    fn bucket_assignment_partitions(scores in prop::collection::vec(prop::collection::vec(1.0f64..50.0, 0..4), 0..200), k in 1usize..12) {
        let map: BTreeMap<String, Vec<f64>> = scores.into_iter().enumerate().map(|(i, s)| (i.to_string(), s)).collect();
        let edges = quantile_edges(&map, k).unwrap();
        let b = assign_buckets(&map, &edges).unwrap();
        let mut all: Vec<&String> = b.iter().flatten().collect();
        prop_assert_eq!(all.len(), map.len());
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), map.len());
        for (i, bucket) in b.iter().enumerate() {
            for id in bucket {
                let s = &map[id];
                match s.iter().copied().reduce(f64::max) {
                    None => prop_assert_eq!(i, 0),
                    Some(m) => prop_assert!(edges[i - 1] <= m && m < edges[i]),
                }
            }
        }
    }
}

#[test]
fn greedy_without_exploration_concentrates_on_best_bucket() {
    let (edges, b) = buckets(&[5000, 5000, 5000]);
    let cfg = UcbConfig {
        alpha: 0.0,
        images_per_round: 20,
        seed: 3,
        ..Default::default()
    };
    let mut st = UcbState::new(edges, b, cfg).unwrap();
    let rates = [0.2, 0.8, 0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        st.run_round(|id| Ok(rng.gen::<f64>() < rate_of(id, &rates))).unwrap();
    }
    let burn_in = st.visits();
    for _ in 0..100 {
        st.run_round(|id| Ok(rng.gen::<f64>() < rate_of(id, &rates))).unwrap();
    }
    let after: Vec<u64> = st.visits().iter().zip(&burn_in).map(|(a, b)| a - b).collect();
    let modal = (0..after.len()).max_by_key(|&i| after[i]).unwrap();
    assert_eq!(modal, 2, "bucket of the 0.8 rate, visits {after:?}");
}

#[test]
fn seeded_campaigns_are_reproducible() {
    let run = || {
        let (edges, b) = buckets(&[300, 300]);
        let mut st = UcbState::new(edges, b, UcbConfig { seed: 9, ..Default::default() }).unwrap();
        st.run_campaign(|id| Ok(id.ends_with('3') || id.starts_with("b1")), 1000).unwrap()
    };
    assert_eq!(run(), run());
}
