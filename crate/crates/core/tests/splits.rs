//! Partition properties of the split and fold operations over random
//! sizes and seeds.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use medqa_core::data::{kfold_split, split_train_val, QARecord};

fn records_with_labels(n: usize, num_labels: usize) -> Vec<QARecord> {
    (0..n)
        .map(|i| QARecord {
            disease: format!("d{}", i % num_labels),
            question: format!("question {i}"),
            label: format!("label {}", i % num_labels),
        })
        .collect()
}

#[test]
fn split_partitions_for_random_sizes_and_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    for _ in 0..50 {
        let n = rng.random_range(2..400);
        let seed = rng.random::<u64>();
        let records = records_with_labels(n, 7);
        let ratio = rng.random_range(0.3..0.8);
        let Ok((train, val)) = split_train_val(&records, ratio, seed) else {
            // Tiny n with a small ratio can floor to zero; that rejection
            // is part of the contract.
            continue;
        };
        assert_eq!(train.len(), (n as f64 * ratio).floor() as usize);
        assert_eq!(train.len() + val.len(), n);
        let mut all: Vec<&str> = train.iter().chain(&val).map(|r| r.question.as_str()).collect();
        all.sort();
        let unique: HashSet<&str> = all.iter().copied().collect();
        assert_eq!(unique.len(), n, "split duplicated or dropped records");
    }
}

#[test]
fn folds_partition_for_random_sizes_and_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(6001);
    for _ in 0..50 {
        let k = rng.random_range(2..8);
        let n = rng.random_range(k..300);
        let seed = rng.random::<u64>();
        let stratified = rng.random::<bool>();
        let records = records_with_labels(n, rng.random_range(1..10));
        let plan = kfold_split(&records, k, seed, stratified).unwrap();

        let mut seen = vec![false; n];
        for f in 0..k {
            for i in plan.validation_indices(f) {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "some index in no fold");

        for f in 0..k {
            let val: HashSet<usize> = plan.validation_indices(f).into_iter().collect();
            let train: HashSet<usize> = plan.training_indices(f).into_iter().collect();
            assert!(val.is_disjoint(&train));
            assert_eq!(val.len() + train.len(), n);
        }
    }
}

#[test]
fn stratified_folds_balance_every_label_within_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let k = 5;
        let num_labels = rng.random_range(2..12);
        let n = rng.random_range(num_labels.max(k)..400);
        let records = records_with_labels(n, num_labels);
        let plan = kfold_split(&records, k, rng.random::<u64>(), true).unwrap();
        for label in 0..num_labels {
            let per_fold: Vec<usize> = (0..k)
                .map(|f| {
                    plan.validation_indices(f)
                        .iter()
                        .filter(|&&i| records[i].label == format!("label {label}"))
                        .count()
                })
                .collect();
            let lo = per_fold.iter().min().unwrap();
            let hi = per_fold.iter().max().unwrap();
            assert!(hi - lo <= 1, "label {label} spread {per_fold:?}");
        }
    }
}

#[test]
fn fold_plans_are_seed_deterministic() {
    let records = records_with_labels(103, 9);
    let a = kfold_split(&records, 5, 77, true).unwrap();
    let b = kfold_split(&records, 5, 77, true).unwrap();
    assert_eq!(a, b);
    let c = kfold_split(&records, 5, 78, true).unwrap();
    assert_ne!(a, c);
}
