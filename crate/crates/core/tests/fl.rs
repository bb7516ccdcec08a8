mod common;

use mia_forge::data::{Dataset, Record};
use mia_forge::fl::{export_curves, load_curves, run_federated, split_population, weighted_average, FlConfig, RoundLog};
use mia_forge::target::{PrivacyConfig, TrainConfig};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn toy(n: usize, seed: u64) -> Dataset {
    let mut r = common::rng(seed);
    let records = (0..n)
        .map(|i| {
            let label = i % 4;
            Record {
                id: format!("p{i}"),
                features: (0..8)
                    .map(|j| if j % 4 == label { 2.5 } else { 0.0 } + r.sample::<f64, _>(StandardNormal))
                    .collect(),
                task_label: label,
            }
        })
        .collect();
    Dataset::new(8, 4, records).unwrap()
}

proptest! {
    #[test]
    fn averaging_identical_models_is_exact(
        p in prop::collection::vec(-10.0f64..10.0, 1..30),
        w in prop::collection::vec(1usize..100, 1..6),
    ) {
        let params: Vec<&[f64]> = w.iter().map(|_| p.as_slice()).collect();
        prop_assert_eq!(weighted_average(&params, &w), p);
    }

    #[test]
    fn average_matches_weighted_mean(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 2..6),
        seed: u64,
    ) {
        let w: Vec<usize> = (0..rows.len()).map(|i| 1 + ((seed >> i) % 50) as usize).collect();
        let total: usize = w.iter().sum();
        let params: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let got = weighted_average(&params, &w);
        for j in 0..4 {
            let want: f64 = rows.iter().zip(&w).map(|(r, &n)| r[j] * n as f64 / total as f64).sum();
            prop_assert!((got[j] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn split_is_disjoint_and_covers_the_population() {
    let pop = toy(103, 1);
    let (parts, holdout) = split_population(&pop, 4, 0.8, 7).unwrap();
    let mut ids: Vec<String> = parts.iter().flat_map(|p| p.ids()).chain(holdout.ids()).collect();
    assert_eq!(holdout.len(), 103 - 82);
    let sizes: Vec<usize> = parts.iter().map(Dataset::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 103);
}

#[test]
fn split_rejects_too_few_records() {
    assert!(split_population(&toy(4, 1), 4, 0.5, 0).is_err());
}

#[test]
fn nonprivate_fedavg_learns_and_is_reproducible() {
    let pop = toy(240, 2);
    let (parts, holdout) = split_population(&pop, 4, 0.8, 3).unwrap();
    let cfg = FlConfig {
        rounds: 10,
        local_epochs: 2,
        seed: 5,
        ..Default::default()
    };
    let train = TrainConfig::default();
    let a = run_federated(&parts, &holdout, &train, &cfg).unwrap();
    let b = run_federated(&parts, &holdout, &train, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 10);
    assert_eq!(a.iter().map(|l| l.round).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    assert!(a.last().unwrap().accuracy >= 0.8, "{:?}", a.last());
}

#[test]
fn heavy_noise_stays_near_chance() {
    let pop = toy(240, 3);
    let (parts, holdout) = split_population(&pop, 4, 0.8, 3).unwrap();
    let cfg = FlConfig {
        rounds: 10,
        local_epochs: 2,
        tier: PrivacyConfig {
            epsilon: Some(0.01),
            noise_multiplier: 1000.0,
            ..PrivacyConfig::no_dp()
        },
        seed: 5,
        ..Default::default()
    };
    let logs = run_federated(&parts, &holdout, &TrainConfig::default(), &cfg).unwrap();
    assert!(logs.last().unwrap().accuracy <= 0.25 + 0.2);
}

#[test]
fn empty_client_is_reported() {
    let holdout = toy(10, 4);
    let err = run_federated(&[toy(10, 5), Dataset::empty(8, 4)], &holdout, &TrainConfig::default(), &FlConfig::default())
        .unwrap_err();
    assert!(err.to_string().contains("client 1"), "{err}");
}

#[test]
fn curves_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let logs: Vec<RoundLog> = (1..=50)
        .map(|r| RoundLog {
            round: r,
            accuracy: 0.25 + r as f64 / 100.0,
            mean_loss: 1.0 / r as f64,
        })
        .collect();
    let path = dir.path().join("fl.csv");
    export_curves(&logs, "highdp", 4, &path).unwrap();
    let back = load_curves(&path).unwrap();
    assert_eq!(back.tier, "highdp");
    assert_eq!(back.floor, 0.25);
    assert_eq!(back.logs, logs);
}
