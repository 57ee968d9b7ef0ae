mod common;

use common::{assert_close, enumerate_mpe};
use l2c::data::*;
use l2c::generate::{random_model, RandomModelConfig};
use l2c::{Assignment, Error};
use proptest::prelude::*;

fn small_cfg(samples: usize) -> CollectionConfig {
    CollectionConfig {
        num_samples: samples,
        budget_ms: 500,
        stat_weights: [0.0, 0.5, 0.5],
        burn_in: 50,
        seed: 3,
        ..CollectionConfig::default()
    }
}

#[test]
fn collection_invariants() {
    let model = random_model(&RandomModelConfig::mixed(10), 8);
    let cfg = small_cfg(28);
    let ds = collect(&model, &cfg).unwrap();
    assert_eq!(ds.records.len(), 28);
    assert_eq!(ds.split(Split::Val).count(), 2);
    assert_eq!(ds.split(Split::Test).count(), 2);
    for r in &ds.records {
        assert_eq!(r.evidence.len(), 10 - query_size(0.75, 10));
        assert!(r.conditioned.len() <= 2 * cfg.c_max);
        assert_eq!(r.rank_targets.len(), r.conditioned.len());
        let total: f64 = r.rank_targets.iter().map(|t| t.2).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for c in &r.conditioned {
            assert!(!r.evidence.contains(c.var));
        }
        let (x, best) = enumerate_mpe(&model, &r.evidence);
        assert_close(r.base.log_score, best, 1e-9);
        assert_eq!(r.oracle(), Some(&Assignment::from_dense(&x)));
        for c in &r.conditioned {
            let (_, cond) = enumerate_mpe(&model, &r.evidence.with(c.var, c.val));
            assert_close(c.rec.log_score, cond, 1e-9);
            assert!(!c.surrogate);
        }
    }
    let again = collect(&model, &cfg).unwrap();
    assert_eq!(again.records, ds.records);
}

#[test]
fn composite_recomputation() {
    let stats = [
        RawStats {
            time: 0.2,
            nodes: 10.0,
            regret: 0.0,
        },
        RawStats {
            time: 0.6,
            nodes: 40.0,
            regret: 1.5,
        },
        RawStats {
            time: 0.4,
            nodes: 30.0,
            regret: f64::INFINITY,
        },
    ];
    let w = [0.2, 0.3, 0.5];
    let eps = STAT_EPSILON;
    let norm = |x: f64, lo: f64, hi: f64| eps + (1.0 - eps) * (x - lo) / (hi - lo);
    let want = [
        w[0] * eps + w[1] * eps + w[2] * eps,
        w[0] * 1.0 + w[1] * 1.0 + w[2] * norm(1.5, 0.0, 1.5),
        w[0] * norm(0.4, 0.2, 0.6) + w[1] * norm(30.0, 10.0, 40.0) + w[2] * 1.0,
    ];
    for (got, want) in composite_stats(&stats, w).iter().zip(want) {
        assert_close(*got, want, 1e-12);
    }
    assert_eq!(composite_stats(&stats[..1], w), vec![eps]);
}

#[test]
fn rank_target_closed_form() {
    let p = build_rank_targets(&[0.5, 1.0], 1.0).unwrap();
    let e = std::f64::consts::E;
    assert_close(p[0], e * e / (e * e + e), 1e-12);
    assert!((p[0] - 0.7311).abs() < 1e-4);
    let flat = build_rank_targets(&[0.1, 0.5, 2.0], 1e6).unwrap();
    assert!(flat.iter().all(|q| (q - 1.0 / 3.0).abs() < 1e-4));
    assert!(build_rank_targets(&[0.0, 1.0], 1.0).is_err());
}

proptest! {
    #[test]
    fn rank_targets_are_ordered_distributions(costs in prop::collection::vec(1e-6f64..1.0, 1..10), t in 0.05f64..10.0) {
        let p = build_rank_targets(&costs, t).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..costs.len() {
            for j in 0..costs.len() {
                if costs[i] < costs[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
        let mut rev = costs.clone();
        rev.reverse();
        let mut q = build_rank_targets(&rev, t).unwrap();
        q.reverse();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn splits_partition_records(n in 0usize..400, seed in any::<u64>()) {
        let s = assign_splits(n, seed);
        prop_assert_eq!(s.len(), n);
        let k = (n as f64 / 14.0).round() as usize;
        prop_assert_eq!(s.iter().filter(|x| **x == Split::Val).count(), k);
        prop_assert_eq!(s.iter().filter(|x| **x == Split::Test).count(), k);
    }
}

#[test]
fn dataset_round_trip() {
    let model = random_model(&RandomModelConfig::mixed(8), 1);
    let ds = collect(&model, &small_cfg(100)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.jsonl");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.records.iter().zip(&ds.records) {
        assert_eq!(a.base.wall_time_s, b.base.wall_time_s);
    }

    let empty = Dataset {
        model_name: "m".into(),
        num_vars: 3,
        records: vec![],
    };
    save_dataset(&empty, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), empty);

    assert!(matches!(
        load_dataset(&dir.path().join("missing")),
        Err(Error::MissingArtifact(_))
    ));
    std::fs::write(
        &path,
        "{\"format\":\"l2c-dataset\",\"version\":9,\"model\":\"m\",\"num_vars\":3}\n",
    )
    .unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Version { .. })));
    std::fs::write(
        &path,
        "{\"format\":\"l2c-dataset\",\"version\":1,\"model\":\"m\",\"num_vars\":3}\n{\"bad\":1}\n",
    )
    .unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Schema(_))));
}

#[test]
fn config_validation() {
    assert!(CollectionConfig::default().validate(8).is_ok());
    for bad in [
        CollectionConfig {
            query_ratio: 1.0,
            ..CollectionConfig::default()
        },
        CollectionConfig {
            c_max: 7,
            ..CollectionConfig::default()
        },
        CollectionConfig {
            stat_weights: [0.5, 0.5, 0.5],
            ..CollectionConfig::default()
        },
        CollectionConfig {
            temperature: 0.0,
            ..CollectionConfig::default()
        },
        CollectionConfig {
            budget_ms: 0,
            ..CollectionConfig::default()
        },
    ] {
        assert!(bad.validate(8).is_err(), "{bad:?}");
    }
    assert_eq!(resolve_c_max(0.1, 90), 9);
}
