use super::*;
use crate::augment::AugmentPolicy;
use crate::net::{build_network, load_checkpoint, AttentionConfig, BackboneConfig, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        backbone: BackboneConfig {
            preset: "tiny".into(),
            stage_depths: vec![1, 1, 1, 1],
            stage_widths: vec![8, 8, 16, 16],
            input_channels: 3,
            layerscale_init: 1.0,
        },
        attention: AttentionConfig {
            heads: 2,
            proj_dim: 4,
            ..AttentionConfig::default()
        },
        ln_eps: 1e-6,
    }
}

fn tiny_corpus(dir: &std::path::Path, seed: u64) -> DatasetManifest {
    let cfg = SyntheticCorpusConfig {
        train_per_class: 3,
        val_per_class: 2,
        test_per_class: 2,
        resolution: 32,
        seed,
        ..SyntheticCorpusConfig::default()
    };
    generate_synthetic_corpus(&cfg, dir).unwrap()
}

fn smoke_train_config(dir: &std::path::Path) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 4,
        train_resolution: 32,
        seed: 3,
        checkpoint_path: Some(dir.join("net.ckpt")),
        history_path: Some(dir.join("history.jsonl")),
        ..TrainConfig::default()
    }
}

#[test]
fn learning_rate_halves_on_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(learning_rate(&cfg, 0), 0.002);
    assert_eq!(learning_rate(&cfg, 32), 0.002);
    assert_eq!(learning_rate(&cfg, 33), 0.001);
    assert_eq!(learning_rate(&cfg, 66), 0.0005);
    assert_eq!(learning_rate(&cfg, 99), 0.00025);
}

#[test]
fn batches_stay_balanced_within_one() {
    for batch_size in [2usize, 4, 23, 24] {
        let mut totals = (0usize, 0usize);
        for batch_index in 0..10 {
            let (p, n) = batch_class_counts(batch_size, batch_index);
            assert_eq!(p + n, batch_size);
            assert!(p.abs_diff(n) <= 1, "batch size {batch_size}: {p} vs {n}");
            totals.0 += p;
            totals.1 += n;
        }
        assert!(
            totals.0.abs_diff(totals.1) <= 1,
            "epoch-level imbalance for {batch_size}"
        );
    }
}

/// Independent oracle: per-pair/per-sample enumeration with the same
/// integer-count final divisions.
fn brute_force_metrics(scores: &[f64], labels: &[bool]) -> ClassMetrics {
    let mut tp = 0u64;
    let mut tn = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= 0.5, l) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / scores.len() as f64;
    let f1_denominator = 2 * tp + fp + fn_;
    let f1 = if f1_denominator == 0 {
        0.0
    } else {
        (2 * tp) as f64 / f1_denominator as f64
    };

    let mut numerator_2x = 0u64;
    let mut pairs = 0u64;
    for (&sp, &lp) in scores.iter().zip(labels) {
        if !lp {
            continue;
        }
        for (&sn, &ln) in scores.iter().zip(labels) {
            if ln {
                continue;
            }
            pairs += 1;
            if sp > sn {
                numerator_2x += 2;
            } else if sp == sn {
                numerator_2x += 1;
            }
        }
    }
    ClassMetrics {
        accuracy,
        f1,
        auc: numerator_2x as f64 / (2 * pairs) as f64,
    }
}

#[test]
fn metrics_match_brute_force_exactly_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..200 {
        let n = rng.random_range(2..=40);
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            // a coarse grid makes score ties common enough to matter
            scores.push(rng.random_range(0..6) as f64 / 5.0);
            // guarantee both classes
            labels.push(if i == 0 {
                true
            } else if i == 1 {
                false
            } else {
                rng.random_bool(0.5)
            });
        }
        let fast = classification_metrics(&scores, &labels).unwrap();
        let slow = brute_force_metrics(&scores, &labels);
        assert_eq!(
            fast.accuracy.to_bits(),
            slow.accuracy.to_bits(),
            "case {case}"
        );
        assert_eq!(fast.f1.to_bits(), slow.f1.to_bits(), "case {case}");
        assert_eq!(fast.auc.to_bits(), slow.auc.to_bits(), "case {case}");
    }
}

#[test]
fn metric_conventions_on_frozen_examples() {
    let m = classification_metrics(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
    assert_eq!((m.accuracy, m.f1, m.auc), (1.0, 1.0, 1.0));

    let tie = classification_metrics(&[0.6, 0.6], &[true, false]).unwrap();
    assert_eq!(tie.auc, 0.5);

    assert!(matches!(
        classification_metrics(&[0.9, 0.8], &[true, true]),
        Err(TrainError::SingleClass(_))
    ));
    assert!(matches!(
        classification_metrics(&[], &[]),
        Err(TrainError::EmptySplit(_))
    ));
}

#[test]
fn one_epoch_smoke_run_writes_checkpoint_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path(), 21);
    let cfg = smoke_train_config(dir.path());
    let mut net = build_network(tiny_config(), 5).unwrap();

    let outcome = train(&mut net, &manifest, &AugmentPolicy::default(), &cfg).unwrap();
    assert_eq!(outcome.history.len(), 1);
    assert!(outcome.history[0].train_loss.is_finite());
    assert!(outcome.best_val_bce.is_some());
    assert!(net.train_steps() > 0);

    let mut expected_policy = AugmentPolicy::default();
    expected_policy.train_size = 32;
    assert_eq!(net.policy_hash(), expected_policy.hash());

    let reloaded = load_checkpoint(dir.path().join("net.ckpt")).unwrap();
    assert_eq!(reloaded.config(), net.config());
    assert_eq!(reloaded.train_steps(), net.train_steps());
    for (a, b) in reloaded.params().iter().zip(net.params()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }

    let history = std::fs::read_to_string(dir.path().join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 1);
    let row: EpochRecord = serde_json::from_str(history.lines().next().unwrap()).unwrap();
    assert_eq!(row.epoch, 0);
    assert_eq!(row.lr, 0.002);
}

#[test]
fn training_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path(), 22);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        train_resolution: 32,
        seed: 9,
        ..TrainConfig::default()
    };

    let mut run = || {
        let mut net = build_network(tiny_config(), 5).unwrap();
        let outcome = train(&mut net, &manifest, &AugmentPolicy::default(), &cfg).unwrap();
        (outcome, net)
    };
    let (outcome_a, net_a) = run();
    let (outcome_b, net_b) = run();
    for (a, b) in outcome_a.history.iter().zip(&outcome_b.history) {
        assert_eq!(
            a.train_loss.to_bits(),
            b.train_loss.to_bits(),
            "epoch {}",
            a.epoch
        );
        assert_eq!(a.val_bce.map(f64::to_bits), b.val_bce.map(f64::to_bits));
    }
    for (a, b) in net_a.params().iter().zip(net_b.params()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn nan_loss_aborts_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path(), 23);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        train_resolution: 32,
        ..TrainConfig::default()
    };
    let mut net = build_network(tiny_config(), 5).unwrap();
    net.params_mut()[0].value.fill(f64::NAN);
    let err = train(&mut net, &manifest, &AugmentPolicy::default(), &cfg).unwrap_err();
    assert!(
        matches!(err, TrainError::Diverged { epoch: 0, .. }),
        "{err}"
    );
}

#[test]
fn mixed_precision_flag_still_trains() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path(), 24);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        train_resolution: 32,
        mixed_precision: true,
        ..TrainConfig::default()
    };
    let mut net = build_network(tiny_config(), 5).unwrap();
    let outcome = train(&mut net, &manifest, &AugmentPolicy::default(), &cfg).unwrap();
    assert!(outcome.history[0].train_loss.is_finite());
}

#[test]
fn evaluate_reports_ranged_metrics_and_rejects_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path(), 25);
    let net = build_network(tiny_config(), 5).unwrap();
    let metric_cfg = MetricConfig::default();

    let report = evaluate(&net, &manifest, Split::Test, &metric_cfg).unwrap();
    assert_eq!(report.predictions.len(), 4);
    for value in [report.accuracy, report.f1, report.auc] {
        assert!((0.0..=1.0).contains(&value));
    }
    assert!(report.bce_error.is_finite());

    let positives_only = DatasetManifest {
        root: manifest.root.clone(),
        entries: manifest
            .entries
            .iter()
            .filter(|e| e.split == Split::Test && e.is_positive())
            .cloned()
            .collect(),
    };
    assert!(matches!(
        evaluate(&net, &positives_only, Split::Test, &metric_cfg),
        Err(TrainError::SingleClass(_))
    ));

    assert!(matches!(
        evaluate(
            &net,
            &manifest,
            Split::Val,
            &MetricConfig {
                reps: (0, 0),
                ..MetricConfig::default()
            }
        ),
        Err(TrainError::Metric(_))
    ));
}
