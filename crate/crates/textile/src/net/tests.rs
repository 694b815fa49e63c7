use super::*;
use crate::img::TextureImage;
use ndarray::{ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Miniature config so behavioral tests stay fast.
fn tiny() -> NetworkConfig {
    NetworkConfig {
        backbone: BackboneConfig {
            preset: "tiny-test".into(),
            stage_depths: vec![1, 1, 1, 1],
            stage_widths: vec![8, 8, 16, 16],
            input_channels: 3,
            layerscale_init: 1.0,
        },
        attention: AttentionConfig {
            heads: 2,
            proj_dim: 4,
            lambda_init: 1e-6,
            placements: vec![2, 3],
        },
        ln_eps: 1e-6,
    }
}

fn random_input(seed: u64, n: usize, h: usize, w: usize) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_simple_fn(IxDyn(&[n, h, w, 3]), || rng.random_range(0.0..1.0))
}

#[test]
fn toy_preset_stays_under_the_parameter_budget() {
    let cfg = NetworkConfig::toy();
    let count = cfg.param_count();
    assert!(count <= 2_000_000, "toy preset has {count} parameters");
    // analytic count must match what actually gets allocated
    let net = build_network(cfg, 0).unwrap();
    let allocated: usize = net.params().iter().map(|p| p.value.len()).sum();
    assert_eq!(count, allocated);
}

#[test]
fn base_preset_mirrors_a_large_backbone() {
    let cfg = NetworkConfig::base();
    let count = cfg.param_count();
    assert!(
        (80_000_000..100_000_000).contains(&count),
        "base preset has {count} parameters"
    );
}

#[test]
fn attention_gates_are_initialized_small_and_listed() {
    let net = build_network(NetworkConfig::toy(), 3).unwrap();
    let lambdas: Vec<f64> = net
        .params()
        .iter()
        .filter(|p| p.name.ends_with(".lambda"))
        .map(|p| p.value[[0]])
        .collect();
    assert_eq!(lambdas, vec![1e-6, 1e-6]);
    assert!(net.param("att2.q.weight").is_some());
    assert!(net.param("att3.out.bias").is_some());
}

#[test]
fn zero_lambda_makes_attention_an_exact_identity() {
    let mut gated = build_network(tiny(), 5).unwrap();
    let mut scrambled = gated.clone();
    for p in scrambled.params_mut() {
        if p.name.starts_with("att") && p.name.ends_with(".weight") {
            p.value.mapv_inplace(|v| 3.0 * v + 0.01);
        }
    }
    for net in [&mut gated, &mut scrambled] {
        for p in net.params_mut() {
            if p.name.ends_with(".lambda") {
                p.value.fill(0.0);
            }
        }
    }
    // identical logits despite different attention weights: with the gate at
    // zero the attention path contributes exactly nothing
    let x = random_input(7, 1, 32, 32);
    let ta = textile_autograd::Tape::inference();
    let tb = textile_autograd::Tape::inference();
    let la = gated.forward(&ta, &x).unwrap().logits.value();
    let lb = scrambled.forward(&tb, &x).unwrap().logits.value();
    assert_eq!(la, lb);
}

#[test]
fn initial_attention_deviation_is_tiny() {
    let net = build_network(tiny(), 11).unwrap();
    let mut ungated = net.clone();
    for p in ungated.params_mut() {
        if p.name.ends_with(".lambda") {
            p.value.fill(0.0);
        }
    }
    for seed in 0..5 {
        let x = random_input(seed, 1, 40, 40);
        let ta = textile_autograd::Tape::inference();
        let tb = textile_autograd::Tape::inference();
        let with = net.forward(&ta, &x).unwrap().logits.value()[[0]];
        let without = ungated.forward(&tb, &x).unwrap().logits.value()[[0]];
        let rel = (with - without).abs() / without.abs().max(1e-3);
        assert!(rel <= 1e-3, "deviation {rel} at seed {seed}");
    }
}

#[test]
fn forward_accepts_any_size_from_the_minimum_up() {
    let net = build_network(tiny(), 13).unwrap();
    for (h, w) in [(32, 32), (48, 64), (33, 47)] {
        let x = random_input(1, 1, h, w);
        let tape = textile_autograd::Tape::inference();
        let out = net.forward(&tape, &x).unwrap();
        assert_eq!(out.logits.shape(), vec![1]);
    }
    let small = random_input(1, 1, 16, 32);
    let tape = textile_autograd::Tape::inference();
    assert!(matches!(
        net.forward(&tape, &small),
        Err(NetError::UndersizedInput { .. })
    ));
}

#[test]
fn logit_is_independent_of_batch_composition() {
    let net = build_network(tiny(), 17).unwrap();
    let a = random_input(21, 1, 32, 32);
    let b = random_input(22, 1, 32, 32);
    let mut batch = ArrayD::zeros(IxDyn(&[2, 32, 32, 3]));
    batch
        .index_axis_mut(Axis(0), 0)
        .assign(&a.index_axis(Axis(0), 0));
    batch
        .index_axis_mut(Axis(0), 1)
        .assign(&b.index_axis(Axis(0), 0));
    let t1 = textile_autograd::Tape::inference();
    let t2 = textile_autograd::Tape::inference();
    let t3 = textile_autograd::Tape::inference();
    let alone_a = net.forward(&t1, &a).unwrap().logits.value()[[0]];
    let alone_b = net.forward(&t2, &b).unwrap().logits.value()[[0]];
    let together = net.forward(&t3, &batch).unwrap().logits.value();
    assert_eq!(together[[0]], alone_a);
    assert_eq!(together[[1]], alone_b);
}

#[test]
fn same_image_twice_in_a_batch_gives_identical_logits() {
    let net = build_network(tiny(), 19).unwrap();
    let a = random_input(23, 1, 32, 32);
    let mut batch = ArrayD::zeros(IxDyn(&[2, 32, 32, 3]));
    batch
        .index_axis_mut(Axis(0), 0)
        .assign(&a.index_axis(Axis(0), 0));
    batch
        .index_axis_mut(Axis(0), 1)
        .assign(&a.index_axis(Axis(0), 0));
    let tape = textile_autograd::Tape::inference();
    let logits = net.forward(&tape, &batch).unwrap().logits.value();
    assert_eq!(logits[[0]], logits[[1]]);
}

#[test]
fn build_is_deterministic_in_the_seed() {
    let a = build_network(tiny(), 29).unwrap();
    let b = build_network(tiny(), 29).unwrap();
    for (pa, pb) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(pa.name, pb.name);
        assert_eq!(pa.value, pb.value);
    }
    let c = build_network(tiny(), 30).unwrap();
    assert!(a
        .params()
        .iter()
        .zip(c.params().iter())
        .any(|(x, y)| x.value != y.value));
}

#[test]
fn config_validation_rejects_bad_setups() {
    let mut cfg = tiny();
    cfg.attention.placements = vec![9];
    assert!(matches!(
        build_network(cfg, 0),
        Err(NetError::BadPlacement(9, 4))
    ));
    let mut cfg = tiny();
    cfg.attention.heads = 7;
    assert!(matches!(
        build_network(cfg, 0),
        Err(NetError::BadHeads { .. })
    ));
    let mut cfg = tiny();
    cfg.backbone.stage_widths.pop();
    assert!(matches!(build_network(cfg, 0), Err(NetError::BadStages)));
    let net = build_network(tiny(), 0).unwrap();
    let x = ArrayD::zeros(IxDyn(&[1, 32, 32, 1]));
    let tape = textile_autograd::Tape::inference();
    assert!(matches!(
        net.forward(&tape, &x),
        Err(NetError::ChannelMismatch { got: 1, want: 3 })
    ));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ttck");
    let mut net = build_network(tiny(), 31).unwrap();
    net.set_train_steps(123);
    net.set_policy_hash("abc123");
    save_checkpoint(&net, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), net.config());
    assert_eq!(back.train_steps(), 123);
    assert_eq!(back.policy_hash(), "abc123");
    for (a, b) in net.params().iter().zip(back.params().iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(
            a.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
    let x = random_input(37, 1, 32, 32);
    let t1 = textile_autograd::Tape::inference();
    let t2 = textile_autograd::Tape::inference();
    let la = net.forward(&t1, &x).unwrap().logits.value();
    let lb = back.forward(&t2, &x).unwrap().logits.value();
    assert_eq!(la, lb);
}

#[test]
fn checkpoint_failure_modes_are_distinguished() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ttck");
    let net = build_network(tiny(), 41).unwrap();
    save_checkpoint(&net, &path).unwrap();

    // flipped payload byte -> integrity failure, reported as corruption
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let corrupt = dir.path().join("corrupt.ttck");
    std::fs::write(&corrupt, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint(&corrupt),
        Err(CheckpointError::Corrupt(_))
    ));

    // truncation -> corruption
    let bytes = std::fs::read(&path).unwrap();
    let short = dir.path().join("short.ttck");
    std::fs::write(&short, &bytes[..bytes.len() / 3]).unwrap();
    assert!(matches!(
        load_checkpoint(&short),
        Err(CheckpointError::Corrupt(_))
    ));

    // wrong magic -> not a checkpoint
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    let magic = dir.path().join("magic.ttck");
    std::fs::write(&magic, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint(&magic),
        Err(CheckpointError::BadMagic)
    ));

    // config mismatch is its own error, distinct from corruption
    let expected = NetworkConfig::toy();
    assert!(matches!(
        load_checkpoint_expecting(&path, &expected),
        Err(CheckpointError::ConfigMismatch { .. })
    ));
    // and the same call succeeds with the right config
    assert!(load_checkpoint_expecting(&path, net.config()).is_ok());
}

#[test]
fn saliency_rejects_untrained_or_broken_networks() {
    let img = TextureImage::from_fn(32, 32, 3, |y, x, _| {
        0.5 + 0.3 * ((y as f64 * 0.7).sin() * (x as f64 * 0.5).cos())
    })
    .unwrap();
    let net = build_network(tiny(), 43).unwrap();
    assert!(matches!(
        saliency(&net, &img),
        Err(SaliencyError::Untrained)
    ));
    let mut trained = net.clone();
    trained.set_train_steps(10);
    let map = saliency(&trained, &img).unwrap();
    assert_eq!(map.dim(), (32, 32));
    assert!(map.iter().all(|&v| (0.0..=1.0).contains(&v)));
    let mut broken = trained.clone();
    broken.params_mut()[0].value[[0, 0, 0, 0]] = f64::NAN;
    assert!(matches!(
        saliency(&broken, &img),
        Err(SaliencyError::NonFinite)
    ));
}
