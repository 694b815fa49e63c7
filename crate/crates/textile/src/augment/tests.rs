use super::*;
use crate::img::seam_gap;

// indices are wrapped mod the core size so the duplicated border is
// bit-exact by construction
fn periodic(h: usize, w: usize) -> TextureImage {
    TextureImage::from_fn(h, w, 3, |y, x, c| {
        let fy = (y % (h - 1)) as f64 / (h - 1) as f64 * std::f64::consts::TAU;
        let fx = (x % (w - 1)) as f64 / (w - 1) as f64 * std::f64::consts::TAU;
        0.5 + 0.2 * (fy * 2.0 + c as f64).sin() + 0.15 * (fx * 3.0).cos() + 0.1 * (fy + fx).sin()
    })
    .unwrap()
}

fn aperiodic(h: usize, w: usize) -> TextureImage {
    TextureImage::from_fn(h, w, 3, |y, x, c| {
        ((y * 37 + x * 13 + c * 5) % 89) as f64 / 88.0
    })
    .unwrap()
}

fn identity_policy() -> AugmentPolicy {
    AugmentPolicy {
        p_op: 0.0,
        unfold_prob: 0.0,
        ..AugmentPolicy::default()
    }
}

#[test]
fn rng_streams_are_deterministic_and_distinct() {
    let mut a = RngState::for_stream(7, 3);
    let mut b = RngState::for_stream(7, 3);
    let mut c = RngState::for_stream(7, 4);
    let seq_a: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
    let seq_b: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
    let seq_c: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
    assert_eq!(seq_a, seq_b);
    assert_ne!(seq_a, seq_c);
    let mut parent = RngState::new(7);
    let mut f1 = parent.fork();
    let mut f2 = parent.fork();
    assert_ne!(f1.next_u64(), f2.next_u64());
}

#[test]
fn zero_probability_policy_is_identity() {
    let policy = identity_policy();
    let img = periodic(33, 41);
    let mut rng = RngState::new(1);
    let out = apply_preserving(&img, &mut rng, &policy, true);
    assert_eq!(out, img);
}

#[test]
fn unfold_only_draw_doubles_and_mirrors() {
    let policy = AugmentPolicy {
        p_op: 0.0,
        unfold_prob: 1.0,
        ..AugmentPolicy::default()
    };
    let img = aperiodic(64, 64);
    let mut rng = RngState::new(2);
    let out = apply_preserving(&img, &mut rng, &policy, true);
    assert_eq!((out.height(), out.width()), (128, 128));
    assert_eq!(out.data()[(10, 127, 0)], img.data()[(10, 0, 0)]);
    assert!(out.is_wrap_equal());
}

#[test]
fn preserving_pipeline_keeps_periodic_inputs_wrap_equal_exactly() {
    let policy = AugmentPolicy::default();
    let img = periodic(49, 65);
    assert_eq!(seam_gap(&img), 0.0);
    for stream in 0..40 {
        let mut rng = RngState::for_stream(11, stream);
        let out = apply_preserving(&img, &mut rng, &policy, true);
        assert_eq!(
            seam_gap(&out),
            0.0,
            "preserving draw on stream {stream} broke the borders"
        );
    }
}

#[test]
fn breaking_strictly_increases_the_seam_gap_of_periodic_inputs() {
    let policy = AugmentPolicy::default();
    let img = periodic(65, 65);
    for stream in 0..40 {
        let mut rng = RngState::for_stream(13, stream);
        let out = apply_breaking(&img, &mut rng, &policy);
        let gap = seam_gap(&out);
        assert!(
            gap > policy.break_gap,
            "breaking draw on stream {stream} left gap {gap}"
        );
    }
}

#[test]
fn wrap_aware_shift_keeps_borders_and_rolls_the_core() {
    let img = periodic(33, 33);
    let out = wrap_aware_shift(&img, 5, 9);
    assert!(out.is_wrap_equal());
    // interior pixel (away from the border) matches a torus roll of the core
    let core_h = 32;
    let y = 12usize;
    let x = 20usize;
    let sy = (y as isize - 5).rem_euclid(core_h) as usize;
    let sx = (x as isize - 9).rem_euclid(core_h) as usize;
    assert_eq!(out.data()[(y, x, 1)], img.data()[(sy, sx, 1)]);
    // plain images get the plain roll
    let plain = aperiodic(24, 24);
    assert_eq!(wrap_aware_shift(&plain, 3, 4), circular_shift(&plain, 3, 4));
}

#[test]
fn equalize_keeps_wrap_equality_and_handles_flat_channels() {
    let img = periodic(33, 33);
    let eq = equalize(&img);
    assert_eq!(seam_gap(&eq), 0.0);
    let flat = TextureImage::from_fn(16, 16, 1, |_, _, _| 0.4).unwrap();
    assert_eq!(equalize(&flat), flat);
}

#[test]
fn blur_keeps_wrap_equality_exactly_and_smooths() {
    let img = periodic(49, 49);
    let out = gaussian_blur(&img, 1.7);
    assert_eq!(seam_gap(&out), 0.0);
    let var = |im: &TextureImage| {
        let mean = im.data().mean().unwrap();
        im.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / im.data().len() as f64
    };
    assert!(var(&out) < var(&img));
    assert_eq!(gaussian_blur(&img, 0.0), img);
}

#[test]
fn noise_field_is_tied_across_duplicated_borders() {
    let img = periodic(41, 41);
    let mut rng = RngState::new(5);
    let out = super::ops::add_noise(&img, &mut rng, 0.04);
    assert_eq!(seam_gap(&out), 0.0);
    assert_ne!(out, img);
}

#[test]
fn random_tiling_identity_case() {
    let img = aperiodic(48, 48);
    let out = random_tiling_with(&img, (1, 1), 1.0, (0, 0), 48);
    assert_eq!(out, img);
    let wrapped = periodic(48, 48);
    let out = random_tiling_with(&wrapped, (1, 1), 1.0, (0, 0), 48);
    assert_eq!(out, wrapped);
}

#[test]
fn random_tiling_repeats_seamed_inputs_literally() {
    // reps (2,2) at scale 1.0 lands exactly on out_size: the result is the
    // plain 2x2 tiling, junction discontinuities intact
    let img = aperiodic(32, 32);
    let out = random_tiling_with(&img, (2, 2), 1.0, (0, 0), 64);
    assert_eq!((out.height(), out.width()), (64, 64));
    for y in 0..64 {
        for x in 0..64 {
            assert_eq!(out.data()[(y, x, 0)], img.data()[(y % 32, x % 32, 0)]);
        }
    }
    // the offset applies the same circular phase convention as the
    // wrap-equal path
    let out = random_tiling_with(&img, (1, 1), 1.0, (5, 3), 32);
    assert_eq!(out, circular_shift(&img, -5, -3));
}

#[test]
fn random_tiling_keeps_wrap_equal_inputs_wrap_equal() {
    let img = periodic(65, 49);
    for stream in 0..30 {
        let mut rng = RngState::for_stream(17, stream);
        let out = random_tiling(&img, &mut rng, &AugmentPolicy::default());
        assert_eq!((out.height(), out.width()), (64, 64));
        assert_eq!(seam_gap(&out), 0.0, "tiling draw {stream} broke the torus");
    }
}

#[test]
fn make_sample_is_deterministic_in_seed_and_stream() {
    let policy = AugmentPolicy::default();
    let pos = periodic(65, 65);
    for stream in 0..6 {
        let mut r1 = RngState::for_stream(99, stream);
        let mut r2 = RngState::for_stream(99, stream);
        let s1 = make_sample(&pos, true, &mut r1, &policy);
        let s2 = make_sample(&pos, true, &mut r2, &policy);
        assert_eq!(s1.image, s2.image);
        assert_eq!(s1.provenance, s2.provenance);
    }
}

#[test]
fn make_sample_labels_follow_provenance_over_many_draws() {
    let policy = AugmentPolicy {
        train_size: 24,
        ..AugmentPolicy::default()
    };
    let pos = periodic(25, 25);
    let neg = aperiodic(25, 25);
    let mut seen = [false; 4];
    for i in 0..10_000 {
        let mut rng = RngState::for_stream(23, i);
        let tileable = i % 2 == 0;
        let source = if tileable { &pos } else { &neg };
        let sample = make_sample(source, tileable, &mut rng, &policy);
        assert_eq!(sample.label, sample.provenance.label());
        match sample.provenance {
            Provenance::Tileable => {
                assert!(tileable);
                seen[0] = true;
            }
            Provenance::TileableBroken => {
                assert!(tileable);
                seen[1] = true;
            }
            Provenance::NonTileable => {
                assert!(!tileable);
                seen[2] = true;
            }
            Provenance::NonTileableAsPositive => {
                assert!(!tileable);
                seen[3] = true;
            }
        }
        assert_eq!((sample.image.height(), sample.image.width()), (24, 24));
    }
    assert!(
        seen.iter().all(|&s| s),
        "all four provenance paths should occur"
    );
}

#[test]
fn tileable_provenance_samples_stay_wrap_equal() {
    let policy = AugmentPolicy::default();
    let pos = periodic(65, 65);
    let mut count = 0;
    for i in 0..40 {
        let mut rng = RngState::for_stream(31, i);
        let sample = make_sample(&pos, true, &mut rng, &policy);
        if sample.provenance == Provenance::Tileable {
            count += 1;
            assert_eq!(seam_gap(&sample.image), 0.0);
        }
    }
    assert!(count > 5, "expected a reasonable share of preserving draws");
}

#[test]
fn policy_hash_tracks_content() {
    let a = AugmentPolicy::default();
    let b = AugmentPolicy::default();
    assert_eq!(a.hash(), b.hash());
    let c = AugmentPolicy {
        q_tf: 0.75,
        ..AugmentPolicy::default()
    };
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn policy_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let policy = AugmentPolicy {
        train_size: 96,
        q_ff: 0.0,
        ..AugmentPolicy::default()
    };
    policy.to_json_file(&path).unwrap();
    let back = AugmentPolicy::from_json_file(&path).unwrap();
    assert_eq!(policy, back);
}
