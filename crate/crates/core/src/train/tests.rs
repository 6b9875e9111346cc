use super::*;
use crate::adt::SequenceMeta;
use crate::frame::Frame;
use crate::model::ModelConfig;
use crate::rng::substream;

fn seq(t: usize, h: usize, w: usize, seed: u64) -> AdSequence {
    let mut rng = substream(seed, "train-test", 0);
    let frames = (0..t)
        .map(|_| {
            Frame::from_fn(h, w, |_, _| {
                C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
            })
        })
        .collect();
    AdSequence::new(
        frames,
        SequenceMeta {
            dt: 1e-3,
            fc: 3.5e9,
            velocity: [1.0, 0.0],
            city_tag: "t".into(),
        },
    )
}

#[test]
fn lr_schedule_endpoints() {
    let cfg = TrainConfig {
        total_steps: 100,
        ..TrainConfig::default()
    };
    assert_eq!(lr_at(0, &cfg), 0.0);
    assert!((lr_at(1, &cfg) - cfg.lr_peak / 10.0).abs() < 1e-15);
    assert_eq!(lr_at(10, &cfg), cfg.lr_peak);
    assert!((lr_at(100, &cfg) - cfg.lr_peak / 100.0).abs() < 1e-12);
    let mut prev = f64::INFINITY;
    for s in 10..=100 {
        let lr = lr_at(s, &cfg);
        assert!(lr <= prev);
        prev = lr;
    }
}

#[test]
fn phase_only_augmentation_preserves_magnitudes() {
    let s = seq(2, 4, 4, 1);
    let out = apply_gain(
        &s,
        &Augmentation {
            phase: Some(1.234),
            ..Default::default()
        },
    );
    for (a, b) in s.frames.iter().zip(&out.frames) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x.norm() - y.norm()).abs() < 1e-12);
        }
    }
}

#[test]
fn disabled_augmentation_is_identity() {
    let s = seq(2, 4, 4, 2);
    let cfg = AugmentConfig {
        enabled: false,
        ..Default::default()
    };
    let mut rng = substream(2, "aug", 0);
    assert_eq!(augment(&s, &mut rng, &cfg), s);
}

#[test]
fn awgn_power_matches_target_snr() {
    let s = seq(20, 32, 32, 3);
    let mut rng = substream(3, "aug", 0);
    let noisy = add_noise(&s, 20.0, &mut rng);
    let noise: f64 = s.frames.iter().zip(&noisy.frames).map(|(a, b)| a.distance_sqr(b)).sum();
    let snr = 10.0 * (s.energy() / noise).log10();
    assert!((snr - 20.0).abs() < 0.5, "measured SNR {snr}");
}

#[test]
fn augment_pair_keeps_target_clean_of_noise() {
    let s = seq(2, 4, 4, 4);
    let cfg = AugmentConfig {
        phase_prob: 1.0,
        amplitude_prob: 1.0,
        noise_prob: 1.0,
        ..Default::default()
    };
    let mut rng = substream(4, "aug", 0);
    let (input, target) = augment_pair(&s, &mut rng, &cfg);
    // target is a pure complex gain of the source
    let g = target.frames[0].data[0] / s.frames[0].data[0];
    for (a, b) in s.frames.iter().zip(&target.frames) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x * g - y).norm() < 1e-9);
        }
    }
    assert!(input != target);
}

fn tiny_state() -> ModelState {
    let cfg = ModelConfig {
        depth: 1,
        heads: 2,
        embed_dim: 4,
        mlp_ratio: 2,
        ..ModelConfig::default()
    };
    ModelState::init(&cfg, &mut substream(5, "init", 0)).unwrap()
}

#[test]
fn zero_gradient_without_decay_leaves_parameters() {
    let mut state = tiny_state();
    let before = state.params.clone();
    let g = Gradients::zeros(&state.layout);
    let mut adam = AdamState::new(before.len());
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    optimizer_step(&mut state, &g, &mut adam, &cfg, 1e-2, &[]);
    assert_eq!(state.params, before);
}

#[test]
fn global_norm_clipping() {
    let state = tiny_state();
    let mut g = Gradients::zeros(&state.layout);
    g.data[0] = 6.0;
    g.data[1] = 8.0;
    let norm = clip_global_norm(&mut g, 1.0);
    assert_eq!(norm, 10.0);
    assert!((g.norm() - 1.0).abs() < 1e-15);
    assert!((g.data[0] - 0.6).abs() < 1e-15);
}

#[test]
fn first_adam_step_is_lr_times_sign() {
    // After one step mhat = g, vhat = g², so the update is
    // lr·g/(|g| + eps) ≈ lr·sign(g).
    let mut state = tiny_state();
    let before = state.params.clone();
    let mut g = Gradients::zeros(&state.layout);
    let i = state.layout.patch_b; // a bias: no weight decay
    g.data[i] = -0.3;
    let mut adam = AdamState::new(before.len());
    let cfg = TrainConfig::default();
    optimizer_step(&mut state, &g, &mut adam, &cfg, 1e-2, &[]);
    let delta = state.params[i] - before[i];
    assert!((delta - 1e-2 * 0.3 / (0.3 + 1e-8)).abs() < 1e-15);
}

#[test]
fn trainable_ranges_restrict_updates() {
    let mut state = tiny_state();
    let before = state.params.clone();
    let mut g = Gradients::zeros(&state.layout);
    g.data.iter_mut().for_each(|x| *x = 0.1);
    let mut adam = AdamState::new(before.len());
    let head = state.layout.pred_head_range();
    optimizer_step(&mut state, &g, &mut adam, &TrainConfig::default(), 1e-2, std::slice::from_ref(&head));
    for i in 0..before.len() {
        assert_eq!(state.params[i] != before[i], head.contains(&i), "param {i}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let state = tiny_state();
    let mut ck = Checkpoint::new(&state, "abc", "pretrain", 7);
    let mut adam = AdamState::new(state.params.len());
    adam.m[3] = f64::MIN_POSITIVE;
    adam.v[2] = 1.0 / 3.0;
    adam.step = 7;
    ck.adam = Some(adam);
    let r = substream(1, "x", 0);
    ck.rng = Some(CheckpointRng {
        data: crate::rng::RngState::capture(&r),
        mask: crate::rng::RngState::capture(&r),
        augment: crate::rng::RngState::capture(&r),
    });
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::PayloadLengthMismatch { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic { .. })));
}
