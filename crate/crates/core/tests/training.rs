use proptest::prelude::*;
use ternmm::io::layout::group_of;
use ternmm::io::{f32_params, init_checkpoint};
use ternmm::pipeline::{BOS, EOS, IMG};
use ternmm::tensor::matmul_t;
use ternmm::train::gradcheck::finite_diff_check_store;
use ternmm::train::graph::grad_store;
use ternmm::train::{
    bitlinear_train_step, cosine_warmup_lr, example_loss, synthetic_dataset, train_toy, Example,
    LinearMode, LossMask, ParamGroup, TrainConfig,
};
use ternmm::{Error, ModelConfig, Tensor};

/// Small enough that finite differences over every group stay cheap.
fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::toy();
    c.vision.d = 8;
    c.vision.heads = 2;
    c.vision.mlp_hidden = 16;
    c.vision.layers = 1;
    c.vision.image_size = 28;
    c.projector.d_in = 8;
    c.projector.hidden = 16;
    c.projector.d_out = 16;
    c.decoder.d = 16;
    c.decoder.heads = 2;
    c.decoder.head_dim = 8;
    c.decoder.ffn_hidden = 24;
    c.decoder.layers = 1;
    c
}

#[test]
fn decoder_surrogate_gradients_match_finite_differences() {
    let cfg = tiny_config();
    let params = f32_params(&init_checkpoint(&cfg, 21).unwrap()).unwrap();
    let features = Tensor::random_uniform(&[3, cfg.vision.d], -1.0, 1.0, 22);
    let tokens = vec![BOS, 72, IMG, 101, 108, 111, EOS];
    let ex = Example {
        features: &features,
        tokens: &tokens,
        prompt_len: 2,
    };
    for mask in [LossMask::AllText, LossMask::ResponseOnly] {
        let mut grads = grad_store(&params, &["projector", "llm"]);
        example_loss(
            &params,
            &cfg,
            &ex,
            mask,
            LinearMode::Surrogate,
            1.0,
            Some(&mut grads),
        )
        .unwrap();
        let loss = |p: &ternmm::train::ParamStore| {
            example_loss(p, &cfg, &ex, mask, LinearMode::Surrogate, 1.0, None).unwrap()
        };
        let check = finite_diff_check_store(&params, &grads, loss, 1e-2, 24);
        assert!(check.passes(2e-2), "{mask:?}: {:?}", check.per_tensor);
    }
}

#[test]
fn frozen_groups_receive_no_gradient() {
    let cfg = tiny_config();
    let params = f32_params(&init_checkpoint(&cfg, 1).unwrap()).unwrap();
    let features = Tensor::random_uniform(&[3, cfg.vision.d], -1.0, 1.0, 2);
    let tokens = vec![BOS, IMG, 65, 66, EOS];
    let ex = Example {
        features: &features,
        tokens: &tokens,
        prompt_len: 1,
    };
    let mut grads = grad_store(&params, &["projector"]);
    example_loss(
        &params,
        &cfg,
        &ex,
        LossMask::AllText,
        LinearMode::Ste,
        1.0,
        Some(&mut grads),
    )
    .unwrap();
    assert!(grads.keys().all(|k| group_of(k) == "projector"));
    assert!(grads.values().any(|g| g.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn accumulation_matches_a_larger_batch() {
    let cfg = tiny_config();
    let data = synthetic_dataset(4, cfg.vision.image_size, 3).unwrap();
    let start = f32_params(&init_checkpoint(&cfg, 4).unwrap()).unwrap();
    let base = TrainConfig {
        total_steps: 4,
        ..TrainConfig::phase2()
    };
    let (mut a, mut b) = (start.clone(), start);
    let ra = train_toy(
        &mut a,
        &cfg,
        &data,
        &TrainConfig {
            batch_size: 2,
            accumulation: 1,
            ..base.clone()
        },
    )
    .unwrap();
    let rb = train_toy(
        &mut b,
        &cfg,
        &data,
        &TrainConfig {
            batch_size: 1,
            accumulation: 2,
            ..base
        },
    )
    .unwrap();
    for (name, t) in &a {
        let diff = t.max_abs_diff(&b[name]).unwrap();
        assert!(diff <= 1e-6, "{name} differs by {diff}");
    }
    for (x, y) in ra.history.iter().zip(&rb.history) {
        assert!((x.loss - y.loss).abs() <= 1e-9 && x.lr == y.lr);
    }
}

#[test]
fn training_is_deterministic_and_logs_every_step() {
    let cfg = tiny_config();
    let data = synthetic_dataset(3, cfg.vision.image_size, 5).unwrap();
    let tc = TrainConfig {
        total_steps: 6,
        batch_size: 2,
        accumulation: 1,
        ..TrainConfig::phase1()
    };
    let init = f32_params(&init_checkpoint(&cfg, 6).unwrap()).unwrap();
    let (mut a, mut b) = (init.clone(), init);
    let ra = train_toy(&mut a, &cfg, &data, &tc).unwrap();
    let rb = train_toy(&mut b, &cfg, &data, &tc).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.history.len(), 6);
    assert_eq!(
        ra.history.iter().map(|s| s.step).collect::<Vec<_>>(),
        (1..=6).collect::<Vec<_>>()
    );
    assert_eq!(
        ra.history
            .iter()
            .map(|s| s.loss.to_bits())
            .collect::<Vec<_>>(),
        rb.history
            .iter()
            .map(|s| s.loss.to_bits())
            .collect::<Vec<_>>()
    );
}

#[test]
fn group_overrides_must_agree_with_the_phase() {
    let cfg = tiny_config();
    let data = synthetic_dataset(1, cfg.vision.image_size, 0).unwrap();
    let mut params = f32_params(&init_checkpoint(&cfg, 0).unwrap()).unwrap();
    let bad = TrainConfig {
        total_steps: 1,
        groups: Some(vec![ParamGroup {
            name: "llm".into(),
            frozen: false,
        }]),
        ..TrainConfig::phase1()
    };
    assert!(matches!(
        train_toy(&mut params, &cfg, &data, &bad),
        Err(Error::Phase(_))
    ));
    let bad_phase = TrainConfig {
        phase: 3,
        ..TrainConfig::phase1()
    };
    assert!(matches!(
        train_toy(&mut params, &cfg, &data, &bad_phase),
        Err(Error::Phase(_))
    ));
    assert!(matches!(
        train_toy(&mut params, &cfg, &[], &TrainConfig::phase1()),
        Err(Error::Data(_))
    ));
}

#[test]
fn schedule_warms_up_then_decays() {
    let (warmup, total, peak) = (6, 200, 1e-3);
    let lr: Vec<f64> = (1..=total)
        .map(|k| cosine_warmup_lr(k, warmup, total, peak))
        .collect();
    assert_eq!(
        TrainConfig {
            total_steps: 200,
            ..TrainConfig::phase1()
        }
        .warmup_steps(),
        warmup
    );
    assert!(lr[..warmup].windows(2).all(|w| w[0] < w[1]));
    assert_eq!(lr[warmup - 1], peak);
    assert!(lr[warmup..].windows(2).all(|w| w[0] >= w[1]));
    assert!(lr[total - 1].abs() < 1e-12);
    assert!(lr.iter().all(|&v| v > 0.0 || v.abs() < 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ste_passes_gradients_straight_through(o in 1usize..8, k in 1usize..20, m in 1usize..4, seed in any::<u64>()) {
        let w = Tensor::random_uniform(&[o, k], -1.0, 1.0, seed);
        let x = Tensor::random_uniform(&[m, k], -1.0, 1.0, seed ^ 7);
        let g = Tensor::random_uniform(&[m, o], -1.0, 1.0, seed ^ 9);
        let (y, dw, dx) = bitlinear_train_step(&w, &x, &g).unwrap();
        prop_assert_eq!(y.shape(), &[m, o]);
        prop_assert_eq!(dw.shape(), w.shape());
        prop_assert_eq!(dx.shape(), x.shape());
        // dW = gᵀ·x̃ with x̃ the fake-quantized input: bounded by the exact
        // product up to the int8 rounding of each row.
        let exact = matmul_t(&g.transpose().unwrap(), &x.transpose().unwrap()).unwrap();
        let gmax = g.data().iter().fold(0.0f32, |a, v| a.max(v.abs()));
        prop_assert!(dw.max_abs_diff(&exact).unwrap() <= m as f32 * gmax * (0.5 / 127.0) + 1e-6);
    }
}
