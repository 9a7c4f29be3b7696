use ternmm::io::{init_checkpoint, load_model, quantize_checkpoint};
use ternmm::pipeline::{
    generate_recompute, preprocess_image, tokenize_prompt, RgbImage, BOS, EOS, IMG,
};
use ternmm::{
    Error, GenerationParams, KernelPlan, Model, ModelConfig, PrecisionMap, Session, Tensor,
};

fn toy(seed: u64) -> Model {
    let f = init_checkpoint(&ModelConfig::toy(), seed).unwrap();
    let (q, _) = quantize_checkpoint(&f, &PrecisionMap::default()).unwrap();
    load_model(&q).unwrap()
}

fn gradient_image() -> Tensor {
    let (w, h) = (224, 224);
    let mut px = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            px.extend_from_slice(&[(x * 255 / (w - 1)) as u8, (y * 255 / (h - 1)) as u8, 128]);
        }
    }
    preprocess_image(&RgbImage::new(w, h, px).unwrap(), 224).unwrap()
}

#[test]
fn decoder_is_causal() {
    let model = toy(0);
    let a = model.decoder.embed_tokens(&[BOS, 10, 20, 30, 40]).unwrap();
    let b = model.decoder.embed_tokens(&[BOS, 10, 20, 99, 7]).unwrap();
    let plan = KernelPlan::default();
    let la = model.decoder.logits(&a, None, &plan).unwrap();
    let lb = model.decoder.logits(&b, None, &plan).unwrap();
    for row in 0..3 {
        assert_eq!(la.row(row), lb.row(row), "position {row} saw the future");
    }
    assert_ne!(la.row(3), lb.row(3));
}

#[test]
fn image_rows_only_affect_later_positions() {
    let model = toy(1);
    let ids = tokenize_prompt("ab<image>cd");
    let img = gradient_image();
    let blank = preprocess_image(&RgbImage::filled(224, 224, [0, 0, 0]), 224).unwrap();
    let plan = KernelPlan::default();
    let ca = model.context(&ids, Some(&img)).unwrap();
    let cb = model.context(&ids, Some(&blank)).unwrap();
    assert_eq!(ca.image_span, 3..259);
    let la = model.decoder.logits(&ca.embeddings, None, &plan).unwrap();
    let lb = model.decoder.logits(&cb.embeddings, None, &plan).unwrap();
    for row in 0..3 {
        assert_eq!(la.row(row), lb.row(row));
    }
    assert_ne!(la.row(ca.len() - 1), lb.row(cb.len() - 1));
}

#[test]
fn cached_sampling_matches_recompute() {
    let model = toy(2);
    let ctx = model
        .context(&tokenize_prompt("<image>q:"), Some(&gradient_image()))
        .unwrap();
    for (temperature, top_p, seed) in [(0.0, 1.0, 0), (0.7, 0.95, 1), (1.3, 0.5, 2)] {
        let params = GenerationParams {
            max_new_tokens: 20,
            temperature,
            top_p,
            seed,
            stop: None,
        };
        let cached = Session::new(&model, KernelPlan::default())
            .generate(&ctx, &params)
            .unwrap();
        let full = generate_recompute(&model, &ctx, &params, |_, _| {}).unwrap();
        assert_eq!(cached, full, "T={temperature} p={top_p}");
    }
}

#[test]
fn generation_stops_at_the_stop_token() {
    let model = toy(3);
    let ctx = model.context(&tokenize_prompt("hi"), None).unwrap();
    let free = GenerationParams {
        max_new_tokens: 6,
        stop: None,
        ..GenerationParams::default()
    };
    let ids = Session::new(&model, KernelPlan::default())
        .generate(&ctx, &free)
        .unwrap();
    let stop = GenerationParams {
        stop: Some(ids[2]),
        ..free.clone()
    };
    let first = ids.iter().position(|&t| t == ids[2]).unwrap();
    let mut session = Session::new(&model, KernelPlan::default());
    let stopped = session.generate(&ctx, &stop).unwrap();
    assert_eq!(stopped, ids[..=first]);
    assert_eq!(session.cache.len(), ctx.len() + stopped.len());
    assert_eq!(GenerationParams::default().stop, Some(EOS));
}

#[test]
fn context_overflow_is_a_capacity_error() {
    let model = toy(0);
    let limit = model.config.decoder.max_context;
    let ids: Vec<u32> = std::iter::once(BOS)
        .chain((0..limit as u32).map(|i| i % 200))
        .collect();
    let ctx = model.context(&ids, None).unwrap();
    let params = GenerationParams::default();
    let e = Session::new(&model, KernelPlan::default())
        .generate(&ctx, &params)
        .unwrap_err();
    assert!(matches!(e, Error::Capacity(_)), "{e}");

    // Generation that runs into the limit fails rather than truncating.
    let short = model.context(&ids[..limit - 2], None).unwrap();
    let long = GenerationParams {
        max_new_tokens: 10,
        stop: None,
        ..params
    };
    let e = Session::new(&model, KernelPlan::default())
        .generate(&short, &long)
        .unwrap_err();
    assert!(matches!(e, Error::Capacity(_)), "{e}");
}

#[test]
fn greedy_choice_is_invariant_to_final_gain_scale() {
    // Scaling the final norm gain scales every logit by the same positive
    // factor, which must not change greedy decoding.
    let model = toy(4);
    let mut scaled = model.clone();
    scaled.decoder.final_norm = scaled.decoder.final_norm.scale(3.0);
    let ctx = model.context(&tokenize_prompt("seed text"), None).unwrap();
    let params = GenerationParams {
        max_new_tokens: 16,
        stop: None,
        ..GenerationParams::default()
    };
    let a = Session::new(&model, KernelPlan::default())
        .generate(&ctx, &params)
        .unwrap();
    let b = Session::new(&scaled, KernelPlan::default())
        .generate(&ctx, &params)
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn placeholder_without_image_is_dropped() {
    let model = toy(0);
    let with = model.context(&[BOS, IMG, 65], None).unwrap();
    let without = model.context(&[BOS, 65], None).unwrap();
    assert_eq!(with.embeddings, without.embeddings);
    assert!(with.image_span.is_empty());
}

#[test]
fn toy_vision_tower_golden_checksum() {
    // Regression lock on the seed-0 toy tower. Rows leave the post-norm with
    // zero mean, so the checksum weights positions instead of summing.
    let model = toy(0);
    let feats = model.vision.forward(&gradient_image()).unwrap();
    assert_eq!(feats.shape(), &[256, 32]);
    let weighted: f64 = feats
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| f64::from(v) * (i % 7 + 1) as f64)
        .sum();
    let abs: f64 = feats.data().iter().map(|&v| f64::from(v.abs())).sum();
    println!(
        "golden weighted={weighted:.6} abs={abs:.6} first={:?}",
        &feats.row(0)[..4]
    );
    assert!(
        (weighted - GOLDEN_WEIGHTED).abs() <= 1e-4 * GOLDEN_ABS,
        "weighted {weighted}"
    );
    assert!((abs - GOLDEN_ABS).abs() <= 1e-4 * GOLDEN_ABS, "abs {abs}");
    for (got, want) in feats.row(0).iter().zip(GOLDEN_ROW0) {
        assert!((got - want).abs() <= 1e-4, "row 0: {got} vs {want}");
    }
}

const GOLDEN_WEIGHTED: f64 = 29.420898;
const GOLDEN_ABS: f64 = 6588.014154;
const GOLDEN_ROW0: [f32; 4] = [-0.9260115, 1.4474263, 0.65686506, 0.36239088];
