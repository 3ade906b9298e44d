use proptest::prelude::*;
use shad_core::corpus::{generate_corpus, Corpus, GeneratorConfig, Provenance, Sample};
use shad_core::lm::{
    build_vocab, forward, token_losses, tokenize, train, Arch, ModelParams, Tokenization,
    TrainConfig, TrainHistory,
};
use shad_core::rft::WeightScheme;
use shad_core::rng::Rng;

fn tiny_arch(vocab_size: usize) -> Arch {
    Arch {
        vocab_size,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        context: 64,
    }
}

/// All weights zero except the output bias: every position predicts
/// softmax(head.b).
fn bias_only(vocab_size: usize, logits: &[f32]) -> ModelParams {
    let mut p = ModelParams::zeros(tiny_arch(vocab_size)).unwrap();
    let head_b = p.layout().head_b;
    p.data[head_b].copy_from_slice(logits);
    p
}

fn tokens(ids: &[u32], boundary: usize) -> Tokenization {
    Tokenization {
        ids: ids.to_vec(),
        char_spans: vec![(0, 0); ids.len()],
        boundary,
    }
}

#[test]
fn uniform_logits_give_log_vocab() {
    let p = bias_only(10, &[0.0; 10]);
    for l in token_losses(&p, &tokens(&[5, 4, 7, 8, 9], 2)) {
        assert!((l - 10f64.ln()).abs() < 1e-6);
    }
}

#[test]
fn certain_prediction_gives_zero_loss() {
    let mut logits = [-200.0f32; 6];
    logits[5] = 200.0;
    let p = bias_only(6, &logits);
    for l in token_losses(&p, &tokens(&[1, 4, 5, 5], 2)) {
        assert!((0.0..1e-150).contains(&l), "{l:e}");
    }
}

#[test]
fn three_token_losses_match_high_precision_oracle() {
    // Oracle: 50-digit softmax/log evaluation of the same logits, frozen here.
    let p = bias_only(6, &[2.5, -1.0, 0.25, 7.0, -3.25, 1.125]);
    let losses = token_losses(&p, &tokens(&[1, 2, 4, 3, 0, 5], 3));
    let oracle = [
        0.015_341_210_038_601_397,
        4.515_341_210_038_601,
        5.890_341_210_038_601,
    ];
    for (got, want) in losses.iter().zip(oracle) {
        assert!((got - want).abs() / want < 1e-6, "{got} vs {want}");
    }
    let confident = bias_only(6, &[30.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let l = token_losses(&confident, &tokens(&[1, 4, 0], 2))[0];
    assert!(
        (l - 4.678_811_484_418_993e-13).abs() / 4.678_811_484_418_993e-13 < 1e-6,
        "{l:e}"
    );
}

#[test]
fn predicted_distributions_sum_to_one() {
    let p = ModelParams::<f32>::init_scaled(tiny_arch(30), 3, 0.5).unwrap();
    let mut rng = Rng::new(4);
    let ids: Vec<u32> = (0..40).map(|_| rng.below(30) as u32).collect();
    let fwd = forward(&p, &tokens(&ids, 12));
    for _ in 0..10 {
        let k = rng.below(fwd.n_predictions());
        let total: f64 = fwd.distribution(k).iter().sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn losses_are_finite_and_non_negative(seed in any::<u64>(), len in 2usize..40, cut in 1usize..40) {
        let boundary = cut.min(len - 1);
        let p = ModelParams::<f32>::init_scaled(tiny_arch(25), seed, 0.3).unwrap();
        let mut rng = Rng::new(seed ^ 1);
        let ids: Vec<u32> = (0..len).map(|_| rng.below(25) as u32).collect();
        let losses = token_losses(&p, &tokens(&ids, boundary));
        prop_assert_eq!(losses.len(), len - boundary);
        prop_assert!(losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }
}

fn small_corpus(n: usize, seed: u64) -> Corpus {
    generate_corpus(&GeneratorConfig::with_defaults(n, seed)).unwrap()
}

#[test]
fn zero_epochs_is_a_no_op() {
    let corpus = small_corpus(4, 1);
    let vocab = build_vocab(&corpus, 512).unwrap();
    let p = ModelParams::init(Arch::desk(vocab.len()), 0).unwrap();
    let (q, h) = train(
        &p,
        &corpus,
        &vocab,
        &TrainConfig::new(0, 1),
        &WeightScheme::Sft,
    )
    .unwrap();
    assert_eq!(p, q);
    assert!(h.is_empty());
}

#[test]
fn training_is_deterministic() {
    let corpus = small_corpus(12, 2);
    let vocab = build_vocab(&corpus, 512).unwrap();
    let p = ModelParams::init(Arch::desk(vocab.len()), 0).unwrap();
    let mut cfg = TrainConfig::new(2, 9);
    cfg.batch_size = 4;
    cfg.log_interval = 2;
    let scheme = WeightScheme::Rft { inv_tau: 1.0 };
    let (a, ha) = train(&p, &corpus, &vocab, &cfg, &scheme).unwrap();
    let (b, hb) = train(&p, &corpus, &vocab, &cfg, &scheme).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha.to_csv(), hb.to_csv());
    assert_eq!(TrainHistory::from_csv(&ha.to_csv()).unwrap(), ha);
    let header = String::from_utf8(ha.to_csv()).unwrap();
    assert!(header.starts_with("step,split,group,mean_loss,w_b,w_r,L_b,L_r,scheme,tau_or_alpha\n"));
}

#[test]
fn single_sample_is_memorized() {
    let corpus = small_corpus(1, 3);
    let vocab = build_vocab(&corpus, 512).unwrap();
    let p = ModelParams::init(Arch::desk(vocab.len()), 1).unwrap();
    let mut cfg = TrainConfig::new(500, 4);
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 1;
    cfg.log_interval = 50;
    let (q, h) = train(&p, &corpus, &vocab, &cfg, &WeightScheme::Sft).unwrap();
    let tok = tokenize(&corpus.samples[0], &vocab, 256).unwrap();
    let losses = token_losses(&q, &tok);
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    println!(
        "memorization: final mean loss {mean:e}, history {:?}",
        h.final_loss("all")
    );
    assert!(mean < 0.05, "{mean}");
}

#[test]
fn too_long_sample_is_rejected_by_name() {
    let s = Sample {
        id: "long-one".into(),
        input: "a ".repeat(300),
        output: "b".into(),
        role_spans: None,
    };
    let corpus = Corpus::new(vec![s], Provenance::Ingested { path: "mem".into() }).unwrap();
    let vocab = build_vocab(&corpus, 16).unwrap();
    let p = ModelParams::init(Arch::desk(vocab.len()), 0).unwrap();
    let err = train(
        &p,
        &corpus,
        &vocab,
        &TrainConfig::new(1, 0),
        &WeightScheme::Sft,
    )
    .unwrap_err();
    assert!(err.to_string().contains("long-one"), "{err}");
}
