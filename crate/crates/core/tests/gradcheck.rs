use shad_core::lm::{
    analytic_gradient, compare_gradient, grad_check, probe_indices, Arch, ModelParams, Tokenization,
};
use shad_core::rng::Rng;

fn sequence(vocab: usize, len: usize, boundary: usize, seed: u64) -> Tokenization {
    let mut rng = Rng::new(seed);
    let ids: Vec<u32> = (0..len).map(|_| rng.below(vocab) as u32).collect();
    Tokenization {
        char_spans: vec![(0, 0); len],
        ids,
        boundary,
    }
}

fn arch(d: usize, layers: usize) -> Arch {
    Arch {
        vocab_size: 40,
        d_model: d,
        n_layers: layers,
        n_heads: 2,
        context: 32,
    }
}

// Init std 0.2 keeps attention scores away from the all-equal regime, where
// query/key gradients shrink to the size of finite-difference rounding.
const CHECK_STD: f64 = 0.2;

#[test]
fn backprop_matches_finite_differences() {
    for (d, layers) in [(16, 1), (16, 2), (64, 1), (64, 2)] {
        for seed in 0..3 {
            let p = ModelParams::<f64>::init_scaled(arch(d, layers), seed, CHECK_STD).unwrap();
            let tok = sequence(40, 24, 10, seed + 100);
            let err = grad_check(&p, &tok, 64, 1e-5, seed);
            assert!(err < 1e-5, "d={d} L={layers} seed={seed}: {err:e}");
        }
    }
}

#[test]
fn f32_parameters_are_checked_in_f64() {
    let p = ModelParams::<f32>::init_scaled(arch(16, 1), 5, CHECK_STD).unwrap();
    assert!(grad_check(&p, &sequence(40, 12, 4, 1), 32, 1e-5, 0) < 1e-5);
}

#[test]
fn zeroed_gradient_is_detected() {
    let p = ModelParams::<f64>::init_scaled(arch(16, 1), 1, CHECK_STD).unwrap();
    let tok = sequence(40, 16, 6, 2);
    let mut grad = analytic_gradient(&p, &tok);
    let probes = probe_indices(&p, &tok, 24, 9);
    let (victim, _) = probes
        .iter()
        .max_by(|a, b| grad[a.0].abs().total_cmp(&grad[b.0].abs()))
        .unwrap()
        .clone();
    grad[victim] = 0.0;
    let report = compare_gradient(&p, &tok, &grad, &probes, 1e-5);
    for probe in report {
        if probe.index == victim {
            assert!((probe.rel_error - 1.0).abs() < 1e-9, "{probe:?}");
        } else {
            assert!(probe.rel_error < 1e-5, "{probe:?}");
        }
    }
}

#[test]
fn zero_probes_returns_zero() {
    let p = ModelParams::<f64>::init(arch(16, 1), 0).unwrap();
    assert_eq!(grad_check(&p, &sequence(40, 8, 3, 0), 0, 1e-5, 0), 0.0);
}
