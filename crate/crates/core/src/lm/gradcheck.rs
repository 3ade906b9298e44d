//! Central finite-difference check of the analytic gradient.
//!
//! The checked objective is the mean output-token loss of one sequence,
//! evaluated entirely in f64.

use super::model::{backward, forward};
use super::params::{ModelParams, Scalar};
use super::tokenize::Tokenization;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub tensor: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

fn objective(params: &ModelParams<f64>, tok: &Tokenization) -> f64 {
    let losses = forward(params, tok).losses;
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Gradient of the mean output-token loss.
pub fn analytic_gradient(params: &ModelParams<f64>, tok: &Tokenization) -> Vec<f64> {
    let fwd = forward(params, tok);
    let n = fwd.n_predictions();
    let mut grads = vec![0.0; params.len()];
    backward(params, &fwd, &vec![1.0 / n as f64; n], &mut grads);
    grads
}

/// Picks `n` parameter indices, cycling through the tensors in storage
/// order. Embedding probes land on rows the sequence actually uses. The
/// key bias is skipped: it shifts every attention score of a row by the
/// same amount, so its true gradient is exactly zero and a relative error
/// would only compare rounding noise.
pub fn probe_indices(
    params: &ModelParams<f64>,
    tok: &Tokenization,
    n: usize,
    seed: u64,
) -> Vec<(usize, String)> {
    let layout = params.layout();
    let d = params.arch.d_model;
    let named = layout.named();
    let mut rng = Rng::derive(seed, "grad-probes");
    (0..n)
        .map(|i| {
            let (name, range) = &named[i % named.len()];
            let index = if range == &layout.wte {
                let row = tok.ids[rng.below(tok.ids.len())] as usize;
                range.start + row * d + rng.below(d)
            } else if range == &layout.wpe {
                range.start + rng.below(tok.ids.len()) * d + rng.below(d)
            } else if layout.layers.iter().any(|l| &l.b_qkv == range) {
                // query or value part
                let j = rng.below(2 * d);
                range.start + if j < d { j } else { j + d }
            } else {
                range.start + rng.below(range.len())
            };
            (index, name.clone())
        })
        .collect()
}

/// Compares `grad` against central differences at the given indices.
pub fn compare_gradient(
    params: &ModelParams<f64>,
    tok: &Tokenization,
    grad: &[f64],
    probes: &[(usize, String)],
    epsilon: f64,
) -> Vec<Probe> {
    let mut p = params.clone();
    probes
        .iter()
        .map(|(index, tensor)| {
            let orig = p.data[*index];
            p.data[*index] = orig + epsilon;
            let plus = objective(&p, tok);
            p.data[*index] = orig - epsilon;
            let minus = objective(&p, tok);
            p.data[*index] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grad[*index];
            let rel_error =
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            Probe {
                index: *index,
                tensor: tensor.clone(),
                analytic,
                numeric,
                rel_error,
            }
        })
        .collect()
}

pub fn grad_check_probes<F: Scalar>(
    params: &ModelParams<F>,
    tok: &Tokenization,
    n_probes: usize,
    epsilon: f64,
    seed: u64,
) -> Vec<Probe> {
    let p64 = params.cast::<f64>();
    let grad = analytic_gradient(&p64, tok);
    let probes = probe_indices(&p64, tok, n_probes, seed);
    compare_gradient(&p64, tok, &grad, &probes, epsilon)
}

/// Maximum relative error over `n_probes` random parameters.
pub fn grad_check<F: Scalar>(
    params: &ModelParams<F>,
    tok: &Tokenization,
    n_probes: usize,
    epsilon: f64,
    seed: u64,
) -> f64 {
    if n_probes == 0 {
        log::warn!("grad_check called with zero probes; nothing was checked");
        return 0.0;
    }
    grad_check_probes(params, tok, n_probes, epsilon, seed)
        .iter()
        .map(|p| p.rel_error)
        .fold(0.0, f64::max)
}
