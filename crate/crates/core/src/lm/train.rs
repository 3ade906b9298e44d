//! Mini-batch training loop.
//!
//! Each step runs the forward pass for every sample of the batch, turns the
//! flattened token losses into per-token gradient coefficients through the
//! batch's [`WeightScheme`], backpropagates each sample separately and sums
//! the per-sample gradients in batch order. The summation order is fixed, so
//! results do not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{backward, forward};
use super::optim::{Adam, LrSchedule};
use super::params::{ModelParams, Scalar};
use super::tokenize::{output_roles, tokenize, Tokenization};
use super::vocab::Vocab;
use super::{LmError, Result};
use crate::corpus::{CoarseRole, Corpus, Sample};
use crate::rft::{batch_objective, WeightScheme};
use crate::rng::Rng;

/// Floating-point width used for the forward/backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn default_lr() -> f64 {
    3e-4
}
fn default_warmup() -> f64 {
    0.05
}
fn default_min_lr_ratio() -> f64 {
    0.1
}
fn default_batch() -> usize {
    16
}
fn default_max_len() -> usize {
    256
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}
fn default_log_interval() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    /// Final learning rate as a fraction of the peak.
    #[serde(default = "default_min_lr_ratio")]
    pub min_lr_ratio: f64,
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_max_len")]
    pub max_sequence_length: usize,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate: default_lr(),
            warmup_fraction: default_warmup(),
            min_lr_ratio: default_min_lr_ratio(),
            epochs,
            max_steps: None,
            batch_size: default_batch(),
            max_sequence_length: default_max_len(),
            seed,
            precision: Precision::F32,
            grad_clip: default_clip(),
            log_interval: default_log_interval(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LmError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad(format!(
                "min_lr_ratio must lie in [0, 1], got {}",
                self.min_lr_ratio
            ));
        }
        if self.batch_size == 0 || self.log_interval == 0 || self.max_sequence_length < 2 {
            return bad(
                "batch_size and log_interval must be >= 1, max_sequence_length >= 2".into(),
            );
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("grad_clip must be > 0, got {c}"));
            }
        }
        Ok(())
    }
}

/// A tokenized sample with optional coarse labels for its output tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub tokens: Tokenization,
    pub labels: Option<Vec<CoarseRole>>,
}

impl TrainExample {
    /// Tokenizes `sample`, taking labels from its ground-truth spans if any.
    pub fn from_sample(sample: &Sample, vocab: &Vocab, max_len: usize) -> Result<Self> {
        let tokens = tokenize(sample, vocab, max_len)?;
        let labels =
            output_roles(sample, &tokens).map(|r| r.into_iter().map(|l| l.coarse()).collect());
        Ok(Self {
            id: sample.id.clone(),
            tokens,
            labels,
        })
    }

    pub fn with_labels(mut self, labels: Vec<CoarseRole>) -> Result<Self> {
        if labels.len() != self.tokens.n_output() {
            return Err(LmError::Objective(format!(
                "sample `{}`: {} labels for {} output tokens",
                self.id,
                labels.len(),
                self.tokens.n_output()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub split: String,
    pub group: String,
    pub mean_loss: f64,
    pub w_b: Option<f64>,
    pub w_r: Option<f64>,
    #[serde(rename = "L_b")]
    pub l_b: Option<f64>,
    #[serde(rename = "L_r")]
    pub l_r: Option<f64>,
    pub scheme: String,
    pub tau_or_alpha: String,
}

/// Training log: one row per (logging step, group).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record([
                "step",
                "split",
                "group",
                "mean_loss",
                "w_b",
                "w_r",
                "L_b",
                "L_r",
                "scheme",
                "tau_or_alpha",
            ])
            .expect("in-memory write");
        }
        for row in &self.rows {
            w.serialize(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<HistoryRow>, _>>()
            .map_err(|e| LmError::Config(format!("history CSV: {e}")))?;
        Ok(Self { rows })
    }

    /// Last logged loss of `group` (`all`, `boilerplate` or `reasoning`).
    pub fn final_loss(&self, group: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.group == group)
            .map(|r| r.mean_loss)
    }
}

/// Per-output-token loss of `tok` under `params`.
pub fn token_losses<F: Scalar>(params: &ModelParams<F>, tok: &Tokenization) -> Vec<f64> {
    forward(params, tok).losses
}

/// Trains on every sample of `corpus`, using ground-truth labels when the
/// corpus carries them.
pub fn train(
    params: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocab,
    config: &TrainConfig,
    scheme: &WeightScheme,
) -> Result<(ModelParams, TrainHistory)> {
    let examples = corpus
        .samples
        .iter()
        .map(|s| TrainExample::from_sample(s, vocab, config.max_sequence_length))
        .collect::<Result<Vec<_>>>()?;
    train_examples(params, &examples, config, scheme)
}

pub fn train_examples(
    params: &ModelParams,
    examples: &[TrainExample],
    config: &TrainConfig,
    scheme: &WeightScheme,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    scheme
        .validate()
        .map_err(|e| LmError::Objective(e.to_string()))?;
    if config.max_sequence_length > params.arch.context {
        return Err(LmError::Config(format!(
            "max_sequence_length {} exceeds the model context {}",
            config.max_sequence_length, params.arch.context
        )));
    }
    for ex in examples {
        if ex.tokens.len() > config.max_sequence_length {
            return Err(LmError::TooLong {
                id: ex.id.clone(),
                len: ex.tokens.len(),
                max: config.max_sequence_length,
            });
        }
        if ex
            .tokens
            .ids
            .iter()
            .any(|&id| id as usize >= params.arch.vocab_size)
        {
            return Err(LmError::Vocab(format!(
                "sample `{}` has ids outside the model vocabulary",
                ex.id
            )));
        }
    }
    match config.precision {
        Precision::F32 => run(params.clone(), examples, config, scheme),
        Precision::F64 => {
            let (p, h) = run(params.cast::<f64>(), examples, config, scheme)?;
            Ok((p.cast(), h))
        }
    }
}

#[derive(Default)]
struct Interval {
    sum: f64,
    n: usize,
    sum_b: f64,
    n_b: usize,
    sum_r: f64,
    n_r: usize,
    w_sum: (f64, f64),
    w_batches: usize,
}

impl Interval {
    fn add(&mut self, losses: &[f64], labels: Option<&[CoarseRole]>, weights: Option<(f64, f64)>) {
        self.sum += losses.iter().sum::<f64>();
        self.n += losses.len();
        if let Some(labels) = labels {
            for (&l, r) in losses.iter().zip(labels) {
                match r {
                    CoarseRole::Boilerplate => {
                        self.sum_b += l;
                        self.n_b += 1;
                    }
                    CoarseRole::Reasoning => {
                        self.sum_r += l;
                        self.n_r += 1;
                    }
                }
            }
        }
        if let Some((b, r)) = weights {
            self.w_sum.0 += b;
            self.w_sum.1 += r;
            self.w_batches += 1;
        }
    }

    fn rows(&self, step: usize, scheme: &WeightScheme) -> Vec<HistoryRow> {
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        let l_b = mean(self.sum_b, self.n_b);
        let l_r = mean(self.sum_r, self.n_r);
        let (w_b, w_r) = match self.w_batches {
            0 => (None, None),
            k => (Some(self.w_sum.0 / k as f64), Some(self.w_sum.1 / k as f64)),
        };
        let row = |group: &str, loss: f64| HistoryRow {
            step,
            split: "train".into(),
            group: group.into(),
            mean_loss: loss,
            w_b,
            w_r,
            l_b,
            l_r,
            scheme: scheme.name().into(),
            tau_or_alpha: scheme.parameter(),
        };
        let mut rows = vec![row("all", self.sum / self.n as f64)];
        rows.extend(l_b.map(|l| row("boilerplate", l)));
        rows.extend(l_r.map(|l| row("reasoning", l)));
        rows
    }
}

fn run<F: Scalar>(
    mut params: ModelParams<F>,
    examples: &[TrainExample],
    config: &TrainConfig,
    scheme: &WeightScheme,
) -> Result<(ModelParams<F>, TrainHistory)> {
    let mut history = TrainHistory::default();
    if config.epochs == 0 || config.max_steps == Some(0) {
        return Ok((params, history));
    }
    if examples.is_empty() {
        return Err(LmError::Config("no training examples".into()));
    }
    let n = examples.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total = (config.epochs * steps_per_epoch).min(config.max_steps.unwrap_or(usize::MAX));
    let schedule = LrSchedule::new(
        config.learning_rate,
        config.warmup_fraction,
        total,
        config.min_lr_ratio,
    );
    let mut opt = Adam::<F>::new(params.len());
    let mut rng = Rng::derive(config.seed, "batches");
    let mut order: Vec<usize> = Vec::new();
    let mut interval = Interval::default();

    for step in 0..total {
        let within = step % steps_per_epoch;
        if within == 0 {
            order = (0..n).collect();
            rng.shuffle(&mut order);
        }
        let batch: Vec<&TrainExample> = order
            [within * config.batch_size..((within + 1) * config.batch_size).min(n)]
            .iter()
            .map(|&i| &examples[i])
            .collect();
        let batch_ids = || batch.iter().map(|e| e.id.clone()).collect::<Vec<_>>();

        let fwds: Vec<_> = batch
            .par_iter()
            .map(|ex| forward(&params, &ex.tokens))
            .collect();
        let losses: Vec<f64> = fwds.iter().flat_map(|f| f.losses.iter().copied()).collect();
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(LmError::NonFinite {
                step,
                batch_ids: batch_ids(),
            });
        }
        let labels: Option<Vec<CoarseRole>> = batch
            .iter()
            .map(|e| e.labels.as_deref())
            .collect::<Option<Vec<_>>>()
            .map(|ls| ls.concat());
        let obj = batch_objective(&losses, labels.as_deref(), scheme)
            .map_err(|e| LmError::Objective(e.to_string()))?;

        let mut offsets = Vec::with_capacity(fwds.len());
        let mut at = 0;
        for f in &fwds {
            offsets.push(at..at + f.n_predictions());
            at += f.n_predictions();
        }
        let sample_grads: Vec<Vec<F>> = fwds
            .par_iter()
            .zip(offsets.par_iter())
            .map(|(f, range)| {
                let coeffs: Vec<F> = obj.coefficients[range.clone()]
                    .iter()
                    .map(|&c| F::from_f64(c))
                    .collect();
                let mut g = vec![F::zero(); params.len()];
                backward(&params, f, &coeffs, &mut g);
                g
            })
            .collect();
        let mut grads = vec![F::zero(); params.len()];
        for g in &sample_grads {
            for (a, &b) in grads.iter_mut().zip(g) {
                *a += b;
            }
        }
        drop(sample_grads);

        if let Some(clip) = config.grad_clip {
            let norm = grads.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(LmError::NonFinite {
                    step,
                    batch_ids: batch_ids(),
                });
            }
            if norm > clip {
                let scale = F::from_f64(clip / norm);
                grads.iter_mut().for_each(|g| *g *= scale);
            }
        }
        opt.step(&mut params.data, &grads, schedule.at(step));
        if !params.is_finite() {
            return Err(LmError::NonFinite {
                step,
                batch_ids: batch_ids(),
            });
        }

        interval.add(&losses, labels.as_deref(), obj.weights);
        if (step + 1) % config.log_interval == 0 || step + 1 == total {
            history.rows.extend(interval.rows(step + 1, scheme));
            interval = Interval::default();
        }
    }
    Ok((params, history))
}

/// Token-level loss summary of a model on a set of examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub n: usize,
    pub l_b: Option<f64>,
    pub n_b: usize,
    pub l_r: Option<f64>,
    pub n_r: usize,
}

pub fn evaluate(params: &ModelParams, examples: &[TrainExample]) -> EvalStats {
    let per: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|ex| token_losses(params, &ex.tokens))
        .collect();
    let mut interval = Interval::default();
    for (ex, losses) in examples.iter().zip(&per) {
        interval.add(losses, ex.labels.as_deref(), None);
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    EvalStats {
        mean: mean(interval.sum, interval.n).unwrap_or(f64::NAN),
        n: interval.n,
        l_b: mean(interval.sum_b, interval.n_b),
        n_b: interval.n_b,
        l_r: mean(interval.sum_r, interval.n_r),
        n_r: interval.n_r,
    }
}
