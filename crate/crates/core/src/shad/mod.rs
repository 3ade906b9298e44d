//! Shuffle-aware token discrimination.
//!
//! A copy of the base model θ_o is fine-tuned on a small output-shuffled
//! sample of the corpus, giving θ_s. Shuffling breaks the link between a
//! query and its answer, so θ_s keeps (or sharpens) its grip on tokens that
//! every answer shares while losing the ability to predict query-specific
//! ones. A token whose loss does not rise under θ_s (`LD = l_s - l_o <= 0`)
//! is boilerplate; one whose loss rises is reasoning.

mod annotate;

use serde::{Deserialize, Serialize};

use crate::corpus::{CoarseRole, RoleLabel, Sample, ShuffledCorpus};
use crate::lm::{
    output_roles, output_texts, token_losses, tokenize, train_examples, LmError, ModelParams,
    TrainConfig, TrainExample, Vocab,
};
use crate::rft::WeightScheme;

pub use annotate::{
    annotate_corpus, load_annotations, save_annotations, AnnotatedCorpus, AnnotationError,
    Fingerprint, SampleAnnotation,
};

#[derive(Debug, thiserror::Error)]
pub enum ShadError {
    #[error("loss difference is NaN")]
    NaN,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("models disagree: {0}")]
    Mismatch(String),
    #[error("annotation line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ShadError>;

/// Default l_s cut between Format and TemplateConnecting, in nats.
pub const DEFAULT_FORMAT_THRESHOLD: f64 = 0.1;

/// One output token scored by both models.
///
/// Losses are stored as `f32` and `ld` is their `f32` difference, so the
/// stored triple is exactly self-consistent and survives text round-trips.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub sample_id: String,
    pub k: usize,
    pub text: String,
    pub l_o: f32,
    pub l_s: f32,
    pub ld: f32,
    pub predicted: CoarseRole,
    pub predicted_fine: Option<RoleLabel>,
    pub truth: Option<RoleLabel>,
}

/// Boilerplate iff `ld <= 0`.
pub fn classify(ld: f64) -> Result<CoarseRole> {
    classify_with_margin(ld, 0.0)
}

/// Boilerplate iff `ld <= margin`; the margin moves the boundary explicitly.
pub fn classify_with_margin(ld: f64, margin: f64) -> Result<CoarseRole> {
    if ld.is_nan() {
        return Err(ShadError::NaN);
    }
    Ok(if ld <= margin {
        CoarseRole::Boilerplate
    } else {
        CoarseRole::Reasoning
    })
}

/// Splits a boilerplate record by its tuned-model loss: near-certain tokens
/// are Format, the rest TemplateConnecting.
pub fn subcategorize(record: &TokenRecord, format_threshold: f64) -> Result<RoleLabel> {
    if record.predicted != CoarseRole::Boilerplate {
        return Err(ShadError::Contract(format!(
            "token {} of `{}` is predicted Reasoning and has no boilerplate subtype",
            record.k, record.sample_id
        )));
    }
    Ok(if f64::from(record.l_s) <= format_threshold {
        RoleLabel::Format
    } else {
        RoleLabel::TemplateConnecting
    })
}

/// Classification knobs applied when records are built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub margin: f64,
    /// When set, boilerplate records also get a Format/TemplateConnecting
    /// subtype at this l_s threshold.
    pub format_threshold: Option<f64>,
    pub max_len: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            margin: 0.0,
            format_threshold: Some(DEFAULT_FORMAT_THRESHOLD),
            max_len: 256,
        }
    }
}

fn check_pair(theta_o: &ModelParams, theta_s: &ModelParams, vocab: &Vocab) -> Result<()> {
    if theta_o.arch != theta_s.arch {
        return Err(ShadError::Mismatch(format!(
            "θ_o is {} but θ_s is {}",
            theta_o.arch, theta_s.arch
        )));
    }
    if theta_o.arch.vocab_size != vocab.len() {
        return Err(ShadError::Mismatch(format!(
            "models expect {} tokens, vocabulary has {}",
            theta_o.arch.vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

/// Scores every output token of `sample` under both models.
pub fn loss_diff(
    theta_o: &ModelParams,
    theta_s: &ModelParams,
    sample: &Sample,
    vocab: &Vocab,
    opts: &ClassifyOptions,
) -> Result<Vec<TokenRecord>> {
    check_pair(theta_o, theta_s, vocab)?;
    let max_len = opts.max_len.min(theta_o.arch.context);
    let tok = tokenize(sample, vocab, max_len)?;
    let l_o = token_losses(theta_o, &tok);
    let l_s = token_losses(theta_s, &tok);
    let texts = output_texts(sample, &tok);
    let truth = output_roles(sample, &tok);
    let mut records = Vec::with_capacity(l_o.len());
    for k in 0..l_o.len() {
        let (lo, ls) = (l_o[k] as f32, l_s[k] as f32);
        let ld = ls - lo;
        let predicted = classify_with_margin(f64::from(ld), opts.margin)?;
        let mut rec = TokenRecord {
            sample_id: sample.id.clone(),
            k,
            text: texts[k].clone(),
            l_o: lo,
            l_s: ls,
            ld,
            predicted,
            predicted_fine: None,
            truth: truth.as_ref().map(|t| t[k]),
        };
        if let (Some(th), CoarseRole::Boilerplate) = (opts.format_threshold, predicted) {
            rec.predicted_fine = Some(subcategorize(&rec, th)?);
        }
        records.push(rec);
    }
    Ok(records)
}

/// Fine-tunes a copy of `base` on the shuffled pairs with the plain token
/// mean objective. `base` itself is left untouched.
pub fn tune_discriminator(
    base: &ModelParams,
    shuffled: &ShuffledCorpus,
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<ModelParams> {
    let examples = shuffled
        .samples
        .iter()
        .map(|s| {
            Ok(TrainExample {
                id: s.id.clone(),
                tokens: tokenize(s, vocab, config.max_sequence_length)?,
                labels: None,
            })
        })
        .collect::<std::result::Result<Vec<_>, LmError>>()?;
    let (theta_s, _) = train_examples(base, &examples, config, &WeightScheme::Sft)?;
    Ok(theta_s)
}

/// One row of a Format-threshold calibration sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub accuracy: f64,
    pub n: usize,
}

/// Accuracy of the l_s threshold rule on tokens that are truly Format or
/// TemplateConnecting and predicted Boilerplate, for each candidate.
/// Returns the rows and the best threshold (ties go to the smallest).
pub fn calibrate_format_threshold<'a>(
    records: impl IntoIterator<Item = &'a TokenRecord>,
    candidates: &[f64],
) -> Result<(Vec<ThresholdRow>, f64)> {
    let scored: Vec<(f32, RoleLabel)> = records
        .into_iter()
        .filter(|r| r.predicted == CoarseRole::Boilerplate)
        .filter_map(|r| match r.truth {
            Some(t @ (RoleLabel::Format | RoleLabel::TemplateConnecting)) => Some((r.l_s, t)),
            _ => None,
        })
        .collect();
    if scored.is_empty() || candidates.is_empty() {
        return Err(ShadError::Contract(
            "calibration needs candidates and boilerplate tokens with Format/TemplateConnecting truth".into(),
        ));
    }
    let mut rows: Vec<ThresholdRow> = candidates
        .iter()
        .map(|&threshold| {
            let correct = scored
                .iter()
                .filter(|(ls, t)| (f64::from(*ls) <= threshold) == (*t == RoleLabel::Format))
                .count();
            ThresholdRow {
                threshold,
                accuracy: correct as f64 / scored.len() as f64,
                n: scored.len(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    let best = rows
        .iter()
        .fold(None::<&ThresholdRow>, |best, r| match best {
            Some(b) if b.accuracy >= r.accuracy => Some(b),
            _ => Some(r),
        })
        .expect("non-empty")
        .threshold;
    Ok((rows, best))
}
