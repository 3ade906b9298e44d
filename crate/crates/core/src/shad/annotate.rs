use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::de::Error as _;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{check_pair, loss_diff, ClassifyOptions, Result, ShadError, TokenRecord};
use crate::corpus::{CoarseRole, Corpus, RoleLabel};
use crate::fmt::sig9;
use crate::lm::{ModelParams, TrainConfig, Vocab};

/// Everything needed to reproduce a discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub shuffle_seed: u64,
    pub ratio: f64,
    pub tune: TrainConfig,
    pub theta_o_sha256: String,
    pub theta_s_sha256: String,
    pub margin: f64,
    pub format_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleAnnotation {
    pub id: String,
    pub tokens: Vec<TokenRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationError {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedCorpus {
    pub fingerprint: Fingerprint,
    /// In corpus order; samples that failed are absent here and listed in
    /// `errors`.
    pub samples: Vec<SampleAnnotation>,
    pub errors: Vec<AnnotationError>,
}

impl AnnotatedCorpus {
    pub fn records(&self) -> impl Iterator<Item = &TokenRecord> {
        self.samples.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn get(&self, id: &str) -> Option<&SampleAnnotation> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Predicted coarse labels per sample id.
    pub fn labels(&self) -> impl Iterator<Item = (&str, Vec<CoarseRole>)> {
        self.samples.iter().map(|s| {
            (
                s.id.as_str(),
                s.tokens.iter().map(|t| t.predicted).collect(),
            )
        })
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in &self.samples {
            let line = Line {
                id: s.id.clone(),
                tokens: s.tokens.iter().map(TokenJson::from).collect(),
                fingerprint: self.fingerprint.clone(),
            };
            serde_json::to_writer(&mut out, &line).expect("serializable");
            out.push(b'\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut fingerprint = None;
        let mut samples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let err = |message: String| ShadError::Parse {
                line: i + 1,
                message,
            };
            let line: Line = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
            match &fingerprint {
                None => fingerprint = Some(line.fingerprint.clone()),
                Some(f) if *f != line.fingerprint => {
                    return Err(err("fingerprint differs from the first line".into()));
                }
                Some(_) => {}
            }
            let tokens = line
                .tokens
                .into_iter()
                .map(|t| t.into_record(&line.id))
                .collect::<std::result::Result<Vec<_>, String>>()
                .map_err(err)?;
            samples.push(SampleAnnotation {
                id: line.id,
                tokens,
            });
        }
        let fingerprint = fingerprint.ok_or(ShadError::Parse {
            line: 0,
            message: "no annotated samples".into(),
        })?;
        Ok(Self {
            fingerprint,
            samples,
            errors: Vec::new(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    id: String,
    tokens: Vec<TokenJson>,
    fingerprint: Fingerprint,
}

fn ser_f32<S: Serializer>(x: &f32, s: S) -> std::result::Result<S::Ok, S::Error> {
    RawValue::from_string(sig9(f64::from(*x)))
        .map_err(S::Error::custom)?
        .serialize(s)
}

/// Parses the decimal straight to `f32`; going through `f64` could round
/// twice.
fn de_f32<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f32, D::Error> {
    let raw: Box<RawValue> = Deserialize::deserialize(d)?;
    raw.get().parse::<f32>().map_err(D::Error::custom)
}

#[derive(Serialize, Deserialize)]
struct TokenJson {
    k: usize,
    text: String,
    #[serde(serialize_with = "ser_f32", deserialize_with = "de_f32")]
    l_o: f32,
    #[serde(serialize_with = "ser_f32", deserialize_with = "de_f32")]
    l_s: f32,
    #[serde(serialize_with = "ser_f32", deserialize_with = "de_f32")]
    ld: f32,
    pred: CoarseRole,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pred_fine: Option<RoleLabel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    truth: Option<RoleLabel>,
}

impl From<&TokenRecord> for TokenJson {
    fn from(r: &TokenRecord) -> Self {
        Self {
            k: r.k,
            text: r.text.clone(),
            l_o: r.l_o,
            l_s: r.l_s,
            ld: r.ld,
            pred: r.predicted,
            pred_fine: r.predicted_fine,
            truth: r.truth,
        }
    }
}

impl TokenJson {
    fn into_record(self, id: &str) -> std::result::Result<TokenRecord, String> {
        if self.ld != self.l_s - self.l_o {
            return Err(format!("token {} of `{id}`: ld is not l_s - l_o", self.k));
        }
        Ok(TokenRecord {
            sample_id: id.to_string(),
            k: self.k,
            text: self.text,
            l_o: self.l_o,
            l_s: self.l_s,
            ld: self.ld,
            predicted: self.pred,
            predicted_fine: self.pred_fine,
            truth: self.truth,
        })
    }
}

/// Scores every sample of `corpus`, in parallel, merging in corpus order.
/// A sample that cannot be scored is reported in `errors` and skipped.
pub fn annotate_corpus(
    theta_o: &ModelParams,
    theta_s: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocab,
    opts: &ClassifyOptions,
    fingerprint: Fingerprint,
) -> Result<AnnotatedCorpus> {
    check_pair(theta_o, theta_s, vocab)?;
    let results: Vec<_> = corpus
        .samples
        .par_iter()
        .map(|s| (s.id.clone(), loss_diff(theta_o, theta_s, s, vocab, opts)))
        .collect();
    let mut samples = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (id, r) in results {
        match r {
            Ok(tokens) => samples.push(SampleAnnotation { id, tokens }),
            Err(e) => errors.push(AnnotationError {
                id,
                message: e.to_string(),
            }),
        }
    }
    if !errors.is_empty() {
        log::warn!(
            "{} of {} samples could not be annotated",
            errors.len(),
            corpus.len()
        );
    }
    Ok(AnnotatedCorpus {
        fingerprint,
        samples,
        errors,
    })
}

pub fn save_annotations(annotated: &AnnotatedCorpus, path: &Path) -> Result<()> {
    fs::write(path, annotated.to_jsonl())?;
    Ok(())
}

pub fn load_annotations(path: &Path) -> Result<AnnotatedCorpus> {
    AnnotatedCorpus::from_jsonl(&fs::read_to_string(path)?)
}
