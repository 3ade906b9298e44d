use std::collections::HashMap;

use super::regex::{regex_classify, Ruleset};
use super::{Result, RftError, WeightScheme};
use crate::corpus::{CoarseRole, Corpus, Sample};
use crate::lm::{
    output_roles, train_examples, ModelParams, TrainConfig, TrainExample, TrainHistory, Vocab,
};
use crate::shad::AnnotatedCorpus;

/// Where per-token group labels come from.
#[derive(Debug, Clone, Copy)]
pub enum LabelSource<'a> {
    /// Generator role spans carried by the corpus.
    GroundTruth,
    /// Discriminator predictions, matched by sample id.
    Shad(&'a AnnotatedCorpus),
    /// Regular-expression labels computed on the fly.
    Regex(&'a Ruleset),
}

impl LabelSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            LabelSource::GroundTruth => "truth",
            LabelSource::Shad(_) => "shad",
            LabelSource::Regex(_) => "regex",
        }
    }
}

fn regex_labels(sample: &Sample, ex: &TrainExample, ruleset: &Ruleset) -> Vec<CoarseRole> {
    let labelled = Sample {
        role_spans: Some(regex_classify(&sample.output, ruleset)),
        ..sample.clone()
    };
    if sample.output.is_empty() {
        return Vec::new();
    }
    output_roles(&labelled, &ex.tokens)
        .expect("regex spans cover the output")
        .into_iter()
        .map(|r| r.coarse())
        .collect()
}

/// Tokenizes `corpus` and attaches one coarse label per output token.
pub fn resolve_labels(
    corpus: &Corpus,
    vocab: &Vocab,
    max_len: usize,
    source: LabelSource<'_>,
) -> Result<Vec<TrainExample>> {
    let annotated: Option<HashMap<&str, Vec<CoarseRole>>> = match source {
        LabelSource::Shad(a) => Some(a.labels().collect()),
        _ => None,
    };
    corpus
        .samples
        .iter()
        .map(|s| {
            let ex = TrainExample::from_sample(s, vocab, max_len)?;
            let labels = match source {
                LabelSource::GroundTruth => ex.labels.clone().ok_or_else(|| {
                    RftError::Labels(format!("sample `{}` has no ground-truth role spans", s.id))
                })?,
                LabelSource::Regex(rules) => regex_labels(s, &ex, rules),
                LabelSource::Shad(_) => annotated
                    .as_ref()
                    .and_then(|m| m.get(s.id.as_str()))
                    .cloned()
                    .ok_or_else(|| {
                        RftError::Labels(format!("sample `{}` is not in the annotations", s.id))
                    })?,
            };
            Ok(ex.with_labels(labels)?)
        })
        .collect()
}

/// Trains `params` on `corpus` under `scheme` with labels from `source`.
pub fn train_weighted(
    params: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocab,
    config: &TrainConfig,
    scheme: &WeightScheme,
    source: LabelSource<'_>,
) -> Result<(ModelParams, TrainHistory)> {
    let examples = resolve_labels(corpus, vocab, config.max_sequence_length, source)?;
    Ok(train_examples(params, &examples, config, scheme)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GeneratorConfig, Provenance, RoleLabel};
    use crate::lm::{build_vocab, tokenize};

    fn setup() -> (Corpus, Vocab) {
        let c = generate_corpus(&GeneratorConfig::with_defaults(6, 2)).unwrap();
        let v = build_vocab(&c, 512).unwrap();
        (c, v)
    }

    #[test]
    fn truth_labels_follow_spans() {
        let (c, v) = setup();
        let ex = resolve_labels(&c, &v, 256, LabelSource::GroundTruth).unwrap();
        let tok = tokenize(&c.samples[0], &v, 256).unwrap();
        let want: Vec<CoarseRole> = output_roles(&c.samples[0], &tok)
            .unwrap()
            .iter()
            .map(|r| r.coarse())
            .collect();
        assert_eq!(ex[0].labels.as_deref(), Some(&want[..]));
    }

    #[test]
    fn unlabelled_corpus_has_no_truth() {
        let (c, v) = setup();
        let bare = Corpus::new(
            c.samples
                .iter()
                .map(|s| Sample {
                    role_spans: None,
                    ..s.clone()
                })
                .collect(),
            Provenance::Synthetic {
                seed: 0,
                generator_version: 1,
            },
        )
        .unwrap();
        let err = resolve_labels(&bare, &v, 256, LabelSource::GroundTruth).unwrap_err();
        assert!(err.to_string().contains("syn-0000"), "{err}");
    }

    #[test]
    fn regex_marks_markers_and_misses_connectors() {
        let (c, v) = setup();
        let ex = resolve_labels(&c, &v, 256, LabelSource::Regex(&Ruleset::react_json())).unwrap();
        let s = &c.samples[0];
        let tok = tokenize(s, &v, 256).unwrap();
        let truth = output_roles(s, &tok).unwrap();
        let labels = ex[0].labels.as_ref().unwrap();
        assert_eq!(labels[0], CoarseRole::Boilerplate, "Thought");
        let connectors: Vec<_> = truth
            .iter()
            .zip(labels)
            .filter(|(t, _)| **t == RoleLabel::TemplateConnecting)
            .map(|(_, l)| *l)
            .collect();
        assert!(connectors.contains(&CoarseRole::Reasoning));
    }
}
