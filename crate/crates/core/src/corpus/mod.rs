//! Agent-trajectory samples with token-role ground truth.
//!
//! Character offsets throughout this module count Unicode scalar values,
//! not bytes, so span files stay meaningful to tools in other languages.

mod generate;
mod jsonl;
mod shuffle;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use generate::{generate_corpus, GeneratorConfig, Segment, Template, GENERATOR_VERSION};
pub use jsonl::{load_jsonl, load_shuffled_jsonl, save_jsonl, save_shuffled_jsonl, to_jsonl_bytes};
pub use shuffle::{shuffle_outputs, ShuffledCorpus};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("generator config: {0}")]
    Config(String),
    #[error("generator config: slot `{0}` has an empty vocabulary")]
    EmptySlot(String),
    #[error("generator config: slot `{0}` has no vocabulary")]
    UnknownSlot(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("sample `{id}`: {message}")]
    InvalidSpans { id: String, message: String },
    #[error("cannot shuffle: {0}")]
    Shuffle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Fine-grained role of a stretch of output text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoleLabel {
    Reasoning,
    Format,
    TemplateConnecting,
    Copied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoarseRole {
    Boilerplate,
    Reasoning,
}

impl RoleLabel {
    pub const ALL: [RoleLabel; 4] = [
        RoleLabel::Reasoning,
        RoleLabel::Format,
        RoleLabel::TemplateConnecting,
        RoleLabel::Copied,
    ];

    pub fn coarse(self) -> CoarseRole {
        match self {
            RoleLabel::Reasoning => CoarseRole::Reasoning,
            RoleLabel::Format | RoleLabel::TemplateConnecting | RoleLabel::Copied => {
                CoarseRole::Boilerplate
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoleLabel::Reasoning => "Reasoning",
            RoleLabel::Format => "Format",
            RoleLabel::TemplateConnecting => "TemplateConnecting",
            RoleLabel::Copied => "Copied",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

impl fmt::Display for RoleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl CoarseRole {
    pub fn as_str(self) -> &'static str {
        match self {
            CoarseRole::Boilerplate => "Boilerplate",
            CoarseRole::Reasoning => "Reasoning",
        }
    }
}

impl fmt::Display for CoarseRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open character range `[start, end)` of the output with its role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleSpan {
    pub start: usize,
    pub end: usize,
    pub label: RoleLabel,
}

impl RoleSpan {
    pub fn new(start: usize, end: usize, label: RoleLabel) -> Self {
        Self { start, end, label }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub input: String,
    pub output: String,
    pub role_spans: Option<Vec<RoleSpan>>,
}

impl Sample {
    /// Checks that spans are sorted, disjoint and tile the whole output.
    pub fn validate_spans(&self) -> Result<()> {
        let Some(spans) = &self.role_spans else {
            return Ok(());
        };
        let len = self.output.chars().count();
        let fail = |message: String| CorpusError::InvalidSpans {
            id: self.id.clone(),
            message,
        };
        let mut cursor = 0usize;
        for s in spans {
            if s.start >= s.end {
                return Err(fail(format!(
                    "empty or reversed span [{}, {})",
                    s.start, s.end
                )));
            }
            if s.start != cursor {
                return Err(fail(format!(
                    "spans do not cover the output: expected a span starting at {cursor}, found {}",
                    s.start
                )));
            }
            cursor = s.end;
        }
        if cursor != len {
            return Err(fail(format!(
                "spans do not cover the output: covered up to {cursor} of {len} characters"
            )));
        }
        Ok(())
    }

    /// Role of the character at `pos`, if labels are present.
    pub fn role_at(&self, pos: usize) -> Option<RoleLabel> {
        let spans = self.role_spans.as_ref()?;
        let i = spans.partition_point(|s| s.end <= pos);
        spans.get(i).filter(|s| s.start <= pos).map(|s| s.label)
    }

    /// Text covered by a span.
    pub fn span_text(&self, span: &RoleSpan) -> String {
        self.output
            .chars()
            .skip(span.start)
            .take(span.end - span.start)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic { seed: u64, generator_version: u32 },
    Ingested { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
}

impl Corpus {
    /// Builds a corpus after checking id uniqueness and span coverage.
    pub fn new(samples: Vec<Sample>, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
            s.validate_spans()?;
        }
        Ok(Self {
            samples,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn has_labels(&self) -> bool {
        self.samples.iter().all(|s| s.role_spans.is_some())
    }

    /// First `n` samples as a new corpus (provenance kept).
    pub fn head(&self, n: usize) -> Corpus {
        Corpus {
            samples: self.samples.iter().take(n).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(output: &str, spans: Vec<RoleSpan>) -> Sample {
        Sample {
            id: "s".into(),
            input: "in".into(),
            output: output.into(),
            role_spans: Some(spans),
        }
    }

    #[test]
    fn coarse_mapping() {
        assert_eq!(RoleLabel::Reasoning.coarse(), CoarseRole::Reasoning);
        for l in [
            RoleLabel::Format,
            RoleLabel::TemplateConnecting,
            RoleLabel::Copied,
        ] {
            assert_eq!(l.coarse(), CoarseRole::Boilerplate);
        }
    }

    #[test]
    fn span_gap_is_rejected() {
        let s = sample(
            "abcdef",
            vec![
                RoleSpan::new(0, 2, RoleLabel::Format),
                RoleSpan::new(3, 6, RoleLabel::Reasoning),
            ],
        );
        let err = s.validate_spans().unwrap_err().to_string();
        assert!(err.contains("`s`"), "{err}");
    }

    #[test]
    fn short_cover_is_rejected() {
        let s = sample("abcdef", vec![RoleSpan::new(0, 5, RoleLabel::Format)]);
        assert!(s.validate_spans().is_err());
    }

    #[test]
    fn role_lookup() {
        let s = sample(
            "ab cd",
            vec![
                RoleSpan::new(0, 3, RoleLabel::Format),
                RoleSpan::new(3, 5, RoleLabel::Reasoning),
            ],
        );
        assert_eq!(s.role_at(0), Some(RoleLabel::Format));
        assert_eq!(s.role_at(2), Some(RoleLabel::Format));
        assert_eq!(s.role_at(3), Some(RoleLabel::Reasoning));
        assert_eq!(s.role_at(5), None);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let a = Sample {
            id: "x".into(),
            input: String::new(),
            output: String::new(),
            role_spans: None,
        };
        let err = Corpus::new(
            vec![a.clone(), a],
            Provenance::Ingested { path: "p".into() },
        );
        assert!(matches!(err, Err(CorpusError::DuplicateId(id)) if id == "x"));
    }
}
