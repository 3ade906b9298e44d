use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::tokenize::split_units;
use super::{LmError, Result};
use crate::corpus::Corpus;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SEP: u32 = 4;

pub const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Vocabulary from an ordered list; the first five entries must be the
    /// specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(LmError::Vocab(
                "vocabulary must start with the five specials".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(LmError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map_or(SPECIALS[UNK as usize], |s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, in index order.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(String::from).collect())
    }
}

/// Most frequent units of the corpus (inputs and outputs), ties broken
/// lexicographically, capped so that specials plus tokens fit `max_size`.
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocab> {
    build_vocab_from(&[corpus], max_size)
}

/// Like [`build_vocab`], counting over several corpora at once.
pub fn build_vocab_from(corpora: &[&Corpus], max_size: usize) -> Result<Vocab> {
    if max_size < SPECIALS.len() + 1 {
        return Err(LmError::Vocab(format!(
            "max_size {max_size} cannot hold the {} specials plus one token",
            SPECIALS.len()
        )));
    }
    if corpora.iter().all(|c| c.is_empty()) {
        return Err(LmError::Vocab(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in corpora.iter().flat_map(|c| &c.samples) {
        for text in [&s.input, &s.output] {
            for u in split_units(text) {
                *counts.entry(u.text).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !SPECIALS.contains(t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - SPECIALS.len());

    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Provenance, Sample};

    fn corpus(outputs: &[&str]) -> Corpus {
        Corpus::new(
            outputs
                .iter()
                .enumerate()
                .map(|(i, o)| Sample {
                    id: i.to_string(),
                    input: String::new(),
                    output: o.to_string(),
                    role_spans: None,
                })
                .collect(),
            Provenance::Ingested { path: "mem".into() },
        )
        .unwrap()
    }

    #[test]
    fn frequency_order() {
        let v = build_vocab(&corpus(&["a a b"]), 100).unwrap();
        assert!(v.id("a") < v.id("b"));
        assert_eq!(v.id("a"), 5);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocab(&corpus(&["z y x"]), 100).unwrap();
        assert_eq!(&v.tokens()[5..], ["x", "y", "z"]);
    }

    #[test]
    fn too_small_is_an_error() {
        assert!(build_vocab(&corpus(&["a"]), 5).is_err());
        assert_eq!(build_vocab(&corpus(&["a b"]), 6).unwrap().len(), 6);
    }

    #[test]
    fn deterministic() {
        let c = corpus(&["b c a", "c d e f", "a a"]);
        assert_eq!(build_vocab(&c, 8).unwrap(), build_vocab(&c, 8).unwrap());
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = build_vocab(&corpus(&["a"]), 10).unwrap();
        assert_eq!(v.id("never"), UNK);
    }

    #[test]
    fn text_round_trip() {
        let v = build_vocab(&corpus(&["x: y, z"]), 10).unwrap();
        let back = Vocab::from_tokens(v.to_text().lines().map(String::from).collect()).unwrap();
        assert_eq!(v, back);
    }
}
