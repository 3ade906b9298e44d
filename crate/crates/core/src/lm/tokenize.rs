//! Whitespace and punctuation splitting.
//!
//! A unit is either a maximal run of alphanumeric characters and `_`, or a
//! single other non-whitespace character. Whitespace belongs to no unit, so
//! every non-whitespace character of a text is covered by exactly one
//! token span and whitespace is covered by none.

use super::vocab::{Vocab, SEP};
use super::{LmError, Result};
use crate::corpus::{RoleLabel, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit<'a> {
    pub start: usize,
    pub end: usize,
    pub text: &'a str,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub fn split_units(text: &str) -> Vec<Unit<'_>> {
    let mut units = Vec::new();
    // (char index, byte index) of the current word start
    let mut word: Option<(usize, usize)> = None;
    let mut n_chars = 0;
    for (ci, (bi, c)) in text.char_indices().enumerate() {
        n_chars = ci + 1;
        if is_word_char(c) {
            word.get_or_insert((ci, bi));
            continue;
        }
        if let Some((cs, bs)) = word.take() {
            units.push(Unit {
                start: cs,
                end: ci,
                text: &text[bs..bi],
            });
        }
        if !c.is_whitespace() {
            units.push(Unit {
                start: ci,
                end: ci + 1,
                text: &text[bi..bi + c.len_utf8()],
            });
        }
    }
    if let Some((cs, bs)) = word {
        units.push(Unit {
            start: cs,
            end: n_chars,
            text: &text[bs..],
        });
    }
    units
}

/// Token ids of `input SEP output` with their source character spans.
///
/// Input tokens carry spans into the input text, output tokens spans into
/// the output text; the separator gets the empty span at the end of the
/// input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenization {
    pub ids: Vec<u32>,
    pub char_spans: Vec<(usize, usize)>,
    /// Index of the first output token.
    pub boundary: usize,
}

impl Tokenization {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_output(&self) -> usize {
        self.ids.len() - self.boundary
    }

    pub fn output_ids(&self) -> &[u32] {
        &self.ids[self.boundary..]
    }

    pub fn output_spans(&self) -> &[(usize, usize)] {
        &self.char_spans[self.boundary..]
    }
}

pub fn tokenize(sample: &Sample, vocab: &Vocab, max_len: usize) -> Result<Tokenization> {
    let input = split_units(&sample.input);
    let output = split_units(&sample.output);
    let len = input.len() + 1 + output.len();
    if len > max_len {
        return Err(LmError::TooLong {
            id: sample.id.clone(),
            len,
            max: max_len,
        });
    }
    let mut ids = Vec::with_capacity(len);
    let mut char_spans = Vec::with_capacity(len);
    for u in &input {
        ids.push(vocab.id(u.text));
        char_spans.push((u.start, u.end));
    }
    let input_chars = sample.input.chars().count();
    ids.push(SEP);
    char_spans.push((input_chars, input_chars));
    let boundary = ids.len();
    for u in &output {
        ids.push(vocab.id(u.text));
        char_spans.push((u.start, u.end));
    }
    Ok(Tokenization {
        ids,
        char_spans,
        boundary,
    })
}

/// Ground-truth role of each output token (by its first character).
pub fn output_roles(sample: &Sample, tok: &Tokenization) -> Option<Vec<RoleLabel>> {
    sample.role_spans.as_ref()?;
    tok.output_spans()
        .iter()
        .map(|&(start, _)| sample.role_at(start))
        .collect()
}

/// Text of each output token.
pub fn output_texts(sample: &Sample, tok: &Tokenization) -> Vec<String> {
    let chars: Vec<char> = sample.output.chars().collect();
    tok.output_spans()
        .iter()
        .map(|&(s, e)| chars[s..e].iter().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Provenance};
    use crate::lm::vocab::{build_vocab, UNK};

    fn sample(input: &str, output: &str) -> Sample {
        Sample {
            id: "t".into(),
            input: input.into(),
            output: output.into(),
            role_spans: None,
        }
    }

    #[test]
    fn splitter_contract() {
        let units = split_units("Action: foo");
        let got: Vec<_> = units.iter().map(|u| (u.text, u.start, u.end)).collect();
        assert_eq!(got, [("Action", 0, 6), (":", 6, 7), ("foo", 8, 11)]);
    }

    #[test]
    fn punctuation_and_underscores() {
        let got: Vec<_> = split_units("{\"q\": smart_phones_v2}")
            .into_iter()
            .map(|u| u.text)
            .collect();
        assert_eq!(got, ["{", "\"", "q", "\"", ":", "smart_phones_v2", "}"]);
    }

    #[test]
    fn non_ascii_offsets_count_chars() {
        let units = split_units("é ab");
        assert_eq!((units[1].start, units[1].end), (2, 4));
    }

    #[test]
    fn boundary_and_unknowns() {
        let s = sample("find x", "Action: foo");
        let corpus = Corpus::new(
            vec![sample("find x", "Action:")],
            Provenance::Ingested { path: "m".into() },
        )
        .unwrap();
        let vocab = build_vocab(&corpus, 50).unwrap();
        let tok = tokenize(&s, &vocab, 64).unwrap();
        assert_eq!(tok.boundary, 2 + 1);
        assert_eq!(tok.ids[2], SEP);
        assert_eq!(tok.output_ids()[2], UNK);
        assert_eq!(tok.output_spans()[2], (8, 11));
    }

    #[test]
    fn too_long_is_an_error_naming_the_sample() {
        let s = sample("a b c", "d e f");
        let corpus =
            Corpus::new(vec![s.clone()], Provenance::Ingested { path: "m".into() }).unwrap();
        let vocab = build_vocab(&corpus, 50).unwrap();
        let err = tokenize(&s, &vocab, 6).unwrap_err();
        assert!(err.to_string().contains("`t`"), "{err}");
        assert!(tokenize(&s, &vocab, 7).is_ok());
    }
}
