//! Regular-expression baseline labeler.
//!
//! Ruleset files hold one rule per line: a label (`Format` or `Reasoning`),
//! whitespace, then the pattern running to the end of the line. Blank lines
//! and lines starting with `#` are skipped. Earlier rules win where matches
//! overlap; text no rule claims is Reasoning, except whitespace, which
//! belongs to no token and joins the span before it.

use regex::Regex;

use super::{Result, RftError};
use crate::corpus::{RoleLabel, RoleSpan};

/// Structural markers of the Thought/Action/Action Input format and JSON
/// punctuation and keys.
pub const REACT_JSON_RULESET: &str = r#"# react-json
Format	\b(?:Thought|Action Input|Action|Observation|Final Answer)\s*:
Format	"[^"\n]*"\s*:
Format	[{}\[\]",:]
"#;

#[derive(Debug, Clone)]
pub struct RegexRule {
    pub label: RoleLabel,
    pub pattern: Regex,
}

#[derive(Debug, Clone)]
pub struct Ruleset {
    pub name: String,
    pub rules: Vec<RegexRule>,
}

impl Ruleset {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_start();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| RftError::Ruleset {
                line: i + 1,
                message,
            };
            let (label, pattern) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| err("expected `<label> <pattern>`".into()))?;
            let label = match label {
                "Format" => RoleLabel::Format,
                "Reasoning" => RoleLabel::Reasoning,
                other => {
                    return Err(err(format!(
                        "label must be Format or Reasoning, got `{other}`"
                    )))
                }
            };
            let pattern = pattern.trim_start();
            let pattern = Regex::new(pattern).map_err(|e| err(e.to_string()))?;
            rules.push(RegexRule { label, pattern });
        }
        if rules.is_empty() {
            return Err(RftError::Ruleset {
                line: 0,
                message: "ruleset has no rules".into(),
            });
        }
        Ok(Self {
            name: name.into(),
            rules,
        })
    }

    pub fn react_json() -> Self {
        Self::parse("react-json", REACT_JSON_RULESET).expect("built-in ruleset parses")
    }
}

/// Labels every character of `output` Format or Reasoning; adjacent
/// characters with the same label are merged into one span.
pub fn regex_classify(output: &str, ruleset: &Ruleset) -> Vec<RoleSpan> {
    let n_chars = output.chars().count();
    if n_chars == 0 {
        return Vec::new();
    }
    // byte offset -> char index
    let mut char_at = vec![0usize; output.len() + 1];
    for (ci, (bi, c)) in output.char_indices().enumerate() {
        char_at[bi..bi + c.len_utf8()].fill(ci);
    }
    char_at[output.len()] = n_chars;

    let mut labels: Vec<Option<RoleLabel>> = vec![None; n_chars];
    for rule in &ruleset.rules {
        for m in rule.pattern.find_iter(output) {
            for slot in &mut labels[char_at[m.start()]..char_at[m.end()]] {
                slot.get_or_insert(rule.label);
            }
        }
    }

    let chars: Vec<char> = output.chars().collect();
    let mut spans: Vec<RoleSpan> = Vec::new();
    for (i, l) in labels.into_iter().enumerate() {
        let label = match (l, spans.last()) {
            (Some(l), _) => l,
            (None, Some(prev)) if chars[i].is_whitespace() => prev.label,
            (None, _) => RoleLabel::Reasoning,
        };
        match spans.last_mut() {
            Some(last) if last.label == label => last.end = i + 1,
            _ => spans.push(RoleSpan::new(i, i + 1, label)),
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labelled(output: &str) -> Vec<(String, RoleLabel)> {
        let chars: Vec<char> = output.chars().collect();
        regex_classify(output, &Ruleset::react_json())
            .into_iter()
            .map(|s| (chars[s.start..s.end].iter().collect(), s.label))
            .collect()
    }

    #[test]
    fn json_structure_is_format() {
        let got = labelled(r#"{"city": "NY"}"#);
        assert_eq!(
            got,
            vec![
                (r#"{"city": ""#.to_string(), RoleLabel::Format),
                ("NY".to_string(), RoleLabel::Reasoning),
                (r#""}"#.to_string(), RoleLabel::Format),
            ]
        );
    }

    #[test]
    fn connecting_phrases_are_missed() {
        let got = labelled("Based on the user's request");
        assert!(got.iter().all(|(_, l)| *l == RoleLabel::Reasoning));
    }

    #[test]
    fn react_markers() {
        let got = labelled("Thought: go\nAction: f\nAction Input: {}");
        let format: Vec<&str> = got
            .iter()
            .filter(|(_, l)| *l == RoleLabel::Format)
            .map(|(t, _)| t.trim())
            .collect();
        assert_eq!(format, ["Thought:", "Action:", "Action Input: {}"]);
    }

    #[test]
    fn empty_output() {
        assert!(regex_classify("", &Ruleset::react_json()).is_empty());
    }

    #[test]
    fn ruleset_errors_carry_line_numbers() {
        let err = Ruleset::parse("x", "# c\nFormat [\n").unwrap_err();
        assert!(err.to_string().starts_with("ruleset line 2"), "{err}");
        assert!(Ruleset::parse("x", "Copied a").is_err());
        assert!(Ruleset::parse("x", "# nothing").is_err());
    }

    #[test]
    fn first_rule_wins() {
        let rs = Ruleset::parse("x", "Reasoning ab\nFormat abc").unwrap();
        let spans = regex_classify("abc", &rs);
        assert_eq!(
            spans,
            vec![
                RoleSpan::new(0, 2, RoleLabel::Reasoning),
                RoleSpan::new(2, 3, RoleLabel::Format)
            ]
        );
    }

    proptest! {
        #[test]
        fn spans_partition_the_output(s in "[a-z{}\":, \\n]{0,40}|\\PC{0,20}") {
            let spans = regex_classify(&s, &Ruleset::react_json());
            let mut end = 0;
            for w in &spans {
                prop_assert_eq!(w.start, end);
                prop_assert!(w.end > w.start);
                end = w.end;
            }
            prop_assert_eq!(end, s.chars().count());
            for pair in spans.windows(2) {
                prop_assert_ne!(pair[0].label, pair[1].label);
            }
        }
    }
}
