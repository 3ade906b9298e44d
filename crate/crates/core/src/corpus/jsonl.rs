//! JSONL corpus files: one sample object per line, UTF-8, LF endings.
//!
//! ```text
//! {"id": "syn-0000", "input": "...", "output": "...", "role_spans": [[0, 9, "Format"], ...]}
//! ```
//!
//! `role_spans` is optional. A shuffled corpus is the same format preceded
//! by a header line `{"base_ids": [...], "permutation": [...]}`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use super::{Corpus, CorpusError, Provenance, Result, RoleLabel, RoleSpan, Sample, ShuffledCorpus};

#[derive(Serialize)]
struct SampleLine<'a> {
    id: &'a str,
    input: &'a str,
    output: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    role_spans: Option<Vec<(usize, usize, &'static str)>>,
}

#[derive(Serialize)]
struct ShuffleHeader<'a> {
    base_ids: &'a [String],
    permutation: &'a [usize],
}

fn sample_line(s: &Sample) -> String {
    let line = SampleLine {
        id: &s.id,
        input: &s.input,
        output: &s.output,
        role_spans: s.role_spans.as_ref().map(|v| {
            v.iter()
                .map(|r| (r.start, r.end, r.label.as_str()))
                .collect()
        }),
    };
    serde_json::to_string(&line).expect("sample serializes")
}

pub fn to_jsonl_bytes(samples: &[Sample]) -> Vec<u8> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&sample_line(s));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn save_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    fs::write(path, to_jsonl_bytes(&corpus.samples))?;
    Ok(())
}

pub fn save_shuffled_jsonl(shuffled: &ShuffledCorpus, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec(&ShuffleHeader {
        base_ids: &shuffled.base_ids,
        permutation: &shuffled.permutation,
    })
    .expect("header serializes");
    bytes.push(b'\n');
    bytes.extend(to_jsonl_bytes(&shuffled.samples));
    fs::write(path, bytes)?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        line,
        message: message.into(),
    }
}

fn string_field(obj: &Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        None => Err(parse_err(line, format!("missing field {key}"))),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(parse_err(line, format!("field {key} must be a string"))),
    }
}

fn parse_spans(value: &Value, line: usize) -> Result<Vec<RoleSpan>> {
    let bad = || parse_err(line, "role_spans must be a list of [start, end, label]");
    let items = value.as_array().ok_or_else(bad)?;
    items
        .iter()
        .map(|item| {
            let triple = item.as_array().filter(|a| a.len() == 3).ok_or_else(bad)?;
            let start = triple[0].as_u64().ok_or_else(bad)? as usize;
            let end = triple[1].as_u64().ok_or_else(bad)? as usize;
            let label = triple[2]
                .as_str()
                .and_then(RoleLabel::parse)
                .ok_or_else(|| parse_err(line, format!("unknown role label {}", triple[2])))?;
            Ok(RoleSpan::new(start, end, label))
        })
        .collect()
}

fn parse_sample(text: &str, line: usize) -> Result<Sample> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| parse_err(line, format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err(line, "expected a JSON object"))?;
    let id = string_field(obj, "id", line)?;
    let input = string_field(obj, "input", line)?;
    let output = string_field(obj, "output", line)?;
    let role_spans = match obj.get("role_spans") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_spans(v, line)?),
    };
    Ok(Sample {
        id,
        input,
        output,
        role_spans,
    })
}

fn parse_samples<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, text) in lines {
        if text.trim().is_empty() {
            continue;
        }
        let sample = parse_sample(text, line_no)?;
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId(sample.id));
        }
        sample.validate_spans()?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_jsonl(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    let samples = parse_samples(text.lines().enumerate().map(|(i, l)| (i + 1, l)))?;
    Corpus::new(
        samples,
        Provenance::Ingested {
            path: path.to_path_buf(),
        },
    )
}

pub fn load_shuffled_jsonl(path: &Path) -> Result<ShuffledCorpus> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header line"))?;
    let header: Value =
        serde_json::from_str(header).map_err(|e| parse_err(1, format!("malformed JSON: {e}")))?;
    let base_ids: Vec<String> = header
        .get("base_ids")
        .cloned()
        .ok_or_else(|| parse_err(1, "missing field base_ids"))
        .and_then(|v| serde_json::from_value(v).map_err(|e| parse_err(1, e.to_string())))?;
    let permutation: Vec<usize> = header
        .get("permutation")
        .cloned()
        .ok_or_else(|| parse_err(1, "missing field permutation"))
        .and_then(|v| serde_json::from_value(v).map_err(|e| parse_err(1, e.to_string())))?;
    let samples = parse_samples(lines)?;
    ShuffledCorpus::from_parts(base_ids, permutation, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_in_line_order() {
        let f = write(
            "{\"id\":\"b\",\"input\":\"x\",\"output\":\"y\"}\n\
             {\"id\":\"a\",\"input\":\"x\",\"output\":\"yz\",\"role_spans\":[[0,2,\"Format\"]]}\n\
             {\"id\":\"c\",\"input\":\"x\",\"output\":\"\"}\n",
        );
        let c = load_jsonl(f.path()).unwrap();
        let ids: Vec<_> = c.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert!(c.samples[0].role_spans.is_none());
        assert_eq!(c.samples[1].role_spans.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn missing_field_reports_line() {
        let f = write(
            "{\"id\":\"a\",\"input\":\"x\",\"output\":\"y\"}\n{\"id\":\"b\",\"input\":\"x\"}\n",
        );
        let err = load_jsonl(f.path()).unwrap_err();
        assert_eq!(err.to_string(), "line 2: missing field output");
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write("{\"id\":\"a\",\"input\":\"x\",\"output\":\"y\"}\n{nope\n");
        let err = load_jsonl(f.path()).unwrap_err().to_string();
        assert!(err.starts_with("line 2: malformed JSON"), "{err}");
    }

    #[test]
    fn duplicate_id_is_named() {
        let f = write(
            "{\"id\":\"a\",\"input\":\"x\",\"output\":\"y\"}\n{\"id\":\"a\",\"input\":\"z\",\"output\":\"w\"}\n",
        );
        let err = load_jsonl(f.path()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn uncovered_spans_name_the_sample() {
        let f = write(
            "{\"id\":\"q7\",\"input\":\"x\",\"output\":\"abc\",\"role_spans\":[[0,2,\"Format\"]]}\n",
        );
        let err = load_jsonl(f.path()).unwrap_err().to_string();
        assert!(err.contains("q7"), "{err}");
    }
}
