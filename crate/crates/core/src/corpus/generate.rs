//! Synthetic ReAct-style tool-use trajectories with exact role spans.
//!
//! A response is rendered from a [`Template`]: a list of labelled text
//! segments whose `{slot}` references are filled per round. Every label in
//! the output comes straight from the segment that produced the text, so
//! the ground truth is exact by construction.
//!
//! Only slot values depend on the query; every other piece of the output
//! (segment order, slot arity, punctuation) is fixed by the template and
//! the preceding output, so shuffling inputs against outputs leaves all
//! non-reasoning text predictable.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Provenance, Result, RoleLabel, RoleSpan, Sample};
use crate::rng::Rng;

pub const GENERATOR_VERSION: u32 = 1;

/// One labelled piece of a response template. `text` may reference slots
/// as `{name}`; literal braces are written `{{` and `}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub role: RoleLabel,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "default_multi_step_ratio")]
    pub multi_step_ratio: f64,
    #[serde(default = "default_preamble")]
    pub preamble: String,
    /// Query clauses, one per round, rendered with that round's bindings.
    #[serde(default = "default_query_templates")]
    pub query_templates: Vec<String>,
    #[serde(default = "default_query_joiner")]
    pub query_joiner: String,
    /// Slot whose value is listed in the input's tool list.
    #[serde(default = "default_tool_slot")]
    pub tool_slot: String,
    /// Templates for the first Thought/Action round.
    #[serde(default = "default_first_round")]
    pub template_set: Vec<Template>,
    /// Templates for the second round of multi-step samples.
    #[serde(default = "default_follow_round")]
    pub follow_templates: Vec<Template>,
    /// Text placed between two rounds (labelled Format).
    #[serde(default = "default_round_separator")]
    pub round_separator: String,
    #[serde(default = "default_vocabularies")]
    pub slot_vocabularies: BTreeMap<String, Vec<String>>,
    /// `derived -> source`: the derived slot takes the vocabulary entry at
    /// the source value's index (modulo length), e.g. a function's
    /// parameter name.
    #[serde(default = "default_linked")]
    pub linked_slots: BTreeMap<String, String>,
    /// Sample ids are `{id_prefix}-{index:04}`.
    #[serde(default = "default_id_prefix")]
    pub id_prefix: String,
}

impl GeneratorConfig {
    /// Built-in templates and vocabularies with the given size and seed.
    pub fn with_defaults(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            multi_step_ratio: default_multi_step_ratio(),
            preamble: default_preamble(),
            query_templates: default_query_templates(),
            query_joiner: default_query_joiner(),
            tool_slot: default_tool_slot(),
            template_set: default_first_round(),
            follow_templates: default_follow_round(),
            round_separator: default_round_separator(),
            slot_vocabularies: default_vocabularies(),
            linked_slots: default_linked(),
            id_prefix: default_id_prefix(),
        }
    }

    /// Same domain and queries, but answers are one line of prose that
    /// restates the query's clauses in any order, with none of the
    /// Thought/Action/JSON structure. A model trained on it learns to copy
    /// query content without ever seeing the agent format, which makes it a
    /// stand-in for a pretrained base.
    pub fn pretraining(n_samples: usize, seed: u64) -> Self {
        Self {
            template_set: pretraining_templates(),
            follow_templates: pretraining_templates(),
            slot_vocabularies: pretraining_vocabularies(),
            round_separator: "\n".into(),
            linked_slots: BTreeMap::new(),
            id_prefix: "pre".into(),
            ..Self::with_defaults(n_samples, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(CorpusError::Config("n_samples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.multi_step_ratio) {
            return Err(CorpusError::Config(format!(
                "multi_step_ratio {} outside [0, 1]",
                self.multi_step_ratio
            )));
        }
        if self.template_set.is_empty() || self.query_templates.is_empty() {
            return Err(CorpusError::Config(
                "template_set and query_templates must be non-empty".into(),
            ));
        }
        if self.multi_step_ratio > 0.0 && self.follow_templates.is_empty() {
            return Err(CorpusError::Config(
                "multi-step samples requested but follow_templates is empty".into(),
            ));
        }
        for (derived, source) in &self.linked_slots {
            self.vocab(derived)?;
            self.vocab(source)?;
        }
        self.vocab(&self.tool_slot)?;

        // Slots every query clause mentions: these (and the tool) are the
        // only values that may appear in a Reasoning segment.
        let mut query_slots: Option<BTreeSet<String>> = None;
        for q in &self.query_templates {
            let slots = slot_names(q)?;
            for s in &slots {
                self.resolve(s)?;
            }
            query_slots = Some(match query_slots {
                None => slots,
                Some(acc) => acc.intersection(&slots).cloned().collect(),
            });
        }
        let mut visible = query_slots.unwrap_or_default();
        visible.insert(self.tool_slot.clone());

        for t in self.template_set.iter().chain(&self.follow_templates) {
            let mut kinds = BTreeSet::new();
            for seg in &t.segments {
                kinds.insert(seg.role);
                let slots = slot_names(&seg.text)?;
                for s in &slots {
                    self.resolve(s)?;
                }
                if seg.role == RoleLabel::Reasoning {
                    if slots.is_empty() {
                        return Err(CorpusError::Config(format!(
                            "template `{}`: Reasoning segment {:?} has no slot",
                            t.name, seg.text
                        )));
                    }
                    if let Some(hidden) = slots.iter().find(|s| !visible.contains(*s)) {
                        return Err(CorpusError::Config(format!(
                            "template `{}`: Reasoning slot `{hidden}` does not appear in every query template",
                            t.name
                        )));
                    }
                }
            }
            for needed in [
                RoleLabel::Reasoning,
                RoleLabel::Format,
                RoleLabel::TemplateConnecting,
            ] {
                if !kinds.contains(&needed) {
                    return Err(CorpusError::Config(format!(
                        "template `{}` has no {needed} segment",
                        t.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn vocab(&self, slot: &str) -> Result<&[String]> {
        match self.slot_vocabularies.get(slot) {
            None => Err(CorpusError::UnknownSlot(slot.to_string())),
            Some(v) if v.is_empty() => Err(CorpusError::EmptySlot(slot.to_string())),
            Some(v) => Ok(v),
        }
    }

    fn resolve(&self, slot: &str) -> Result<()> {
        self.vocab(slot).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Lit(String),
    Slot(String),
}

fn parse_pieces(text: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut lit = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                lit.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                lit.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) => name.push(ch),
                        None => {
                            return Err(CorpusError::Config(format!(
                                "unterminated slot reference in {text:?}"
                            )))
                        }
                    }
                }
                if !lit.is_empty() {
                    pieces.push(Piece::Lit(std::mem::take(&mut lit)));
                }
                pieces.push(Piece::Slot(name));
            }
            '}' => {
                return Err(CorpusError::Config(format!("stray `}}` in {text:?}")));
            }
            _ => lit.push(c),
        }
    }
    if !lit.is_empty() {
        pieces.push(Piece::Lit(lit));
    }
    Ok(pieces)
}

fn slot_names(text: &str) -> Result<BTreeSet<String>> {
    Ok(parse_pieces(text)?
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot(s) => Some(s),
            Piece::Lit(_) => None,
        })
        .collect())
}

fn render(text: &str, bindings: &BTreeMap<String, String>) -> String {
    // Templates were validated up front, so every slot is bound.
    let mut out = String::new();
    for p in parse_pieces(text).expect("validated template") {
        match p {
            Piece::Lit(s) => out.push_str(&s),
            Piece::Slot(name) => out.push_str(&bindings[&name]),
        }
    }
    out
}

struct Round<'a> {
    template: &'a Template,
    query: &'a str,
    bindings: BTreeMap<String, String>,
}

fn draw_round<'a>(
    config: &'a GeneratorConfig,
    templates: &'a [Template],
    rng: &mut Rng,
) -> Result<Round<'a>> {
    let template = rng.choose(templates);
    let query = rng.choose(&config.query_templates).as_str();
    let mut names = slot_names(query)?;
    for seg in &template.segments {
        names.extend(slot_names(&seg.text)?);
    }
    names.insert(config.tool_slot.clone());

    let mut bindings = BTreeMap::new();
    // Sources first, in name order, so linked slots can look them up.
    for name in names
        .iter()
        .filter(|n| !config.linked_slots.contains_key(*n))
    {
        let vocab = config.vocab(name)?;
        bindings.insert(name.clone(), rng.choose(vocab).clone());
    }
    for (derived, source) in &config.linked_slots {
        if !names.contains(derived) {
            continue;
        }
        let source_vocab = config.vocab(source)?;
        let source_value = match bindings.get(source) {
            Some(v) => v.clone(),
            None => {
                let v = rng.choose(source_vocab).clone();
                bindings.insert(source.clone(), v.clone());
                v
            }
        };
        let idx = source_vocab
            .iter()
            .position(|v| *v == source_value)
            .expect("bound from vocabulary");
        let derived_vocab = config.vocab(derived)?;
        bindings.insert(
            derived.clone(),
            derived_vocab[idx % derived_vocab.len()].clone(),
        );
    }
    Ok(Round {
        template,
        query,
        bindings,
    })
}

struct SpanWriter {
    text: String,
    len_chars: usize,
    spans: Vec<RoleSpan>,
}

impl SpanWriter {
    fn push(&mut self, s: &str, role: RoleLabel) {
        let n = s.chars().count();
        if n == 0 {
            return;
        }
        self.text.push_str(s);
        match self.spans.last_mut() {
            Some(last) if last.label == role && last.end == self.len_chars => last.end += n,
            _ => self
                .spans
                .push(RoleSpan::new(self.len_chars, self.len_chars + n, role)),
        }
        self.len_chars += n;
    }
}

pub fn generate_corpus(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = Rng::derive(config.seed, "generate");
    let mut samples = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let multi = config.multi_step_ratio > 0.0 && rng.bernoulli(config.multi_step_ratio);
        let mut rounds = vec![draw_round(config, &config.template_set, &mut rng)?];
        if multi {
            rounds.push(draw_round(config, &config.follow_templates, &mut rng)?);
        }

        let tools: Vec<&str> = rounds
            .iter()
            .map(|r| r.bindings[&config.tool_slot].as_str())
            .collect();
        let queries: Vec<String> = rounds
            .iter()
            .map(|r| render(r.query, &r.bindings))
            .collect();
        let input = format!(
            "{} Tools: {}. Query: {}.",
            config.preamble,
            tools.join(", "),
            queries.join(&config.query_joiner)
        );

        let mut out = SpanWriter {
            text: String::new(),
            len_chars: 0,
            spans: Vec::new(),
        };
        for (r, round) in rounds.iter().enumerate() {
            if r > 0 {
                out.push(&config.round_separator, RoleLabel::Format);
            }
            for seg in &round.template.segments {
                out.push(&render(&seg.text, &round.bindings), seg.role);
            }
        }

        samples.push(Sample {
            id: format!("{}-{i:04}", config.id_prefix),
            input,
            output: out.text,
            role_spans: Some(out.spans),
        });
    }
    Corpus::new(
        samples,
        Provenance::Synthetic {
            seed: config.seed,
            generator_version: GENERATOR_VERSION,
        },
    )
}

fn default_multi_step_ratio() -> f64 {
    0.3
}

fn default_preamble() -> String {
    "You are a helpful agent that solves tasks by calling tools.".into()
}

fn default_query_templates() -> Vec<String> {
    [
        "please {verb} {attribute} {entity} in {city}",
        "can you {verb} {attribute} {entity} in {city}",
        "I want to {verb} {attribute} {entity} around {city}",
        "help me {verb} {attribute} {entity} near {city}",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

fn default_query_joiner() -> String {
    " and then ".into()
}

fn default_tool_slot() -> String {
    "function".into()
}

fn default_round_separator() -> String {
    "\nObservation:\n".into()
}

fn seg(role: RoleLabel, text: &str) -> Segment {
    Segment {
        role,
        text: text.into(),
    }
}

fn round_template(name: &str, opening_slot: &str) -> Template {
    use RoleLabel::*;
    Template {
        name: name.into(),
        segments: vec![
            seg(Format, "Thought: "),
            seg(TemplateConnecting, &format!("{{{opening_slot}}} {{plan}} ")),
            seg(Reasoning, "{verb} {attribute} {entity}"),
            seg(TemplateConnecting, " in "),
            seg(Reasoning, "{city}"),
            seg(TemplateConnecting, ". {call} "),
            seg(Reasoning, "{function}"),
            seg(
                TemplateConnecting,
                " for this. {closing} I can answer the user.",
            ),
            seg(Format, "\nAction: "),
            seg(Copied, "{function}"),
            seg(Format, "\nAction Input: {{\"{param}\": \""),
            seg(Copied, "{attribute} {entity}"),
            seg(Format, "\", \"city\": \""),
            seg(Copied, "{city}"),
            seg(Format, "\"}}"),
        ],
    }
}

fn default_first_round() -> Vec<Template> {
    vec![round_template("first", "opening")]
}

fn default_follow_round() -> Vec<Template> {
    vec![round_template("follow", "next_opening")]
}

/// Every ordering of the three answer clauses, each introduced by a short
/// phrase of its own kind ("in" before a city, "call" before a tool).
fn pretraining_templates() -> Vec<Template> {
    use RoleLabel::*;
    const GROUPS: [&str; 3] = [
        "{verb_link} {verb} {attribute} {entity}",
        "{city_link} {city}",
        "{tool_link} {function}",
    ];
    let mut templates = Vec::new();
    for perm in permutations(GROUPS.len()) {
        let mut segments = vec![seg(Format, "Answer:")];
        for (i, &g) in perm.iter().enumerate() {
            let (link, slots) = GROUPS[g].split_once("} ").expect("link then slots");
            let sep = if i == 0 { " " } else { ", " };
            segments.push(seg(TemplateConnecting, &format!("{sep}{link}}} ")));
            segments.push(seg(Reasoning, slots));
        }
        segments.push(seg(Format, "."));
        let name = perm.iter().map(|g| g.to_string()).collect::<String>();
        templates.push(Template {
            name: format!("prose-{name}"),
            segments,
        });
    }
    templates
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

fn pretraining_vocabularies() -> BTreeMap<String, Vec<String>> {
    let mut v = default_vocabularies();
    v.insert(
        "verb_link".into(),
        words(&[
            "I need to",
            "I should",
            "I will",
            "we can",
            "let me",
            "try to",
        ]),
    );
    v.insert(
        "city_link".into(),
        words(&["in", "near", "around", "within", "close to"]),
    );
    v.insert(
        "tool_link".into(),
        words(&[
            "I should call",
            "I will call",
            "let me call",
            "using",
            "via",
            "with the tool",
        ]),
    );
    v
}

fn default_id_prefix() -> String {
    "syn".into()
}

fn default_linked() -> BTreeMap<String, String> {
    BTreeMap::from([("param".to_string(), "function".to_string())])
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn default_vocabularies() -> BTreeMap<String, Vec<String>> {
    let mut v = BTreeMap::new();
    v.insert(
        "verb".into(),
        words(&[
            "find", "compare", "track", "review", "book", "order", "locate", "rank", "list",
            "check", "rent", "reserve",
        ]),
    );
    v.insert(
        "attribute".into(),
        words(&[
            "smart",
            "cheap",
            "wireless",
            "vintage",
            "organic",
            "electric",
            "portable",
            "luxury",
            "refurbished",
            "compact",
            "waterproof",
            "digital",
            "handmade",
            "used",
            "modern",
            "classic",
            "premium",
            "budget",
            "gaming",
            "outdoor",
            "solar",
            "leather",
            "folding",
            "mini",
        ]),
    );
    v.insert(
        "entity".into(),
        words(&[
            "phones",
            "headphones",
            "laptops",
            "cameras",
            "shoes",
            "watches",
            "bikes",
            "tablets",
            "speakers",
            "monitors",
            "jackets",
            "backpacks",
            "chairs",
            "lamps",
            "guitars",
            "drones",
            "printers",
            "keyboards",
            "tents",
            "ovens",
            "heaters",
            "kettles",
            "scooters",
            "mirrors",
        ]),
    );
    v.insert(
        "city".into(),
        words(&[
            "Paris", "London", "Tokyo", "Berlin", "Madrid", "Rome", "Lisbon", "Vienna", "Prague",
            "Dublin", "Oslo", "Seoul", "Sydney", "Toronto", "Chicago", "Boston", "Denver",
            "Austin", "Miami", "Seattle", "Zurich", "Milan", "Munich", "Cairo",
        ]),
    );
    v.insert(
        "function".into(),
        words(&[
            "product_search_api",
            "price_compare_v2",
            "inventory_lookup",
            "store_locator_api",
            "review_fetcher",
            "deal_finder_v3",
            "catalog_query",
            "shopping_assistant_api",
            "market_scan",
            "order_tracker_v2",
            "listing_search",
            "retail_index_api",
            "goods_finder",
            "rating_lookup_v1",
            "stock_checker",
            "offer_search_api",
            "vendor_directory",
            "smart_phones_for_amazon_api_v2",
            "booking_engine",
            "rental_finder_v2",
            "local_shops_api",
            "item_ranker",
            "availability_check",
            "merchant_lookup_v4",
        ]),
    );
    v.insert(
        "param".into(),
        words(&["query", "keyword", "product", "item", "search_term", "name"]),
    );
    v.insert(
        "opening".into(),
        words(&[
            "Based on the user's request,",
            "To handle this request,",
            "Given the user's question,",
            "According to the query,",
        ]),
    );
    v.insert(
        "next_opening".into(),
        words(&["Now that I have the result,", "Next,", "After that,"]),
    );
    v.insert("plan".into(), words(&["I need to", "I should", "I will"]));
    v.insert(
        "call".into(),
        words(&["I should call", "I will call", "Let me call"]),
    );
    v.insert(
        "closing".into(),
        words(&["This way", "By doing so", "In this way"]),
    );
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_and_count() {
        let c = generate_corpus(&GeneratorConfig::with_defaults(100, 7)).unwrap();
        assert_eq!(c.len(), 100);
        assert_eq!(c.samples[0].id, "syn-0000");
        assert_eq!(c.samples[99].id, "syn-0099");
    }

    #[test]
    fn slot_parsing_handles_escapes() {
        let p = parse_pieces("a {{b}} {c}d").unwrap();
        assert_eq!(
            p,
            vec![
                Piece::Lit("a {b} ".into()),
                Piece::Slot("c".into()),
                Piece::Lit("d".into())
            ]
        );
        assert!(parse_pieces("{open").is_err());
    }

    #[test]
    fn empty_vocabulary_names_the_slot() {
        let mut cfg = GeneratorConfig::with_defaults(3, 1);
        cfg.slot_vocabularies.insert("city".into(), vec![]);
        let err = generate_corpus(&cfg).unwrap_err();
        assert!(
            matches!(&err, CorpusError::EmptySlot(s) if s == "city"),
            "{err}"
        );
        assert!(err.to_string().contains("city"));
    }

    #[test]
    fn unknown_slot_is_a_config_error() {
        let mut cfg = GeneratorConfig::with_defaults(3, 1);
        cfg.template_set[0]
            .segments
            .push(seg(RoleLabel::TemplateConnecting, " {mood}"));
        assert!(matches!(generate_corpus(&cfg), Err(CorpusError::UnknownSlot(s)) if s == "mood"));
    }

    #[test]
    fn hidden_reasoning_slot_is_rejected() {
        let mut cfg = GeneratorConfig::with_defaults(3, 1);
        cfg.template_set[0]
            .segments
            .push(seg(RoleLabel::Reasoning, " {closing}"));
        assert!(matches!(generate_corpus(&cfg), Err(CorpusError::Config(_))));
    }

    #[test]
    fn zero_samples_is_rejected() {
        assert!(generate_corpus(&GeneratorConfig::with_defaults(0, 1)).is_err());
    }

    #[test]
    fn param_follows_function() {
        let c = generate_corpus(&GeneratorConfig::with_defaults(50, 3)).unwrap();
        let cfg = GeneratorConfig::with_defaults(1, 0);
        let fns = &cfg.slot_vocabularies["function"];
        let params = &cfg.slot_vocabularies["param"];
        for s in &c.samples {
            let action = s
                .output
                .lines()
                .find(|l| l.starts_with("Action: "))
                .unwrap();
            let f = &action["Action: ".len()..];
            let idx = fns.iter().position(|x| x == f).unwrap();
            let want = format!("{{\"{}\":", params[idx % params.len()]);
            assert!(s.output.contains(&want), "{}", s.output);
        }
    }

    #[test]
    fn multi_step_ratio_is_respected() {
        let mut cfg = GeneratorConfig::with_defaults(2000, 9);
        cfg.multi_step_ratio = 0.3;
        let c = generate_corpus(&cfg).unwrap();
        let multi = c
            .samples
            .iter()
            .filter(|s| s.output.contains("Observation:"))
            .count() as f64
            / 2000.0;
        assert!((multi - 0.3).abs() < 0.04, "{multi}");
    }
}
