//! Majority-vote weak supervision.
//!
//! A [`FunctionSet`] is the declarative, serializable description of the
//! labeling functions. [`Labeler`] is its compiled form: keyword lists are
//! pre-split into token sequences, patterns are compiled, and veto references
//! are resolved. Each function casts exactly one [`Vote`] per query and
//! [`Labeler::label`] aggregates them.
//!
//! Aggregation: the winning label has the most non-abstain votes. Ties are
//! broken by the fixed priority Navigational > Transactional > Informational,
//! so the result never depends on function order. When every function
//! abstains the query defaults to Informational at the configured default
//! confidence and is flagged `defaulted`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use regex_automata::meta::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pos::{PosTag, Tagged, Tagger};
use crate::query::{IntentLabel, LabelVote, Query, Vote};

/// Tie-break order, highest priority first.
pub const TIE_BREAK_PRIORITY: [IntentLabel; 3] = [
    IntentLabel::Navigational,
    IntentLabel::Transactional,
    IntentLabel::Informational,
];

pub const DEFAULT_LABEL: IntentLabel = IntentLabel::Informational;
pub const DEFAULT_CONFIDENCE: f64 = 0.34;

const BUILTIN_CONFIG: &str = include_str!("../data/functions.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenPosition {
    Leading,
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionKind {
    /// Fires when any keyword occurs as a contiguous run of whole tokens.
    KeywordSet { keywords: Vec<String> },
    /// Fires when the regular expression matches the normalized text.
    Pattern { pattern: String },
    /// Fires when a token with `tag` occurs at `position`.
    PosRule { position: TokenPosition, tag: PosTag },
    /// Fires when the query has at least `min_tokens` tokens and none of the
    /// named veto functions fire.
    LengthHeuristic {
        min_tokens: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        veto_functions: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelingFunction {
    pub name: String,
    pub target: IntentLabel,
    #[serde(flatten)]
    pub kind: FunctionKind,
}

impl LabelingFunction {
    pub fn keywords(name: &str, target: IntentLabel, keywords: &[&str]) -> LabelingFunction {
        LabelingFunction {
            name: name.to_string(),
            target,
            kind: FunctionKind::KeywordSet { keywords: keywords.iter().map(|k| k.to_string()).collect() },
        }
    }

    pub fn pattern(name: &str, target: IntentLabel, pattern: &str) -> LabelingFunction {
        LabelingFunction {
            name: name.to_string(),
            target,
            kind: FunctionKind::Pattern { pattern: pattern.to_string() },
        }
    }

    pub fn pos_rule(name: &str, target: IntentLabel, position: TokenPosition, tag: PosTag) -> LabelingFunction {
        LabelingFunction { name: name.to_string(), target, kind: FunctionKind::PosRule { position, tag } }
    }

    pub fn length(name: &str, target: IntentLabel, min_tokens: usize, veto: &[&str]) -> LabelingFunction {
        LabelingFunction {
            name: name.to_string(),
            target,
            kind: FunctionKind::LengthHeuristic {
                min_tokens,
                veto_functions: veto.iter().map(|v| v.to_string()).collect(),
            },
        }
    }
}

/// Declarative labeling-function configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSet {
    #[serde(default)]
    pub version: String,
    #[serde(default = "default_confidence")]
    pub default_confidence: f64,
    pub functions: Vec<LabelingFunction>,
}

fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE
}

impl FunctionSet {
    pub fn new(functions: Vec<LabelingFunction>) -> FunctionSet {
        FunctionSet { version: String::new(), default_confidence: DEFAULT_CONFIDENCE, functions }
    }

    /// The shipped function set.
    pub fn builtin() -> FunctionSet {
        FunctionSet::from_json(BUILTIN_CONFIG).expect("builtin function set is valid")
    }

    pub fn from_json(text: &str) -> Result<FunctionSet> {
        let set: FunctionSet =
            serde_json::from_str(text).map_err(|e| Error::InvalidRecord(format!("function set: {e}")))?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("function set serializes")
    }

    pub fn get(&self, name: &str) -> Option<&LabelingFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.default_confidence > 0.0 && self.default_confidence <= 1.0) {
            return Err(Error::InvalidConfidence(self.default_confidence));
        }
        let mut names = BTreeSet::new();
        for f in &self.functions {
            if !names.insert(f.name.as_str()) {
                return Err(Error::DuplicateFunction(f.name.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    Keywords(Vec<Vec<String>>),
    Pattern(Regex),
    Pos { position: TokenPosition, tag: PosTag },
    Length { min_tokens: usize, veto: Vec<Matcher> },
}

/// Per-query inputs shared by every function.
struct Context<'a> {
    text: &'a str,
    words: Vec<&'a str>,
    tags: &'a [Tagged<'a>],
}

impl<'a> Context<'a> {
    fn new(text: &'a str, tags: &'a [Tagged<'a>]) -> Context<'a> {
        let words = text
            .split_whitespace()
            .map(strip_punctuation)
            .filter(|w| !w.is_empty())
            .collect();
        Context { text, words, tags }
    }
}

fn strip_punctuation(token: &str) -> &str {
    token.trim_matches(|c: char| c.is_ascii_punctuation())
}

fn contains_run(words: &[&str], run: &[String]) -> bool {
    !run.is_empty() && words.windows(run.len()).any(|w| w.iter().zip(run).all(|(a, b)| *a == b.as_str()))
}

impl Matcher {
    fn fires(&self, cx: &Context<'_>) -> bool {
        match self {
            Matcher::Keywords(runs) => runs.iter().any(|run| contains_run(&cx.words, run)),
            Matcher::Pattern(re) => re.is_match(cx.text),
            Matcher::Pos { position: TokenPosition::Leading, tag } => cx.tags.first().is_some_and(|t| t.tag == *tag),
            Matcher::Pos { position: TokenPosition::Any, tag } => cx.tags.iter().any(|t| t.tag == *tag),
            Matcher::Length { min_tokens, veto } => {
                cx.tags.len() >= *min_tokens && !veto.iter().any(|m| m.fires(cx))
            }
        }
    }
}

/// A compiled labeling function.
#[derive(Debug, Clone)]
pub struct CompiledFunction {
    name: String,
    target: IntentLabel,
    matcher: Matcher,
}

impl CompiledFunction {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn target(&self) -> IntentLabel {
        self.target
    }

    /// Vote on `query` given its tags. Keyword sets match whole tokens (edge
    /// punctuation ignored), patterns the normalized text, POS rules the tags
    /// and length heuristics the token count.
    pub fn apply(&self, query: &Query, tags: &[Tagged<'_>]) -> LabelVote {
        let cx = Context::new(query.text(), tags);
        LabelVote { source_lf: self.name.clone(), vote: self.vote(&cx) }
    }

    fn vote(&self, cx: &Context<'_>) -> Vote {
        if self.matcher.fires(cx) {
            Vote::Label(self.target)
        } else {
            Vote::Abstain
        }
    }
}

fn compile_matcher(f: &LabelingFunction, set: &FunctionSet, depth: usize) -> Result<Matcher> {
    let invalid = |reason: String| Error::InvalidFunction { name: f.name.clone(), reason };
    Ok(match &f.kind {
        FunctionKind::KeywordSet { keywords } => {
            if keywords.is_empty() {
                return Err(invalid("empty keyword list".into()));
            }
            let mut runs = Vec::with_capacity(keywords.len());
            for k in keywords {
                let run: Vec<String> = k
                    .to_lowercase()
                    .split_whitespace()
                    .map(|w| strip_punctuation(w).to_string())
                    .filter(|w| !w.is_empty())
                    .collect();
                if run.is_empty() {
                    return Err(invalid(format!("keyword {k:?} has no tokens")));
                }
                runs.push(run);
            }
            Matcher::Keywords(runs)
        }
        FunctionKind::Pattern { pattern } => {
            Matcher::Pattern(Regex::new(pattern).map_err(|e| invalid(format!("bad pattern: {e}")))?)
        }
        FunctionKind::PosRule { position, tag } => Matcher::Pos { position: *position, tag: *tag },
        FunctionKind::LengthHeuristic { min_tokens, veto_functions } => {
            if *min_tokens == 0 {
                return Err(invalid("min_tokens must be positive".into()));
            }
            if depth > 0 {
                return Err(invalid("length heuristics cannot be used as vetoes".into()));
            }
            let mut veto = Vec::with_capacity(veto_functions.len());
            for name in veto_functions {
                let target = set.get(name).ok_or_else(|| invalid(format!("unknown veto function {name:?}")))?;
                veto.push(compile_matcher(target, set, depth + 1)?);
            }
            Matcher::Length { min_tokens: *min_tokens, veto }
        }
    })
}

/// Outcome of majority voting for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabel {
    pub label: IntentLabel,
    pub confidence: f64,
    pub votes: BTreeMap<String, Vote>,
    pub defaulted: bool,
    /// Set when several labels shared the top count and the priority order
    /// decided.
    #[serde(default)]
    pub tie_broken: bool,
}

impl WeakLabel {
    pub fn counts(&self) -> [usize; 3] {
        tally(self.votes.values().copied())
    }

    /// Share of non-abstain votes per label, indexed by [`IntentLabel::index`].
    /// All zero when every function abstained.
    pub fn vote_fractions(&self) -> [f64; 3] {
        let counts = self.counts();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return [0.0; 3];
        }
        counts.map(|c| c as f64 / total as f64)
    }
}

fn tally(votes: impl IntoIterator<Item = Vote>) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for v in votes {
        if let Vote::Label(l) = v {
            counts[l.index()] += 1;
        }
    }
    counts
}

/// Majority vote over per-label counts. Returns `None` when all abstained,
/// otherwise the winner and whether a tie was broken.
pub fn majority(counts: [usize; 3]) -> Option<(IntentLabel, bool)> {
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    let tied = counts.iter().filter(|&&c| c == best).count() > 1;
    TIE_BREAK_PRIORITY
        .into_iter()
        .find(|l| counts[l.index()] == best)
        .map(|l| (l, tied))
}

/// Compiled function set plus the tagger used by POS rules.
#[derive(Debug, Clone)]
pub struct Labeler {
    functions: Vec<CompiledFunction>,
    default_confidence: f64,
    tagger: Tagger,
}

impl Labeler {
    pub fn new(set: &FunctionSet, tagger: Tagger) -> Result<Labeler> {
        set.validate()?;
        let functions = set
            .functions
            .iter()
            .map(|f| {
                Ok(CompiledFunction { name: f.name.clone(), target: f.target, matcher: compile_matcher(f, set, 0)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Labeler { functions, default_confidence: set.default_confidence, tagger })
    }

    pub fn builtin() -> Labeler {
        Labeler::new(&FunctionSet::builtin(), Tagger::builtin()).expect("builtin function set compiles")
    }

    pub fn functions(&self) -> &[CompiledFunction] {
        &self.functions
    }

    pub fn tagger(&self) -> &Tagger {
        &self.tagger
    }

    /// Every function's vote, in configuration order.
    pub fn votes(&self, query: &Query) -> Vec<LabelVote> {
        let tags = self.tagger.tag(query.text());
        let cx = Context::new(query.text(), &tags);
        self.functions
            .iter()
            .map(|f| LabelVote { source_lf: f.name.clone(), vote: f.vote(&cx) })
            .collect()
    }

    pub fn label(&self, query: &Query) -> WeakLabel {
        let tags = self.tagger.tag(query.text());
        let cx = Context::new(query.text(), &tags);
        let votes: BTreeMap<String, Vote> =
            self.functions.iter().map(|f| (f.name.clone(), f.vote(&cx))).collect();
        let counts = tally(votes.values().copied());
        match majority(counts) {
            Some((label, tie_broken)) => {
                let total: usize = counts.iter().sum();
                WeakLabel {
                    label,
                    confidence: counts[label.index()] as f64 / total as f64,
                    votes,
                    defaulted: false,
                    tie_broken,
                }
            }
            None => WeakLabel {
                label: DEFAULT_LABEL,
                confidence: self.default_confidence,
                votes,
                defaulted: true,
                tie_broken: false,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use IntentLabel::*;

    fn q(text: &str) -> Query {
        Query::parse(text).unwrap()
    }

    fn keyword_set(set: &FunctionSet, name: &str) -> Vec<String> {
        match &set.get(name).unwrap().kind {
            FunctionKind::KeywordSet { keywords } => keywords.clone(),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn builtin_contains_quoted_keywords() {
        let set = FunctionSet::builtin();
        let tx = keyword_set(&set, "transactional_keywords");
        assert!(tx.iter().any(|k| k == "download") && tx.iter().any(|k| k == "buy"));
        let nav = keyword_set(&set, "navigational_keywords");
        assert!(nav.iter().any(|k| k == "login") && nav.iter().any(|k| k == "site"));
        assert_eq!(set.get("transactional_keywords").unwrap().target, Transactional);
        assert_eq!(set.get("navigational_keywords").unwrap().target, Navigational);
    }

    #[test]
    fn builtin_round_trips_through_json() {
        let set = FunctionSet::builtin();
        let again = FunctionSet::from_json(&set.to_json()).unwrap();
        assert_eq!(set, again);
    }

    #[test]
    fn keyword_votes() {
        let labeler = Labeler::builtin();
        let find = |name: &str| labeler.functions().iter().find(|f| f.name() == name).unwrap().clone();
        let query = q("buy shoes online");
        let tags = labeler.tagger().tag(query.text());
        assert_eq!(find("transactional_keywords").apply(&query, &tags).vote, Vote::Label(Transactional));
        assert_eq!(find("navigational_keywords").apply(&query, &tags).vote, Vote::Abstain);
    }

    #[test]
    fn keywords_match_on_token_boundaries() {
        let set = FunctionSet::new(vec![LabelingFunction::keywords("site_only", Navigational, &["site"])]);
        let labeler = Labeler::new(&set, Tagger::builtin()).unwrap();
        let f = &labeler.functions()[0];
        let query = q("website design");
        let tags = labeler.tagger().tag(query.text());
        assert_eq!(f.apply(&query, &tags).vote, Vote::Abstain);
        let query = q("official site");
        let tags = labeler.tagger().tag(query.text());
        assert_eq!(f.apply(&query, &tags).vote, Vote::Label(Navigational));
        // builtin list carries "website" itself
        assert_eq!(Labeler::builtin().label(&q("website design")).label, Navigational);
    }

    #[test]
    fn multiword_keywords_need_contiguous_tokens() {
        let set = FunctionSet::new(vec![LabelingFunction::keywords("login", Navigational, &["log in"])]);
        let labeler = Labeler::new(&set, Tagger::builtin()).unwrap();
        assert_eq!(labeler.label(&q("bank log in")).label, Navigational);
        assert!(!labeler.label(&q("bank log in")).defaulted);
        assert!(labeler.label(&q("log book in car")).defaulted);
        assert!(!labeler.label(&q("gmail log in!")).defaulted);
    }

    #[test]
    fn facebook_login_is_unanimous() {
        let w = Labeler::builtin().label(&q("facebook login"));
        assert_eq!(w.label, Navigational);
        assert_eq!(w.confidence, 1.0);
        assert!(!w.defaulted && !w.tie_broken);
    }

    #[test]
    fn how_to_download_chrome_tally() {
        // informational_keywords ("how") and long_query (4 tokens, no
        // navigational signal) vote Informational; transactional_keywords
        // ("download") votes Transactional; the leading token is a question
        // word so leading_action_verb abstains.
        let w = Labeler::builtin().label(&q("how to download chrome"));
        assert_eq!(w.votes["informational_keywords"], Vote::Label(Informational));
        assert_eq!(w.votes["long_query"], Vote::Label(Informational));
        assert_eq!(w.votes["transactional_keywords"], Vote::Label(Transactional));
        assert_eq!(w.votes["leading_action_verb"], Vote::Abstain);
        assert_eq!(w.votes["navigational_keywords"], Vote::Abstain);
        assert_eq!(w.votes["navigational_url"], Vote::Abstain);
        assert_eq!(w.label, Informational);
        assert_eq!(w.confidence, 2.0 / 3.0);
    }

    #[test]
    fn all_abstain_defaults() {
        let w = Labeler::builtin().label(&q("zyxwv"));
        assert_eq!(w.label, Informational);
        assert!(w.defaulted);
        assert_eq!(w.confidence, DEFAULT_CONFIDENCE);
        assert!(w.votes.values().all(|v| *v == Vote::Abstain));
        assert_eq!(w.vote_fractions(), [0.0; 3]);
    }

    #[test]
    fn url_pattern() {
        let l = Labeler::builtin();
        for text in ["www.bbc.co.uk", "google.com", "go to ebay.de now", "www nytimes", "mail.yahoo.com/inbox"] {
            assert_eq!(l.label(&q(text)).votes["navigational_url"], Vote::Label(Navigational), "{text}");
        }
        for text in ["3.5 inch floppy", "node.js tutorial", "wwwise"] {
            assert_eq!(l.label(&q(text)).votes["navigational_url"], Vote::Abstain, "{text}");
        }
    }

    #[test]
    fn length_heuristic_vetoed_by_navigational_signal() {
        let l = Labeler::builtin();
        assert_eq!(l.label(&q("best pizza places in town")).votes["long_query"], Vote::Label(Informational));
        assert_eq!(l.label(&q("chase bank online login page")).votes["long_query"], Vote::Abstain);
        assert_eq!(l.label(&q("pizza hut menu www.pizzahut.com")).votes["long_query"], Vote::Abstain);
    }

    #[test]
    fn tie_break_priority() {
        assert_eq!(majority([1, 1, 1]), Some((Navigational, true)));
        assert_eq!(majority([1, 0, 1]), Some((Transactional, true)));
        assert_eq!(majority([2, 1, 1]), Some((Informational, false)));
        assert_eq!(majority([0, 0, 0]), None);
    }

    #[test]
    fn duplicate_names_rejected() {
        let set = FunctionSet::new(vec![
            LabelingFunction::keywords("a", Navigational, &["x"]),
            LabelingFunction::keywords("a", Informational, &["y"]),
        ]);
        assert_eq!(Labeler::new(&set, Tagger::builtin()).unwrap_err(), Error::DuplicateFunction("a".into()));
    }

    #[test]
    fn invalid_functions_rejected() {
        let bad = |f: LabelingFunction| Labeler::new(&FunctionSet::new(vec![f]), Tagger::builtin()).is_err();
        assert!(bad(LabelingFunction::keywords("k", Navigational, &[])));
        assert!(bad(LabelingFunction::keywords("k", Navigational, &["  "])));
        assert!(bad(LabelingFunction::pattern("p", Navigational, "(unclosed")));
        assert!(bad(LabelingFunction::length("l", Informational, 0, &[])));
        assert!(bad(LabelingFunction::length("l", Informational, 3, &["missing"])));
        assert!(FunctionSet::from_json(r#"{"functions":[],"default_confidence":0}"#).is_err());
    }

    #[test]
    fn config_schema() {
        let json = r#"{
            "functions": [
                {"name": "tx", "target": "transactional", "kind": "keyword_set", "keywords": ["buy"]},
                {"name": "verb", "target": "transactional", "kind": "pos_rule", "position": "leading", "tag": "verb"},
                {"name": "long", "target": "informational", "kind": "length_heuristic", "min_tokens": 3}
            ]
        }"#;
        let set = FunctionSet::from_json(json).unwrap();
        assert_eq!(set.default_confidence, DEFAULT_CONFIDENCE);
        assert_eq!(set.functions.len(), 3);
        let l = Labeler::new(&set, Tagger::builtin()).unwrap();
        let w = l.label(&q("buy cheap red shoes"));
        assert_eq!((w.label, w.confidence), (Transactional, 2.0 / 3.0));
    }
}
