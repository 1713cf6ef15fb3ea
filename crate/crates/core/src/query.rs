//! Canonical record types shared across the toolkit.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Upper bound on normalized query length, in characters.
pub const MAX_QUERY_CHARS: usize = 512;

/// Lowercase, collapse internal whitespace runs to one space and trim.
pub fn normalize(text: &str) -> Result<String> {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for token in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    if out.is_empty() {
        return Err(Error::EmptyQuery);
    }
    Ok(out)
}

/// Level-1 intent of a search query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IntentLabel {
    Informational,
    Navigational,
    Transactional,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 3] = [
        IntentLabel::Informational,
        IntentLabel::Navigational,
        IntentLabel::Transactional,
    ];

    /// Dense index used by confusion matrices and per-class tables.
    pub const fn index(self) -> usize {
        match self {
            IntentLabel::Informational => 0,
            IntentLabel::Navigational => 1,
            IntentLabel::Transactional => 2,
        }
    }

    pub const fn from_index(index: usize) -> Option<IntentLabel> {
        match index {
            0 => Some(IntentLabel::Informational),
            1 => Some(IntentLabel::Navigational),
            2 => Some(IntentLabel::Transactional),
            _ => None,
        }
    }

    /// Lowercase wire name.
    pub const fn as_str(self) -> &'static str {
        match self {
            IntentLabel::Informational => "informational",
            IntentLabel::Navigational => "navigational",
            IntentLabel::Transactional => "transactional",
        }
    }

    /// Capitalized display name used in prompts and tables.
    pub const fn title(self) -> &'static str {
        match self {
            IntentLabel::Informational => "Informational",
            IntentLabel::Navigational => "Navigational",
            IntentLabel::Transactional => "Transactional",
        }
    }
}

/// Strict, case-insensitive label parsing. Anything outside the closed set is
/// rejected rather than coerced.
pub fn parse_label(text: &str) -> Result<IntentLabel> {
    let trimmed = text.trim();
    IntentLabel::ALL
        .into_iter()
        .find(|l| trimmed.eq_ignore_ascii_case(l.as_str()))
        .ok_or_else(|| Error::OutOfVocabularyLabel(text.to_owned()))
}

impl FromStr for IntentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_label(s)
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for IntentLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for IntentLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_label(&s).map_err(serde::de::Error::custom)
    }
}

/// A single labeling-function ballot: a label or an abstention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vote {
    Label(IntentLabel),
    Abstain,
}

impl Vote {
    pub fn label(self) -> Option<IntentLabel> {
        match self {
            Vote::Label(l) => Some(l),
            Vote::Abstain => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Vote::Label(l) => l.as_str(),
            Vote::Abstain => "abstain",
        }
    }
}

impl Serialize for Vote {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Vote {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.eq_ignore_ascii_case("abstain") {
            return Ok(Vote::Abstain);
        }
        parse_label(&s).map(Vote::Label).map_err(serde::de::Error::custom)
    }
}

/// A vote tagged with the labeling function that cast it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVote {
    pub source_lf: String,
    pub vote: Vote,
}

/// Where a prediction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Weak,
    LlmIcl,
    LlmFt,
    Hybrid,
    Gold,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Weak => "weak",
            Provenance::LlmIcl => "llm_icl",
            Provenance::LlmFt => "llm_ft",
            Provenance::Hybrid => "hybrid",
            Provenance::Gold => "gold",
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Provenance::Weak),
            "llm_icl" => Ok(Provenance::LlmIcl),
            "llm_ft" => Ok(Provenance::LlmFt),
            "hybrid" => Ok(Provenance::Hybrid),
            "gold" => Ok(Provenance::Gold),
            other => Err(Error::InvalidRecord(format!("unknown provenance {other:?}"))),
        }
    }
}

/// A normalized query with an optional caller-supplied id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Query {
    id: Option<String>,
    text: String,
}

impl Query {
    pub fn new(id: Option<String>, raw: &str) -> Result<Query> {
        let text = normalize(raw)?;
        let chars = text.chars().count();
        if chars > MAX_QUERY_CHARS {
            return Err(Error::QueryTooLong(chars));
        }
        Ok(Query { id, text })
    }

    pub fn parse(raw: &str) -> Result<Query> {
        Query::new(None, raw)
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Stable identity: the explicit id, or a content hash of the normalized
    /// text when none was given.
    pub fn key(&self) -> String {
        match &self.id {
            Some(id) => id.clone(),
            None => content_id(&self.text),
        }
    }

    pub fn with_text(&self, text: String) -> Query {
        Query { id: self.id.clone(), text }
    }
}

impl<'de> Deserialize<'de> for Query {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            id: Option<String>,
            text: String,
        }
        let raw = Raw::deserialize(deserializer)?;
        Query::new(raw.id, &raw.text).map_err(serde::de::Error::custom)
    }
}

/// Content-derived id: `h:` followed by the first 16 hex digits of SHA-256.
pub fn content_id(normalized: &str) -> String {
    let digest = Sha256::digest(normalized.as_bytes());
    let mut out = String::with_capacity(18);
    out.push_str("h:");
    for byte in &digest[..8] {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// A labeled, confidence-scored prediction for one query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub query_id: String,
    pub label: IntentLabel,
    pub confidence: f64,
    pub provenance: Provenance,
}

impl Prediction {
    pub fn new(
        query_id: String,
        label: IntentLabel,
        confidence: f64,
        provenance: Provenance,
    ) -> Result<Prediction> {
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::InvalidConfidence(confidence));
        }
        if provenance == Provenance::Gold && confidence != 1.0 {
            return Err(Error::InvalidConfidence(confidence));
        }
        Ok(Prediction { query_id, label, confidence, provenance })
    }

    pub fn gold(query_id: String, label: IntentLabel) -> Prediction {
        Prediction { query_id, label, confidence: 1.0, provenance: Provenance::Gold }
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            query_id: String,
            label: IntentLabel,
            confidence: f64,
            provenance: Provenance,
        }
        let r = Raw::deserialize(deserializer)?;
        Prediction::new(r.query_id, r.label, r.confidence, r.provenance)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub query: Query,
    pub label: IntentLabel,
}

/// Validated gold set: query texts are unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldSet {
    records: Vec<GoldRecord>,
}

impl GoldSet {
    pub fn new(records: Vec<GoldRecord>) -> Result<GoldSet> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.query.text()) {
                return Err(Error::DuplicateGoldQuery(r.query.text().to_string()));
            }
        }
        Ok(GoldSet { records })
    }

    pub fn records(&self) -> &[GoldRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
