//! Fine-tuning dataset construction.
//!
//! All randomness comes from ChaCha8 streams derived from a single seed, one
//! stream per class and purpose, so every operation is reproducible for a
//! fixed input order and seed. Sampling is single-pass reservoir sampling and
//! never needs the full corpus in memory.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{IntentLabel, Query};

/// Token budget per query for fine-tuning exports.
pub const MAX_TOKENS: usize = 32;
/// Share of each class kept for training.
pub const TRAIN_RATIO: f64 = 0.8;
/// Confidence thresholds used for high-confidence augmentation.
pub const THRESHOLDS: [f64; 4] = [0.88, 0.90, 0.95, 0.97];

// Stream offsets keep the per-purpose RNG sequences disjoint.
const STREAM_SAMPLE: u64 = 0;
const STREAM_SPLIT: u64 = 16;
const STREAM_HIGH_CONF: u64 = 32;
const STREAM_ASSEMBLE: u64 = 48;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: Query,
    pub label: IntentLabel,
}

impl LabeledQuery {
    pub fn id(&self) -> String {
        self.query.key()
    }
}

/// A query with a model-assigned label and confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuery {
    pub query: Query,
    pub label: IntentLabel,
    pub confidence: f64,
}

/// Fixed-size uniform sample of a stream (Algorithm R).
#[derive(Debug, Clone)]
struct Reservoir<T> {
    capacity: usize,
    seen: usize,
    items: Vec<T>,
    rng: ChaCha8Rng,
}

impl<T> Reservoir<T> {
    fn new(capacity: usize, rng: ChaCha8Rng) -> Reservoir<T> {
        Reservoir { capacity, seen: 0, items: Vec::with_capacity(capacity.min(1 << 16)), rng }
    }

    fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            let j = self.rng.random_range(0..=self.seen);
            if j < self.capacity {
                self.items[j] = item;
            }
        }
        self.seen += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifiedSample {
    pub per_class: [Vec<LabeledQuery>; 3],
    pub seed: u64,
    pub source: String,
}

impl StratifiedSample {
    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class(&self, label: IntentLabel) -> &[LabeledQuery] {
        &self.per_class[label.index()]
    }

    /// Records in class order.
    pub fn iter(&self) -> impl Iterator<Item = &LabeledQuery> {
        self.per_class.iter().flatten()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.iter().map(LabeledQuery::id).collect()
    }
}

/// Streaming stratified sampler: feed records with [`push`](Self::push),
/// then [`finish`](Self::finish).
#[derive(Debug, Clone)]
pub struct StratifiedSampler {
    per_class: usize,
    seed: u64,
    seen_ids: BTreeSet<String>,
    reservoirs: [Reservoir<LabeledQuery>; 3],
    duplicates: usize,
}

impl StratifiedSampler {
    pub fn new(per_class: usize, seed: u64) -> Result<StratifiedSampler> {
        if per_class == 0 {
            return Err(Error::InvalidParameter("per-class count must be positive".into()));
        }
        let reservoirs = IntentLabel::ALL.map(|l| Reservoir::new(per_class, rng(seed, STREAM_SAMPLE + l.index() as u64)));
        Ok(StratifiedSampler { per_class, seed, seen_ids: BTreeSet::new(), reservoirs, duplicates: 0 })
    }

    /// Offer one record. Records whose id was already seen are skipped.
    pub fn push(&mut self, record: LabeledQuery) {
        if !self.seen_ids.insert(record.id()) {
            self.duplicates += 1;
            return;
        }
        self.reservoirs[record.label.index()].push(record);
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn finish(self, source: &str) -> Result<StratifiedSample> {
        for label in IntentLabel::ALL {
            let have = self.reservoirs[label.index()].seen;
            if have < self.per_class {
                return Err(Error::InsufficientClass { label, have, need: self.per_class });
            }
        }
        let [a, b, c] = self.reservoirs;
        Ok(StratifiedSample { per_class: [a.items, b.items, c.items], seed: self.seed, source: source.into() })
    }
}

/// Draw `per_class` records of every class from `corpus`.
pub fn stratified_sample(
    corpus: impl IntoIterator<Item = LabeledQuery>,
    per_class: usize,
    seed: u64,
    source: &str,
) -> Result<StratifiedSample> {
    let mut sampler = StratifiedSampler::new(per_class, seed)?;
    for record in corpus {
        sampler.push(record);
    }
    sampler.finish(source)
}

/// Splits text into tokens, reported as byte ranges into the input.
pub trait Tokenizer {
    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;
}

/// Whitespace tokenization, the default when no model tokenizer is injected.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    spans.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..text.len());
        }
        spans
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    pub query: Query,
    pub truncated: bool,
    pub original_tokens: usize,
}

/// Keep the first `max_tokens` tokens of `query`.
pub fn truncate_tokens(query: &Query, max_tokens: usize, tokenizer: &dyn Tokenizer) -> Result<Truncation> {
    if max_tokens == 0 {
        return Err(Error::InvalidParameter("max_tokens must be positive".into()));
    }
    let spans = tokenizer.token_spans(query.text());
    if spans.len() <= max_tokens {
        return Ok(Truncation { query: query.clone(), truncated: false, original_tokens: spans.len() });
    }
    let end = spans[max_tokens - 1].end;
    let kept = Query::new(query.id().map(String::from), &query.text()[..end])?;
    Ok(Truncation { query: kept, truncated: true, original_tokens: spans.len() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainValSplit {
    pub train: Vec<LabeledQuery>,
    pub validation: Vec<LabeledQuery>,
}

/// Per-class stratified split: each class is shuffled and the first
/// `round(ratio * n)` records go to training.
pub fn split_train_val(sample: &StratifiedSample, ratio: f64, seed: u64) -> Result<TrainValSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!("train ratio {ratio} outside (0, 1)")));
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for label in IntentLabel::ALL {
        let mut records = sample.class(label).to_vec();
        records.shuffle(&mut rng(seed, STREAM_SPLIT + label.index() as u64));
        let n_train = (records.len() as f64 * ratio + 0.5) as usize;
        validation.extend(records.split_off(n_train));
        train.extend(records);
    }
    Ok(TrainValSplit { train, validation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighConfidenceSet {
    pub threshold: f64,
    pub per_class: [Vec<ScoredQuery>; 3],
}

impl HighConfidenceSet {
    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScoredQuery> {
        self.per_class.iter().flatten()
    }

    pub fn min_confidence(&self) -> Option<f64> {
        self.iter().map(|s| s.confidence).reduce(f64::min)
    }
}

/// Keep predictions with `confidence >= threshold` whose id is not excluded,
/// then sample `per_class` of each class.
pub fn select_high_confidence(
    preds: impl IntoIterator<Item = ScoredQuery>,
    threshold: f64,
    per_class: usize,
    seed: u64,
    exclude: &BTreeSet<String>,
) -> Result<HighConfidenceSet> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside (0, 1)")));
    }
    if per_class == 0 {
        return Err(Error::InvalidParameter("per-class count must be positive".into()));
    }
    let mut reservoirs =
        IntentLabel::ALL.map(|l| Reservoir::new(per_class, rng(seed, STREAM_HIGH_CONF + l.index() as u64)));
    let mut seen = BTreeSet::new();
    for p in preds {
        if p.confidence < threshold {
            continue;
        }
        let id = p.query.key();
        if exclude.contains(&id) || !seen.insert(id) {
            continue;
        }
        reservoirs[p.label.index()].push(p);
    }
    for label in IntentLabel::ALL {
        let have = reservoirs[label.index()].seen;
        if have < per_class {
            return Err(Error::InsufficientClass { label, have, need: per_class });
        }
    }
    let [a, b, c] = reservoirs;
    Ok(HighConfidenceSet { threshold, per_class: [a.items, b.items, c.items] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSet {
    pub random_part: StratifiedSample,
    pub high_conf_part: HighConfidenceSet,
    pub threshold: f64,
    /// Union of both parts, shuffled.
    pub records: Vec<LabeledQuery>,
}

impl AugmentedSet {
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }
}

/// Join a random sample with a high-confidence selection. The parts must not
/// share any query id.
pub fn assemble_augmented(random: StratifiedSample, high_conf: HighConfidenceSet, seed: u64) -> Result<AugmentedSet> {
    let random_ids = random.ids();
    for s in high_conf.iter() {
        let id = s.query.key();
        if random_ids.contains(&id) {
            return Err(Error::OverlapDetected(id));
        }
        if s.confidence < high_conf.threshold {
            return Err(Error::InvalidParameter(format!(
                "selected confidence {} below threshold {}",
                s.confidence, high_conf.threshold
            )));
        }
    }
    let mut records: Vec<LabeledQuery> = random
        .iter()
        .cloned()
        .chain(high_conf.iter().map(|s| LabeledQuery { query: s.query.clone(), label: s.label }))
        .collect();
    records.shuffle(&mut rng(seed, STREAM_ASSEMBLE));
    Ok(AugmentedSet { threshold: high_conf.threshold, random_part: random, high_conf_part: high_conf, records })
}
