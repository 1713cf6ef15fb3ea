//! Seeded synthetic query streams for benchmarks and scale tests.

use intent_core::curation::{LabeledQuery, ScoredQuery};
use intent_core::{IntentLabel, Query};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOPICS: &[&str] = &[
    "solar panels", "sourdough bread", "jupiter moons", "tax brackets", "knee pain", "roman empire",
    "electric cars", "coffee beans", "python lists", "tide tables", "wool sweaters", "chess openings",
    "vitamin d", "mortgage rates", "garden snails", "jazz chords", "volcano eruptions", "bike tires",
    "sleep apnea", "spanish verbs", "mountain goats", "credit scores", "laser printers", "tea leaves",
];
const SITES: &[&str] = &[
    "acme bank", "city council", "bluebird airlines", "metro transit", "northgate mall", "pinecrest clinic",
    "harbor college", "sunset radio", "fairview library", "orbit telecom", "maple insurance", "cobalt energy",
];
const GOODS: &[&str] = &[
    "running shoes", "video editor", "tax software", "road atlas", "guitar strings", "office chair",
    "antivirus", "wedding invitations", "phone case", "flight to denver", "concert tickets", "board games",
];

const INFO_TEMPLATES: &[&str] =
    &["how do {t} work", "what is {t}", "why are {t} important", "history of {t}", "{t} facts", "{t} meaning", "when did {t} start"];
const NAV_TEMPLATES: &[&str] = &["{s} login", "{s} official site", "{s} website", "www {s}", "{s} customer service", "{s} portal"];
const TRANS_TEMPLATES: &[&str] =
    &["buy {g}", "download {g}", "cheap {g} online", "{g} for sale", "order {g}", "{g} discount", "install {g}"];

/// One synthetic query whose template determines the intended label.
pub fn query(rng: &mut impl Rng) -> (String, IntentLabel) {
    let label = IntentLabel::from_index(rng.random_range(0..3)).unwrap();
    let (templates, slot, fill) = match label {
        IntentLabel::Informational => (INFO_TEMPLATES, "{t}", TOPICS),
        IntentLabel::Navigational => (NAV_TEMPLATES, "{s}", SITES),
        IntentLabel::Transactional => (TRANS_TEMPLATES, "{g}", GOODS),
    };
    let t = templates.choose(rng).unwrap();
    (t.replace(slot, fill.choose(rng).unwrap()), label)
}

pub fn queries(n: usize, seed: u64) -> Vec<(String, IntentLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| query(&mut rng)).collect()
}

/// `n` labeled queries with ids `s0, s1, …`.
pub fn labeled_corpus(n: usize, seed: u64) -> Vec<LabeledQuery> {
    queries(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (text, label))| LabeledQuery { query: Query::new(Some(format!("s{i}")), &text).unwrap(), label })
        .collect()
}

/// Model-style predictions over `corpus`: the label is kept and confidences
/// are skewed towards 1 (`1 - u⁶/2`), with one in twenty replaced by an exact
/// value from `boundary_values` when that list is non-empty.
pub fn scored_predictions(corpus: &[LabeledQuery], seed: u64, boundary_values: &[f64]) -> Vec<ScoredQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .iter()
        .map(|r| {
            let confidence = if !boundary_values.is_empty() && rng.random_ratio(1, 20) {
                *boundary_values.choose(&mut rng).unwrap()
            } else {
                1.0 - rng.random::<f64>().powi(6) * 0.5
            };
            ScoredQuery { query: r.query.clone(), label: r.label, confidence }
        })
        .collect()
}
