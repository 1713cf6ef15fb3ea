//! Query intent classification primitives.
//!
//! Everything here is pure and allocation-only: normalization, a rule based
//! part-of-speech tagger, majority-vote weak supervision, prompt rendering and
//! response parsing, dataset curation, scoring with permutation tests, and the
//! hybrid LLM + weak-supervision combiner. IO, HTTP and the command line live
//! in the `intent` crate.

#![no_std]

extern crate alloc;

pub mod curation;
pub mod error;
pub mod eval;
pub mod hybrid;
pub mod labeling;
pub mod pos;
pub mod prompt;
pub mod query;

pub use error::{Error, Result};
pub use query::{
    content_id, normalize, parse_label, GoldRecord, GoldSet, IntentLabel, LabelVote, Prediction,
    Provenance, Query, Vote,
};
