//! Lexicon and suffix-rule part-of-speech tagging for short queries.
//!
//! Tag assignment is first-match over a fixed rule order:
//!
//! 1. closed-class lexicons (question words, determiners, prepositions,
//!    function words),
//! 2. the action-verb lexicon,
//! 3. suffix and shape rules,
//! 4. fallback to [`PosTag::Noun`].
//!
//! Word lists are plain text files under `data/lexicon/` and can be swapped
//! via [`Lexicons::parse`].

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosTag {
    Verb,
    Noun,
    Adjective,
    QuestionWord,
    Preposition,
    Determiner,
    Number,
    Other,
}

/// One token of a tagged query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tagged<'a> {
    pub token: &'a str,
    pub tag: PosTag,
}

/// Parse a word list: one token per line, `#` starts a comment, blank lines
/// are skipped. Tokens are lowercased.
pub fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|line| !line.is_empty())
        .map(|line| line.to_lowercase())
        .collect()
}

/// The word lists backing a [`Tagger`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicons {
    pub question_words: BTreeSet<String>,
    pub determiners: BTreeSet<String>,
    pub prepositions: BTreeSet<String>,
    pub function_words: BTreeSet<String>,
    pub verbs: BTreeSet<String>,
}

impl Lexicons {
    pub fn parse(
        question_words: &str,
        determiners: &str,
        prepositions: &str,
        function_words: &str,
        verbs: &str,
    ) -> Lexicons {
        Lexicons {
            question_words: parse_word_list(question_words),
            determiners: parse_word_list(determiners),
            prepositions: parse_word_list(prepositions),
            function_words: parse_word_list(function_words),
            verbs: parse_word_list(verbs),
        }
    }

    pub fn builtin() -> Lexicons {
        Lexicons::parse(
            include_str!("../data/lexicon/question_words.txt"),
            include_str!("../data/lexicon/determiners.txt"),
            include_str!("../data/lexicon/prepositions.txt"),
            include_str!("../data/lexicon/function_words.txt"),
            include_str!("../data/lexicon/verbs.txt"),
        )
    }
}

const NOUN_SUFFIXES: [&str; 5] = ["tion", "sion", "ness", "ment", "ity"];
const ADJECTIVE_SUFFIXES: [&str; 6] = ["ous", "ful", "less", "able", "ible", "ive"];
// A suffix only counts when this many characters precede it.
const MIN_STEM: usize = 3;

#[derive(Debug, Clone, Default)]
pub struct Tagger {
    lexicons: Lexicons,
}

impl Tagger {
    pub fn new(lexicons: Lexicons) -> Tagger {
        Tagger { lexicons }
    }

    pub fn builtin() -> Tagger {
        Tagger::new(Lexicons::builtin())
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    pub fn is_verb(&self, token: &str) -> bool {
        self.lexicons.verbs.contains(token)
    }

    /// Tag a single token.
    pub fn tag_token(&self, token: &str) -> PosTag {
        let lx = &self.lexicons;
        if lx.question_words.contains(token) {
            PosTag::QuestionWord
        } else if lx.determiners.contains(token) {
            PosTag::Determiner
        } else if lx.prepositions.contains(token) {
            PosTag::Preposition
        } else if lx.function_words.contains(token) {
            PosTag::Other
        } else if lx.verbs.contains(token) {
            PosTag::Verb
        } else {
            suffix_tag(token).unwrap_or(PosTag::Noun)
        }
    }

    /// Tag a normalized query. Tokens are whitespace-delimited; the output has
    /// exactly one entry per token.
    pub fn tag<'a>(&self, query: &'a str) -> Vec<Tagged<'a>> {
        query
            .split_whitespace()
            .map(|token| Tagged { token, tag: self.tag_token(token) })
            .collect()
    }
}

fn suffix_tag(token: &str) -> Option<PosTag> {
    if is_number(token) {
        return Some(PosTag::Number);
    }
    let has_stem = |suffix: &str| token.len() >= suffix.len() + MIN_STEM && token.ends_with(suffix);
    if has_stem("ly") {
        Some(PosTag::Other)
    } else if NOUN_SUFFIXES.iter().any(|s| has_stem(s)) {
        Some(PosTag::Noun)
    } else if ADJECTIVE_SUFFIXES.iter().any(|s| has_stem(s)) {
        Some(PosTag::Adjective)
    } else {
        None
    }
}

/// Digits with optional numeric punctuation (`1,000`, `3.5`, `9/11`).
fn is_number(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_digit())
        && token.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b',' | b':' | b'/' | b'-' | b'%'))
}

/// Render tags as `token/tag` pairs, mostly for debugging output.
pub fn format_tags(tags: &[Tagged<'_>]) -> String {
    let mut out = String::new();
    for (i, t) in tags.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.token);
        out.push('/');
        out.push_str(&alloc::format!("{:?}", t.tag).to_lowercase());
    }
    out.to_string()
}
