//! In-context learning prompts and strict response parsing.
//!
//! Four scenarios add information cumulatively: definitions, then keyword
//! hints, then five labeled examples per category, then clue/reasoning
//! annotations on those examples. Every line of a scenario's prompt also
//! appears, in order, in the next scenario's prompt.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{parse_label, IntentLabel, Query};

/// Examples required per category in a few-shot bank.
pub const EXAMPLES_PER_CLASS: usize = 5;

const BUILTIN_ASSETS: &str = include_str!("../data/prompt_assets.txt");
const BUILTIN_BANK: &str = include_str!("../data/few_shot_bank.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DefinitionsOnly,
    DefinitionsKeywords,
    DefinitionsKeywordsFewShot,
    ClueAndReasoning,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::DefinitionsOnly,
        Scenario::DefinitionsKeywords,
        Scenario::DefinitionsKeywordsFewShot,
        Scenario::ClueAndReasoning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::DefinitionsOnly => "definitions_only",
            Scenario::DefinitionsKeywords => "definitions_keywords",
            Scenario::DefinitionsKeywordsFewShot => "definitions_keywords_few_shot",
            Scenario::ClueAndReasoning => "clue_and_reasoning",
        }
    }

    fn has_keywords(self) -> bool {
        self >= Scenario::DefinitionsKeywords
    }

    pub fn needs_bank(self) -> bool {
        self >= Scenario::DefinitionsKeywordsFewShot
    }

    fn has_reasoning(self) -> bool {
        self == Scenario::ClueAndReasoning
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scenario {s:?}")))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Editable prompt text: the definitions, keyword hints and instructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAssets {
    pub preamble: String,
    pub definitions: [String; 3],
    pub keywords: [Vec<String>; 3],
    pub method: String,
    pub answer: String,
}

impl PromptAssets {
    pub fn builtin() -> PromptAssets {
        PromptAssets::parse(BUILTIN_ASSETS).expect("builtin prompt assets are valid")
    }

    /// Parse a sectioned template: `[name]` header lines start a section, the
    /// following lines up to the next header form its body.
    pub fn parse(text: &str) -> Result<PromptAssets> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && trimmed.len() > 2 {
                let name = trimmed[1..trimmed.len() - 1].trim().to_string();
                if sections.contains_key(&name) {
                    return Err(Error::InvalidAssets(format!("duplicate section [{name}]")));
                }
                sections.insert(name.clone(), Vec::new());
                current = Some(name);
            } else if let Some(name) = &current {
                sections.get_mut(name).expect("section exists").push(line.trim_end());
            } else if !trimmed.is_empty() {
                return Err(Error::InvalidAssets("text before the first section".into()));
            }
        }
        let mut take = |name: &str| -> Result<String> {
            let lines = sections
                .remove(name)
                .ok_or_else(|| Error::InvalidAssets(format!("missing section [{name}]")))?;
            let body = lines.join("\n").trim().to_string();
            if body.is_empty() {
                return Err(Error::InvalidAssets(format!("section [{name}] is empty")));
            }
            Ok(body)
        };
        let preamble = take("preamble")?;
        let mut definitions: [String; 3] = Default::default();
        let mut keywords: [Vec<String>; 3] = Default::default();
        for label in IntentLabel::ALL {
            definitions[label.index()] = take(&format!("definition.{}", label.as_str()))?;
            keywords[label.index()] = take(&format!("keywords.{}", label.as_str()))?
                .split(',')
                .map(|k| k.trim().to_string())
                .filter(|k| !k.is_empty())
                .collect();
        }
        let method = take("method")?;
        let answer = take("answer")?;
        if let Some(extra) = sections.keys().next() {
            return Err(Error::InvalidAssets(format!("unknown section [{extra}]")));
        }
        Ok(PromptAssets { preamble, definitions, keywords, method, answer })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub query: String,
    pub label: IntentLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clues: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

/// Exactly five examples per category. Clue and reasoning text is present on
/// all examples or on none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotBank {
    examples: Vec<FewShotExample>,
    annotated: bool,
}

impl FewShotBank {
    pub fn new(examples: Vec<FewShotExample>) -> Result<FewShotBank> {
        for label in IntentLabel::ALL {
            let n = examples.iter().filter(|e| e.label == label).count();
            if n != EXAMPLES_PER_CLASS {
                return Err(Error::InvalidBank(format!(
                    "{n} {label} examples, exactly {EXAMPLES_PER_CLASS} required"
                )));
            }
        }
        let annotated_count = examples.iter().filter(|e| e.clues.is_some() && e.reasoning.is_some()).count();
        let bare_count = examples.iter().filter(|e| e.clues.is_none() && e.reasoning.is_none()).count();
        let annotated = match (annotated_count, bare_count) {
            (n, 0) if n == examples.len() => true,
            (0, n) if n == examples.len() => false,
            _ => return Err(Error::InvalidBank("clue/reasoning text must be on every example or none".into())),
        };
        Ok(FewShotBank { examples, annotated })
    }

    pub fn builtin() -> FewShotBank {
        FewShotBank::from_jsonl(BUILTIN_BANK).expect("builtin few-shot bank is valid")
    }

    pub fn from_jsonl(text: &str) -> Result<FewShotBank> {
        let examples = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<FewShotExample>(l)
                    .map_err(|e| Error::InvalidBank(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        FewShotBank::new(examples)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&serde_json::to_string(e).expect("example serializes"));
            out.push('\n');
        }
        out
    }

    pub fn examples(&self) -> &[FewShotExample] {
        &self.examples
    }

    pub fn is_annotated(&self) -> bool {
        self.annotated
    }

    /// Drop clue/reasoning annotations.
    pub fn without_annotations(&self) -> FewShotBank {
        let examples = self
            .examples
            .iter()
            .map(|e| FewShotExample { clues: None, reasoning: None, ..e.clone() })
            .collect();
        FewShotBank { examples, annotated: false }
    }

    /// Examples grouped by category in label order, preserving bank order
    /// within a category.
    fn ordered(&self) -> impl Iterator<Item = &FewShotExample> {
        IntentLabel::ALL
            .into_iter()
            .flat_map(move |l| self.examples.iter().filter(move |e| e.label == l))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub title: &'static str,
    pub body: String,
}

pub const TITLE_TASK: &str = "Task";
pub const TITLE_DEFINITIONS: &str = "Intent definitions";
pub const TITLE_KEYWORDS: &str = "Keyword hints";
pub const TITLE_EXAMPLES: &str = "Examples";
pub const TITLE_QUERY: &str = "Query";
pub const TITLE_ANSWER: &str = "Answer";

/// The prompt as an ordered list of titled sections.
pub fn render_sections(
    scenario: Scenario,
    query: &Query,
    bank: Option<&FewShotBank>,
    assets: &PromptAssets,
) -> Result<Vec<Section>> {
    let mut sections = Vec::with_capacity(6);
    sections.push(Section { title: TITLE_TASK, body: assets.preamble.clone() });

    let definitions = IntentLabel::ALL
        .into_iter()
        .map(|l| format!("{}: {}", l.title(), assets.definitions[l.index()]))
        .collect::<Vec<_>>()
        .join("\n");
    sections.push(Section { title: TITLE_DEFINITIONS, body: definitions });

    if scenario.has_keywords() {
        let keywords = IntentLabel::ALL
            .into_iter()
            .map(|l| format!("{}: {}", l.title(), assets.keywords[l.index()].join(", ")))
            .collect::<Vec<_>>()
            .join("\n");
        sections.push(Section { title: TITLE_KEYWORDS, body: keywords });
    }

    if scenario.needs_bank() {
        let bank = bank.ok_or(Error::MissingBank)?;
        if scenario.has_reasoning() && !bank.is_annotated() {
            return Err(Error::InvalidBank("clue-and-reasoning needs annotated examples".into()));
        }
        let blocks = bank
            .ordered()
            .map(|e| {
                let mut block = format!("Query: \"{}\"", e.query);
                if scenario.has_reasoning() {
                    // annotations are guaranteed by the bank invariant
                    let clues = e.clues.as_deref().unwrap_or_default();
                    let reasoning = e.reasoning.as_deref().unwrap_or_default();
                    block.push_str(&format!("\nClues: {clues}\nReasoning: {reasoning}"));
                }
                block.push_str(&format!("\nDecision: {}", e.label.as_str()));
                block
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        sections.push(Section { title: TITLE_EXAMPLES, body: blocks });
    }

    sections.push(Section { title: TITLE_QUERY, body: format!("\"{}\"", query.text()) });

    let answer = if scenario.has_reasoning() {
        format!("{}\n{}", assets.method, assets.answer)
    } else {
        assets.answer.clone()
    };
    sections.push(Section { title: TITLE_ANSWER, body: answer });
    Ok(sections)
}

/// Render the prompt string for one query.
pub fn render(
    scenario: Scenario,
    query: &Query,
    bank: Option<&FewShotBank>,
    assets: &PromptAssets,
) -> Result<String> {
    let sections = render_sections(scenario, query, bank, assets)?;
    let mut out = String::new();
    for (i, s) in sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("## ");
        out.push_str(s.title);
        out.push('\n');
        out.push_str(&s.body);
        out.push('\n');
    }
    Ok(out)
}

/// Extract a label from a model response.
///
/// A response that is exactly one label word (ignoring case, surrounding
/// whitespace, quotes and punctuation) is taken as is. Otherwise the last
/// whole-word occurrence of any label word wins, since reasoning transcripts
/// end with their decision. Anything else is out of vocabulary.
pub fn parse_response(raw: &str) -> Result<IntentLabel> {
    let bare = raw.trim().trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    if let Ok(label) = parse_label(bare) {
        return Ok(label);
    }
    let mut last = None;
    for word in raw.split(|c: char| !c.is_ascii_alphabetic()) {
        if let Ok(label) = parse_label(word) {
            last = Some(label);
        }
    }
    last.ok_or_else(|| Error::OutOfVocabularyLabel(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn q(text: &str) -> Query {
        Query::parse(text).unwrap()
    }

    #[test]
    fn builtin_assets_and_bank_load() {
        let assets = PromptAssets::builtin();
        assert!(assets.keywords[IntentLabel::Transactional.index()].iter().any(|k| k == "download"));
        assert!(assets.keywords[IntentLabel::Transactional.index()].iter().any(|k| k == "buy"));
        assert!(assets.keywords[IntentLabel::Navigational.index()].iter().any(|k| k == "login"));
        assert!(assets.keywords[IntentLabel::Navigational.index()].iter().any(|k| k == "site"));
        let bank = FewShotBank::builtin();
        assert_eq!(bank.examples().len(), 15);
        assert!(bank.is_annotated());
        assert_eq!(FewShotBank::from_jsonl(&bank.to_jsonl()).unwrap(), bank);
    }

    #[test]
    fn definitions_only_has_no_keywords() {
        let p = render(Scenario::DefinitionsOnly, &q("facebook login"), None, &PromptAssets::builtin()).unwrap();
        assert!(p.contains("## Intent definitions"));
        for l in IntentLabel::ALL {
            assert!(p.contains(&format!("{}: ", l.title())));
        }
        assert!(p.contains("\"facebook login\""));
        assert!(!p.contains(TITLE_KEYWORDS));
        assert!(!p.contains(TITLE_EXAMPLES));
    }

    #[test]
    fn few_shot_has_fifteen_examples() {
        let bank = FewShotBank::builtin();
        let p = render(Scenario::DefinitionsKeywordsFewShot, &q("x"), Some(&bank), &PromptAssets::builtin()).unwrap();
        assert_eq!(p.matches("\nQuery: \"").count(), 15);
        assert_eq!(p.matches("\nDecision: ").count(), 15);
        assert!(!p.contains("Clues:"));
    }

    #[test]
    fn clue_and_reasoning_blocks_are_ordered() {
        let bank = FewShotBank::builtin();
        let sections =
            render_sections(Scenario::ClueAndReasoning, &q("x"), Some(&bank), &PromptAssets::builtin()).unwrap();
        let examples = sections.iter().find(|s| s.title == TITLE_EXAMPLES).unwrap();
        let blocks: Vec<&str> = examples.body.split("\n\n").collect();
        assert_eq!(blocks.len(), 15);
        for block in blocks {
            let c = block.find("\nClues: ").unwrap();
            let r = block.find("\nReasoning: ").unwrap();
            let d = block.find("\nDecision: ").unwrap();
            assert!(block.starts_with("Query: ") && c < r && r < d, "{block}");
        }
    }

    #[test]
    fn missing_bank_errors() {
        let assets = PromptAssets::builtin();
        for sc in [Scenario::DefinitionsKeywordsFewShot, Scenario::ClueAndReasoning] {
            assert_eq!(render(sc, &q("x"), None, &assets), Err(Error::MissingBank));
        }
        let bare = FewShotBank::builtin().without_annotations();
        assert!(render(Scenario::DefinitionsKeywordsFewShot, &q("x"), Some(&bare), &assets).is_ok());
        assert!(matches!(render(Scenario::ClueAndReasoning, &q("x"), Some(&bare), &assets), Err(Error::InvalidBank(_))));
    }

    #[test]
    fn prompt_ends_with_answer_instruction() {
        let bank = FewShotBank::builtin();
        let assets = PromptAssets::builtin();
        for sc in Scenario::ALL {
            let p = render(sc, &q("x"), Some(&bank), &assets).unwrap();
            assert!(p.trim_end().ends_with(&assets.answer), "{sc}");
            assert!(assets.answer.contains("informational, navigational, transactional"));
        }
    }

    #[test]
    fn bank_invariants() {
        let ex = |label, annotated: bool| FewShotExample {
            query: "q".into(),
            label,
            clues: annotated.then(|| "c".to_string()),
            reasoning: annotated.then(|| "r".to_string()),
        };
        let mut examples: Vec<_> = IntentLabel::ALL.iter().flat_map(|&l| (0..5).map(move |_| ex(l, false))).collect();
        assert!(FewShotBank::new(examples.clone()).is_ok());
        examples[0] = ex(IntentLabel::Informational, true);
        assert!(FewShotBank::new(examples.clone()).is_err());
        examples.pop();
        examples[0] = ex(IntentLabel::Informational, false);
        assert!(FewShotBank::new(examples).is_err());
        assert!(FewShotBank::new(vec![]).is_err());
    }

    #[test]
    fn asset_parsing_errors() {
        assert!(PromptAssets::parse("stray\n[preamble]\nx").is_err());
        assert!(PromptAssets::parse("[preamble]\nx\n").is_err());
        let dup = format!("{BUILTIN_ASSETS}\n[answer]\nagain\n");
        assert!(PromptAssets::parse(&dup).is_err());
        let extra = format!("{BUILTIN_ASSETS}\n[bogus]\nx\n");
        assert!(PromptAssets::parse(&extra).is_err());
    }

    #[test]
    fn scenario_names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.as_str().parse::<Scenario>().unwrap(), sc);
        }
        assert!("few_shot".parse::<Scenario>().is_err());
    }

    #[test]
    fn response_parsing() {
        assert_eq!(parse_response("Transactional").unwrap(), IntentLabel::Transactional);
        assert_eq!(parse_response("  navigational.\n").unwrap(), IntentLabel::Navigational);
        assert_eq!(parse_response("\"Informational\"").unwrap(), IntentLabel::Informational);
        let transcript = "Clues: the word \"buy\" hints at a transactional need, but \"what\" suggests otherwise.\n\
                          Reasoning: it is not navigational; the user asks a question.\n\
                          Decision: informational";
        assert_eq!(parse_response(transcript).unwrap(), IntentLabel::Informational);
        assert_eq!(
            parse_response("This query is commercial."),
            Err(Error::OutOfVocabularyLabel("This query is commercial.".into()))
        );
        assert!(parse_response("informationally speaking").is_err());
        assert!(parse_response("").is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn render_is_injective(a in "[a-z]{1,6}( [a-z0-9]{1,6}){0,3}", b in "[a-z]{1,6}( [a-z0-9]{1,6}){0,3}") {
            let assets = PromptAssets::builtin();
            let bank = FewShotBank::builtin();
            for sc in Scenario::ALL {
                let pa = render(sc, &q(&a), Some(&bank), &assets).unwrap();
                let pb = render(sc, &q(&b), Some(&bank), &assets).unwrap();
                prop_assert_eq!(a == b, pa == pb);
            }
        }

        #[test]
        fn answer_tail_parses_back(i in 0usize..3, upper in any::<bool>()) {
            let l = IntentLabel::from_index(i).unwrap();
            let word = if upper { l.title() } else { l.as_str() };
            prop_assert_eq!(parse_response(word).unwrap(), l);
            let tail = format!("Reasoning: could be navigational or transactional.\nDecision: {word}");
            prop_assert_eq!(parse_response(&tail).unwrap(), l);
        }
    }
}
