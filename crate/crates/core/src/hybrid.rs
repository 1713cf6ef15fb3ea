//! LLM-first classification with a weak-supervision stage behind it.
//!
//! The LLM proposes a label; the weak labeler filters, overrides or re-scores
//! it depending on the [`HybridPolicy`]. When the LLM output could not be
//! parsed, the weak label is used as is.

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{WeakLabel, TIE_BREAK_PRIORITY};
use crate::query::{IntentLabel, Prediction, Provenance, Query};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HybridPolicy {
    /// Keep the LLM label when the weak label agrees or defaulted; otherwise
    /// switch to the weak label if its confidence is at least
    /// `ws_min_confidence`.
    FilterAgree { ws_min_confidence: f64 },
    /// Any non-defaulted weak label wins.
    WsOverride,
    /// Argmax of `blend * llm_confidence * [label == llm] + (1 - blend) * vote share`.
    ConfidenceBlend { blend: f64 },
}

impl HybridPolicy {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidPolicy(format!("{name} = {v} outside [0, 1]")))
            }
        };
        match *self {
            HybridPolicy::FilterAgree { ws_min_confidence } => unit("ws_min_confidence", ws_min_confidence),
            HybridPolicy::WsOverride => Ok(()),
            HybridPolicy::ConfidenceBlend { blend } => unit("blend", blend),
        }
    }
}

/// What the hybrid stage needs from a weak label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsEvidence {
    pub label: IntentLabel,
    pub confidence: f64,
    pub defaulted: bool,
    /// Share of non-abstain votes per label.
    pub fractions: [f64; 3],
}

impl WsEvidence {
    /// Evidence from a bare label and confidence, when individual votes are
    /// unavailable: the confidence goes to the label, the rest is split evenly.
    pub fn from_label(label: IntentLabel, confidence: f64, defaulted: bool) -> WsEvidence {
        let mut fractions = [0.0; 3];
        if !defaulted {
            fractions = [(1.0 - confidence) / 2.0; 3];
            fractions[label.index()] = confidence;
        }
        WsEvidence { label, confidence, defaulted, fractions }
    }
}

impl From<&WeakLabel> for WsEvidence {
    fn from(w: &WeakLabel) -> WsEvidence {
        WsEvidence { label: w.label, confidence: w.confidence, defaulted: w.defaulted, fractions: w.vote_fractions() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Llm,
    Ws,
    Blend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridOutcome {
    pub prediction: Prediction,
    /// The result came from a weak label that had defaulted.
    pub defaulted: bool,
    pub stage: Stage,
}

/// Combine one query's LLM prediction (`None` if unparseable) with its weak
/// label.
pub fn hybrid_classify(
    query: &Query,
    llm: Option<&Prediction>,
    ws: &WsEvidence,
    policy: &HybridPolicy,
) -> Result<HybridOutcome> {
    policy.validate()?;
    let id = llm.map(|p| p.query_id.clone()).unwrap_or_else(|| query.key());
    let from_ws = |id: String| outcome(id, ws.label, ws.confidence, ws.defaulted, Stage::Ws);
    let Some(llm) = llm else {
        return from_ws(id);
    };
    let from_llm = |id: String| outcome(id, llm.label, llm.confidence, false, Stage::Llm);
    match *policy {
        HybridPolicy::FilterAgree { ws_min_confidence } => {
            if ws.defaulted || ws.label == llm.label || ws.confidence < ws_min_confidence {
                from_llm(id)
            } else {
                from_ws(id)
            }
        }
        HybridPolicy::WsOverride => {
            if ws.defaulted {
                from_llm(id)
            } else {
                from_ws(id)
            }
        }
        HybridPolicy::ConfidenceBlend { blend } => {
            let fractions = if ws.defaulted { [0.0; 3] } else { ws.fractions };
            let score = |l: IntentLabel| {
                let llm_part = if l == llm.label { blend * llm.confidence } else { 0.0 };
                llm_part + (1.0 - blend) * fractions[l.index()]
            };
            // ties: the LLM label first, then the fixed priority order
            let mut best = llm.label;
            for l in TIE_BREAK_PRIORITY {
                if score(l) > score(best) {
                    best = l;
                }
            }
            let s = score(best);
            let confidence = if s > 0.0 { s.min(1.0) } else { llm.confidence };
            outcome(id, best, confidence, false, Stage::Blend)
        }
    }
}

fn outcome(id: String, label: IntentLabel, confidence: f64, defaulted: bool, stage: Stage) -> Result<HybridOutcome> {
    Ok(HybridOutcome { prediction: Prediction::new(id, label, confidence, Provenance::Hybrid)?, defaulted, stage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use IntentLabel::*;

    fn llm(label: IntentLabel, conf: f64) -> Prediction {
        Prediction::new("q1".into(), label, conf, Provenance::LlmIcl).unwrap()
    }

    fn q() -> Query {
        Query::new(Some("q1".into()), "some query").unwrap()
    }

    const POLICIES: [HybridPolicy; 3] = [
        HybridPolicy::FilterAgree { ws_min_confidence: 0.9 },
        HybridPolicy::WsOverride,
        HybridPolicy::ConfidenceBlend { blend: 0.5 },
    ];

    #[test]
    fn agreement_in_every_mode() {
        let ws = WsEvidence::from_label(Navigational, 1.0, false);
        for p in POLICIES {
            let out = hybrid_classify(&q(), Some(&llm(Navigational, 1.0)), &ws, &p).unwrap();
            assert_eq!(out.prediction.label, Navigational, "{p:?}");
            assert_eq!(out.prediction.provenance, Provenance::Hybrid);
        }
    }

    #[test]
    fn filter_agree_switches_on_confident_disagreement() {
        let ws = WsEvidence::from_label(Transactional, 1.0, false);
        let p = HybridPolicy::FilterAgree { ws_min_confidence: 0.9 };
        let out = hybrid_classify(&q(), Some(&llm(Informational, 1.0)), &ws, &p).unwrap();
        assert_eq!((out.prediction.label, out.stage), (Transactional, Stage::Ws));

        let weak = WsEvidence::from_label(Transactional, 0.6, false);
        let out = hybrid_classify(&q(), Some(&llm(Informational, 1.0)), &weak, &p).unwrap();
        assert_eq!((out.prediction.label, out.stage), (Informational, Stage::Llm));
    }

    #[test]
    fn unparseable_llm_falls_back_to_weak_label() {
        let ws = WsEvidence::from_label(Informational, 0.34, true);
        for p in POLICIES {
            let out = hybrid_classify(&q(), None, &ws, &p).unwrap();
            assert_eq!(out.prediction.label, Informational);
            assert!(out.defaulted);
            assert_eq!(out.prediction.query_id, "q1");
        }
    }

    #[test]
    fn blend_scores() {
        // llm Informational @0.6, votes 2/3 Transactional 1/3 Informational
        let ws = WsEvidence { label: Transactional, confidence: 2.0 / 3.0, defaulted: false, fractions: [1.0 / 3.0, 0.0, 2.0 / 3.0] };
        let run = |blend| {
            hybrid_classify(&q(), Some(&llm(Informational, 0.6)), &ws, &HybridPolicy::ConfidenceBlend { blend })
                .unwrap()
                .prediction
        };
        // blend 0.5: I = 0.3 + 0.1667 = 0.4667, T = 0.3333
        let p = run(0.5);
        assert_eq!(p.label, Informational);
        assert!((p.confidence - (0.3 + 1.0 / 6.0)).abs() < 1e-12);
        // blend 0.2: I = 0.12 + 0.2667 = 0.3867, T = 0.5333
        assert_eq!(run(0.2).label, Transactional);
        assert_eq!(run(1.0).label, Informational);
    }

    #[test]
    fn invalid_policy() {
        let ws = WsEvidence::from_label(Informational, 1.0, false);
        for p in [HybridPolicy::FilterAgree { ws_min_confidence: 1.5 }, HybridPolicy::ConfidenceBlend { blend: f64::NAN }] {
            assert!(matches!(hybrid_classify(&q(), None, &ws, &p), Err(Error::InvalidPolicy(_))));
        }
    }

    #[test]
    fn policy_config_schema() {
        let p: HybridPolicy = serde_json::from_str(r#"{"mode":"filter_agree","ws_min_confidence":0.9}"#).unwrap();
        assert_eq!(p, HybridPolicy::FilterAgree { ws_min_confidence: 0.9 });
        let p: HybridPolicy = serde_json::from_str(r#"{"mode":"ws_override"}"#).unwrap();
        assert_eq!(p, HybridPolicy::WsOverride);
        assert!(serde_json::from_str::<HybridPolicy>(r#"{"mode":"vote"}"#).is_err());
    }

    use proptest::prelude::*;

    fn label() -> impl Strategy<Value = IntentLabel> {
        (0usize..3).prop_map(|i| IntentLabel::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn defaulted_ws_passes_llm_through(l in label(), c in 0.01f64..=1.0, min in 0.0f64..=1.0) {
            let ws = WsEvidence::from_label(Informational, 0.34, true);
            let p = llm(l, c);
            let out = hybrid_classify(&q(), Some(&p), &ws, &HybridPolicy::FilterAgree { ws_min_confidence: min }).unwrap();
            prop_assert_eq!((out.prediction.label, out.prediction.confidence), (l, c));
        }

        #[test]
        fn override_copies_ws(l in label(), w in label(), c in 0.01f64..=1.0, wc in 0.01f64..=1.0) {
            let ws = WsEvidence::from_label(w, wc, false);
            let out = hybrid_classify(&q(), Some(&llm(l, c)), &ws, &HybridPolicy::WsOverride).unwrap();
            prop_assert_eq!((out.prediction.label, out.prediction.confidence), (w, wc));
        }
    }
}
