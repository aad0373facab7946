//! Rule-based judge.
//!
//! Reads the stage marker and the target block(s) out of the prompt and
//! answers by fixed rules, ignoring demonstrations and temperature:
//!
//! * FE/MF: the deduplicated token sequence of the target.
//! * FE/LF: the sorted lexicon terms present in the target.
//! * FA/MF: relevant iff Jaccard(tokens A, tokens B) >= threshold.
//! * FA/LF: relevant iff A and B share at least one lexicon term.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use super::{last_block, read_stage_marker, GatewayError, Judge, JudgeRequest, JudgeResponse, Usage};
use crate::demo_store::{FactType, Stage};
use crate::protocol::{facts_block, verdict_line, CASE_A_BLOCK, CASE_B_BLOCK, NO_FACTS, TARGET_BLOCK};
use crate::retrieval::cjk_bigram_tokens;

pub const BUNDLED_LEXICON: &str = include_str!("../../assets/lexicon.txt");

/// Crime-term lexicon; one term per line, NFC-normalized.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon(BTreeSet<String>);

impl Lexicon {
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.trim().nfc().collect::<String>())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect(),
        )
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.0.contains(term)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<String> for Lexicon {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        Self(iter.into_iter().map(|t| t.nfc().collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockJudgeConfig {
    pub mf_jaccard_threshold: f64,
    pub lexicon: Lexicon,
    pub seed: u64,
}

impl Default for MockJudgeConfig {
    fn default() -> Self {
        Self {
            mf_jaccard_threshold: 0.4,
            lexicon: Lexicon::bundled(),
            seed: 0,
        }
    }
}

/// NFC, punctuation stripped, order preserved, deduplicated.
pub fn mock_tokens(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    let mut seen = HashSet::new();
    cjk_bigram_tokens(&normalized)
        .into_tokens()
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn lexicon_terms(text: &str, lexicon: &Lexicon) -> BTreeSet<String> {
    mock_tokens(text)
        .into_iter()
        .filter(|t| lexicon.contains(t))
        .collect()
}

fn joined_or_none<'a>(tokens: impl IntoIterator<Item = &'a String>) -> String {
    let s = tokens
        .into_iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ");
    if s.is_empty() {
        NO_FACTS.to_owned()
    } else {
        s
    }
}

fn block<'a>(text: &'a str, label: &str) -> Result<&'a str, GatewayError> {
    last_block(text, label)
        .ok_or_else(|| GatewayError::InvalidRequest(format!("prompt has no {label} block")))
}

/// Pure function of `(request, cfg)`.
pub fn mock_complete(request: &JudgeRequest, cfg: &MockJudgeConfig) -> Result<JudgeResponse, GatewayError> {
    let (stage, fact_type) = read_stage_marker(&request.user_text)?;
    let text = match (stage, fact_type) {
        (Stage::FactExtraction, FactType::Material) => {
            let target = block(&request.user_text, TARGET_BLOCK)?;
            facts_block(&joined_or_none(&mock_tokens(target)))
        }
        (Stage::FactExtraction, FactType::Legal) => {
            let target = block(&request.user_text, TARGET_BLOCK)?;
            facts_block(&joined_or_none(&lexicon_terms(target, &cfg.lexicon)))
        }
        (Stage::FactAnnotation, FactType::Material) => {
            let a: HashSet<String> = mock_tokens(block(&request.user_text, CASE_A_BLOCK)?)
                .into_iter()
                .collect();
            let b: HashSet<String> = mock_tokens(block(&request.user_text, CASE_B_BLOCK)?)
                .into_iter()
                .collect();
            let inter = a.intersection(&b).count();
            let union = a.union(&b).count();
            let jaccard = if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            };
            let relevant = jaccard >= cfg.mf_jaccard_threshold;
            format!(
                "Token overlap {inter}/{union} gives Jaccard {jaccard:.4} against threshold {:.4}.\n{}",
                cfg.mf_jaccard_threshold,
                verdict_line(relevant)
            )
        }
        (Stage::FactAnnotation, FactType::Legal) => {
            let a = lexicon_terms(block(&request.user_text, CASE_A_BLOCK)?, &cfg.lexicon);
            let b = lexicon_terms(block(&request.user_text, CASE_B_BLOCK)?, &cfg.lexicon);
            let shared: Vec<&String> = a.intersection(&b).collect();
            let relevant = !shared.is_empty();
            format!(
                "Shared legal terms: {}.\n{}",
                joined_or_none(shared),
                verdict_line(relevant)
            )
        }
    };
    Ok(JudgeResponse {
        usage: Usage {
            prompt_tokens: request.user_text.chars().count() as u64,
            completion_tokens: text.chars().count() as u64,
        },
        text,
        latency_ms: 0,
        cached: false,
        attempts: 1,
    })
}

#[derive(Debug, Clone, Default)]
pub struct MockJudge {
    cfg: MockJudgeConfig,
}

impl MockJudge {
    pub fn new(cfg: MockJudgeConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &MockJudgeConfig {
        &self.cfg
    }
}

impl Judge for MockJudge {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, GatewayError> {
        request.validate()?;
        mock_complete(request, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{stage_marker, wrap_block};

    fn req(stage: Stage, ft: FactType, body: String) -> JudgeRequest {
        JudgeRequest {
            system_text: String::new(),
            user_text: format!("{}\nsome instructions\n{body}", stage_marker(stage, ft)),
            temperature: 0.4,
            model: "mock".into(),
            max_tokens: 256,
        }
    }

    fn pair(a: &str, b: &str) -> String {
        format!("{}\n{}", wrap_block(CASE_A_BLOCK, a), wrap_block(CASE_B_BLOCK, b))
    }

    fn cfg() -> MockJudgeConfig {
        MockJudgeConfig {
            mf_jaccard_threshold: 0.4,
            lexicon: ["盗窃".to_owned(), "抢劫".to_owned()].into_iter().collect(),
            seed: 0,
        }
    }

    #[test]
    fn fa_mf_identical_texts_relevant() {
        let r = mock_complete(
            &req(Stage::FactAnnotation, FactType::Material, pair("a b c", "a b c")),
            &cfg(),
        )
        .unwrap();
        assert!(r.text.ends_with("VERDICT: RELEVANT"), "{}", r.text);
    }

    #[test]
    fn fe_lf_picks_lexicon_terms() {
        let r = mock_complete(
            &req(
                Stage::FactExtraction,
                FactType::Legal,
                wrap_block(TARGET_BLOCK, "被告人盗窃财物"),
            ),
            &cfg(),
        )
        .unwrap();
        assert_eq!(r.text, "===FACTS===\n盗窃\n===END===");
    }

    #[test]
    fn fa_mf_one_third_below_threshold() {
        // A = {a,b,c,d}, B = {a,b,e,f}: |A∩B| = 2, |A∪B| = 6.
        let a: HashSet<&str> = ["a", "b", "c", "d"].into();
        let b: HashSet<&str> = ["a", "b", "e", "f"].into();
        assert_eq!(a.intersection(&b).count(), 2);
        assert_eq!(a.union(&b).count(), 6);
        let r = mock_complete(
            &req(Stage::FactAnnotation, FactType::Material, pair("a b c d", "a b e f")),
            &cfg(),
        )
        .unwrap();
        assert!(r.text.ends_with("VERDICT: IRRELEVANT"), "{}", r.text);
    }

    #[test]
    fn fe_mf_normalizes_and_dedupes() {
        let r = mock_complete(
            &req(
                Stage::FactExtraction,
                FactType::Material,
                wrap_block(TARGET_BLOCK, "car, car; theft!"),
            ),
            &cfg(),
        )
        .unwrap();
        assert_eq!(r.text, "===FACTS===\ncar theft\n===END===");
    }

    #[test]
    fn empty_extraction_yields_placeholder() {
        let r = mock_complete(
            &req(Stage::FactExtraction, FactType::Legal, wrap_block(TARGET_BLOCK, "nothing here")),
            &cfg(),
        )
        .unwrap();
        assert_eq!(r.text, "===FACTS===\nNONE\n===END===");
    }

    #[test]
    fn fa_lf_requires_shared_lexicon_term() {
        let c = cfg();
        let yes = mock_complete(&req(Stage::FactAnnotation, FactType::Legal, pair("盗窃", "盗窃 抢劫")), &c).unwrap();
        assert!(yes.text.ends_with("VERDICT: RELEVANT"));
        let no = mock_complete(&req(Stage::FactAnnotation, FactType::Legal, pair("盗窃", "抢劫")), &c).unwrap();
        assert!(no.text.ends_with("VERDICT: IRRELEVANT"));
        let none = mock_complete(&req(Stage::FactAnnotation, FactType::Legal, pair("NONE", "NONE")), &c).unwrap();
        assert!(none.text.ends_with("VERDICT: IRRELEVANT"));
    }

    #[test]
    fn missing_marker_rejected() {
        let r = JudgeRequest {
            system_text: String::new(),
            user_text: "no marker".into(),
            temperature: 0.4,
            model: "mock".into(),
            max_tokens: 1,
        };
        assert!(matches!(
            mock_complete(&r, &cfg()),
            Err(GatewayError::MalformedStageMarker(_))
        ));
    }

    #[test]
    fn temperature_is_ignored() {
        let mut a = req(Stage::FactExtraction, FactType::Material, wrap_block(TARGET_BLOCK, "x y"));
        let first = mock_complete(&a, &cfg()).unwrap();
        a.temperature = 1.7;
        assert_eq!(mock_complete(&a, &cfg()).unwrap(), first);
    }

    #[test]
    fn lexicon_parse_skips_blanks_and_comments() {
        let l = Lexicon::parse("# crimes\n盗窃\n\n 抢劫 \n");
        assert_eq!(l.terms().collect::<Vec<_>>(), ["抢劫", "盗窃"]);
        assert!(!Lexicon::bundled().is_empty());
    }
}
