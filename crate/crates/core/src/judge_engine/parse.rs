use thiserror::Error;

use crate::demo_store::Stage;
use crate::protocol::{FACTS_CLOSE, FACTS_OPEN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedResponse {
    Facts(String),
    Verdict { relevant: bool, reasoning: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unparseable {stage} response: {reason}")]
pub struct Unparseable {
    pub stage: Stage,
    pub reason: &'static str,
}

pub fn parse_judge_response(stage: Stage, raw: &str) -> Result<ParsedResponse, Unparseable> {
    match stage {
        Stage::FactExtraction => parse_facts(raw).map(ParsedResponse::Facts),
        Stage::FactAnnotation => {
            parse_verdict(raw).map(|(relevant, reasoning)| ParsedResponse::Verdict { relevant, reasoning })
        }
    }
}

/// Text between the first `===FACTS===` line and the next `===END===` line.
pub fn parse_facts(raw: &str) -> Result<String, Unparseable> {
    let err = |reason| Unparseable {
        stage: Stage::FactExtraction,
        reason,
    };
    let lines: Vec<&str> = raw.lines().collect();
    let open = lines
        .iter()
        .position(|l| l.trim() == FACTS_OPEN)
        .ok_or(err("no ===FACTS=== line"))?;
    let close = lines[open + 1..]
        .iter()
        .position(|l| l.trim() == FACTS_CLOSE)
        .map(|i| open + 1 + i)
        .ok_or(err("no ===END=== line after ===FACTS==="))?;
    let body = lines[open + 1..close].join("\n").trim().to_owned();
    if body.is_empty() {
        return Err(err("empty facts block"));
    }
    Ok(body)
}

fn verdict_of(line: &str) -> Option<bool> {
    let upper = line.trim().to_uppercase();
    let rest = upper.strip_prefix("VERDICT:")?.trim();
    match rest {
        "RELEVANT" => Some(true),
        "IRRELEVANT" => Some(false),
        _ => None,
    }
}

/// Last `VERDICT: RELEVANT|IRRELEVANT` line; everything before it is reasoning.
pub fn parse_verdict(raw: &str) -> Result<(bool, String), Unparseable> {
    let lines: Vec<&str> = raw.lines().collect();
    let (idx, relevant) = lines
        .iter()
        .enumerate()
        .rev()
        .find_map(|(i, l)| verdict_of(l).map(|v| (i, v)))
        .ok_or(Unparseable {
            stage: Stage::FactAnnotation,
            reason: "no VERDICT line",
        })?;
    Ok((relevant, lines[..idx].join("\n").trim().to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_with_reasoning() {
        assert_eq!(
            parse_judge_response(Stage::FactAnnotation, "analysis...\nVERDICT: RELEVANT").unwrap(),
            ParsedResponse::Verdict {
                relevant: true,
                reasoning: "analysis...".into()
            }
        );
    }

    #[test]
    fn verdict_case_and_whitespace_tolerant() {
        let (rel, reasoning) = parse_verdict("a\nb\n  verdict:   irrelevant  \n\n").unwrap();
        assert!(!rel);
        assert_eq!(reasoning, "a\nb");
    }

    #[test]
    fn last_verdict_line_wins() {
        let (rel, reasoning) =
            parse_verdict("VERDICT: IRRELEVANT was my first guess\nVERDICT: IRRELEVANT\nthen\nVERDICT: RELEVANT").unwrap();
        assert!(rel);
        assert!(reasoning.ends_with("then"));
    }

    #[test]
    fn missing_verdict_is_unparseable() {
        assert!(parse_judge_response(Stage::FactAnnotation, "no verdict here").is_err());
        assert!(parse_verdict("VERDICT: MAYBE").is_err());
    }

    #[test]
    fn facts_block_extracted() {
        assert_eq!(
            parse_judge_response(Stage::FactExtraction, "===FACTS===\nA stole a car\n===END===").unwrap(),
            ParsedResponse::Facts("A stole a car".into())
        );
        assert_eq!(
            parse_facts("preamble\n ===FACTS=== \nline one\nline two\n===END===\ntrailer").unwrap(),
            "line one\nline two"
        );
    }

    #[test]
    fn facts_block_errors() {
        assert!(parse_facts("A stole a car").is_err());
        assert!(parse_facts("===FACTS===\nA stole a car").is_err());
        assert!(parse_facts("===FACTS===\n  \n===END===").is_err());
    }
}
