//! Machine-readable response contract shared by prompts, parser and mock.

pub const FACTS_OPEN: &str = "===FACTS===";
pub const FACTS_CLOSE: &str = "===END===";
pub const VERDICT_RELEVANT: &str = "VERDICT: RELEVANT";
pub const VERDICT_IRRELEVANT: &str = "VERDICT: IRRELEVANT";

/// Block label the engine uses for a single extraction target.
pub const TARGET_BLOCK: &str = "TARGET";
/// Block labels for the two sides of an annotation pair.
pub const CASE_A_BLOCK: &str = "CASE_A";
pub const CASE_B_BLOCK: &str = "CASE_B";

/// Placeholder emitted when an extraction finds nothing.
pub const NO_FACTS: &str = "NONE";

pub fn facts_block(body: &str) -> String {
    format!("{FACTS_OPEN}\n{body}\n{FACTS_CLOSE}")
}

pub fn verdict_line(relevant: bool) -> &'static str {
    if relevant {
        VERDICT_RELEVANT
    } else {
        VERDICT_IRRELEVANT
    }
}
