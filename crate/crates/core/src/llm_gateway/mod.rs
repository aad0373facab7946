//! Judge backends.
//!
//! Everything that produces text from a prompt implements [`Judge`]. Two
//! backends ship: [`ChatClient`], an OpenAI-style chat-completions client
//! with retry, rate limiting, caching and transcripts; and [`MockJudge`], a
//! deterministic rule-based stand-in used for offline runs and tests.

mod mock;
mod remote;

pub use mock::{mock_complete, mock_tokens, Lexicon, MockJudge, MockJudgeConfig, BUNDLED_LEXICON};
pub use remote::{
    ChatClient, ChatClientBuilder, HttpReply, RateLimiter, ResponseCache, RetryPolicy, Transcript,
    TranscriptEntry, Transport, TransportError, UreqTransport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo_store::{FactType, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub model: String,
    pub max_tokens: u32,
}

impl JudgeRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user_text.is_empty() {
            return Err(GatewayError::InvalidRequest("user_text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Stage marker embedded by the engine, if any.
    pub fn stage(&self) -> Option<(Stage, FactType)> {
        find_stage_marker(&self.user_text).and_then(|m| parse_stage_marker(m).ok())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    pub cached: bool,
    /// Backend attempts made for this response (0 when served from cache).
    pub attempts: u32,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("upstream failure after {attempts} attempt(s): {message}")]
    Upstream { message: String, attempts: u32 },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed stage marker: {0}")]
    MalformedStageMarker(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

/// A text-completion backend. Implementations are shared across workers.
pub trait Judge: Send + Sync {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, GatewayError>;
}

impl<J: Judge + ?Sized> Judge for std::sync::Arc<J> {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, GatewayError> {
        (**self).complete(request)
    }
}

impl<J: Judge + ?Sized> Judge for &J {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, GatewayError> {
        (**self).complete(request)
    }
}

/// One observed call of a [`RecordingJudge`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub stage: Option<(Stage, FactType)>,
    pub request: JudgeRequest,
}

/// Wraps a judge and records every request it forwards.
#[derive(Debug)]
pub struct RecordingJudge<J> {
    inner: J,
    calls: std::sync::Mutex<Vec<RecordedCall>>,
}

impl<J: Judge> RecordingJudge<J> {
    pub fn new(inner: J) -> Self {
        Self {
            inner,
            calls: std::sync::Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().expect("recorder poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("recorder poisoned").len()
    }

    /// Calls whose stage marker matches `stage`.
    pub fn count_stage(&self, stage: Stage) -> usize {
        self.calls
            .lock()
            .expect("recorder poisoned")
            .iter()
            .filter(|c| matches!(c.stage, Some((s, _)) if s == stage))
            .count()
    }

    pub fn stage_sequence(&self) -> Vec<String> {
        self.calls
            .lock()
            .expect("recorder poisoned")
            .iter()
            .map(|c| match c.stage {
                Some((s, f)) => format!("{}_{}", s.code(), f.code()),
                None => "?".into(),
            })
            .collect()
    }

    pub fn reset(&self) {
        self.calls.lock().expect("recorder poisoned").clear();
    }

    pub fn inner(&self) -> &J {
        &self.inner
    }
}

impl<J: Judge> Judge for RecordingJudge<J> {
    fn complete(&self, request: &JudgeRequest) -> Result<JudgeResponse, GatewayError> {
        self.calls.lock().expect("recorder poisoned").push(RecordedCall {
            stage: request.stage(),
            request: request.clone(),
        });
        self.inner.complete(request)
    }
}

pub const STAGE_MARKER_PREFIX: &str = "#STAGE:";

/// `#STAGE:FE_MF` style marker line.
pub fn stage_marker(stage: Stage, fact_type: FactType) -> String {
    format!("{STAGE_MARKER_PREFIX}{}_{}", stage.code(), fact_type.code())
}

fn find_stage_marker(text: &str) -> Option<&str> {
    text.lines()
        .map(str::trim)
        .find(|l| l.starts_with(STAGE_MARKER_PREFIX))
}

fn parse_stage_marker(line: &str) -> Result<(Stage, FactType), GatewayError> {
    let code = line.trim_start_matches(STAGE_MARKER_PREFIX).trim();
    let (stage, ft) = code
        .split_once('_')
        .ok_or_else(|| GatewayError::MalformedStageMarker(line.to_owned()))?;
    let stage = match stage {
        "FE" => Stage::FactExtraction,
        "FA" => Stage::FactAnnotation,
        _ => return Err(GatewayError::MalformedStageMarker(line.to_owned())),
    };
    let ft = match ft {
        "MF" => FactType::Material,
        "LF" => FactType::Legal,
        _ => return Err(GatewayError::MalformedStageMarker(line.to_owned())),
    };
    Ok((stage, ft))
}

/// Reads the stage marker from a prompt.
pub fn read_stage_marker(text: &str) -> Result<(Stage, FactType), GatewayError> {
    let line = find_stage_marker(text)
        .ok_or_else(|| GatewayError::MalformedStageMarker("no #STAGE: line".into()))?;
    parse_stage_marker(line)
}

/// Opening and closing lines of a labelled block, e.g. `<<<TARGET` / `TARGET>>>`.
pub fn block_delimiters(label: &str) -> (String, String) {
    (format!("<<<{label}"), format!("{label}>>>"))
}

/// Wraps `body` in a labelled block.
pub fn wrap_block(label: &str, body: &str) -> String {
    let (open, close) = block_delimiters(label);
    format!("{open}\n{body}\n{close}")
}

/// Body of the last block with this label.
pub fn last_block<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let (open, close) = block_delimiters(label);
    let start = text.rfind(&format!("{open}\n"))? + open.len() + 1;
    let rest = &text[start..];
    let end = rest.find(&format!("\n{close}"))?;
    Some(&rest[..end])
}
