//! Tokenizers feeding the BM25 index.
//!
//! Three modes are supported:
//!
//! * `whitespace` splits on Unicode whitespace and nothing else.
//! * `cjk_bigram` emits overlapping character bigrams over runs of CJK
//!   ideographs / kana / hangul. Everything else is split on whitespace and
//!   punctuation. A CJK run of a single character is emitted as a unigram.
//! * `external` pipes the text to a configured segmenter command and splits
//!   its stdout on whitespace.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ordered tokens; never contains an empty string.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenStream {
    tokens: Vec<String>,
}

impl TokenStream {
    /// Builds a stream, dropping empty tokens.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            tokens: tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    Whitespace,
    #[default]
    CjkBigram,
    External,
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(Self::Whitespace),
            "cjk_bigram" => Ok(Self::CjkBigram),
            "external" => Ok(Self::External),
            other => Err(format!("unknown tokenizer mode `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExternalTokenizerError {
    #[error("external tokenizer command is not configured")]
    NotConfigured,
    #[error("failed to spawn `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("`{command}` exited with status {status}: {stderr}")]
    NonZeroExit {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("`{command}` timed out after {timeout:?}")]
    Timeout { command: String, timeout: Duration },
    #[error("`{command}` produced non-UTF-8 output")]
    InvalidOutput { command: String },
    #[error("i/o error talking to `{command}`: {source}")]
    Io {
        command: String,
        #[source]
        source: std::io::Error,
    },
}

/// Configured tokenizer. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    mode: TokenizerMode,
    command: Option<String>,
    timeout: Duration,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new(TokenizerMode::CjkBigram)
    }
}

impl Tokenizer {
    pub fn new(mode: TokenizerMode) -> Self {
        Self {
            mode,
            command: None,
            timeout: Duration::from_secs(10),
        }
    }

    /// External mode with a shell command line, e.g. `python3 -m jieba -d " "`.
    pub fn external(command: impl Into<String>) -> Self {
        Self {
            mode: TokenizerMode::External,
            command: Some(command.into()),
            timeout: Duration::from_secs(10),
        }
    }

    pub fn with_command(mut self, command: Option<String>) -> Self {
        self.command = command;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenStream, ExternalTokenizerError> {
        match self.mode {
            TokenizerMode::Whitespace => Ok(whitespace_tokens(text)),
            TokenizerMode::CjkBigram => Ok(cjk_bigram_tokens(text)),
            TokenizerMode::External => {
                let command = self
                    .command
                    .as_deref()
                    .ok_or(ExternalTokenizerError::NotConfigured)?;
                run_external(command, text, self.timeout)
            }
        }
    }
}

pub fn whitespace_tokens(text: &str) -> TokenStream {
    TokenStream::new(text.split_whitespace())
}

/// True for Han ideographs, kana, and hangul syllables.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF     // hiragana, katakana
        | 0x3400..=0x4DBF   // CJK ext A
        | 0x4E00..=0x9FFF   // CJK unified
        | 0xAC00..=0xD7AF   // hangul syllables
        | 0xF900..=0xFAFF   // compatibility ideographs
        | 0x20000..=0x2FA1F // ext B..F, compat supplement
    )
}

pub fn cjk_bigram_tokens(text: &str) -> TokenStream {
    let mut out = Vec::new();
    let mut cjk_run: Vec<char> = Vec::new();
    let mut word = String::new();

    fn flush_run(run: &mut Vec<char>, out: &mut Vec<String>) {
        match run.len() {
            0 => {}
            1 => out.push(run[0].to_string()),
            _ => out.extend(run.windows(2).map(|w| w.iter().collect::<String>())),
        }
        run.clear();
    }
    fn flush_word(word: &mut String, out: &mut Vec<String>) {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    }

    for c in text.chars() {
        if is_cjk(c) {
            flush_word(&mut word, &mut out);
            cjk_run.push(c);
        } else if c.is_alphanumeric() {
            flush_run(&mut cjk_run, &mut out);
            word.push(c);
        } else {
            flush_run(&mut cjk_run, &mut out);
            flush_word(&mut word, &mut out);
        }
    }
    flush_run(&mut cjk_run, &mut out);
    flush_word(&mut word, &mut out);
    TokenStream { tokens: out }
}

fn run_external(
    command: &str,
    text: &str,
    timeout: Duration,
) -> Result<TokenStream, ExternalTokenizerError> {
    let io_err = |source| ExternalTokenizerError::Io {
        command: command.to_owned(),
        source,
    };
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ExternalTokenizerError::Spawn {
            command: command.to_owned(),
            source,
        })?;

    let mut stdin = child.stdin.take().expect("stdin piped");
    let input = text.as_bytes().to_vec();
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(&input);
    });
    let mut stdout = child.stdout.take().expect("stdout piped");
    let reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let mut stderr = child.stderr.take().expect("stderr piped");
    let err_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });

    let deadline = Instant::now() + timeout;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(io_err)? {
            break status;
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ExternalTokenizerError::Timeout {
                command: command.to_owned(),
                timeout,
            });
        }
        std::thread::sleep(Duration::from_millis(2));
    };
    let _ = writer.join();
    let stdout = reader
        .join()
        .expect("stdout reader panicked")
        .map_err(io_err)?;
    let stderr = err_reader.join().unwrap_or_default();

    if !status.success() {
        return Err(ExternalTokenizerError::NonZeroExit {
            command: command.to_owned(),
            status: status.to_string(),
            stderr: stderr.trim().to_owned(),
        });
    }
    let stdout = String::from_utf8(stdout).map_err(|_| ExternalTokenizerError::InvalidOutput {
        command: command.to_owned(),
    })?;
    Ok(whitespace_tokens(&stdout))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(ts: TokenStream) -> Vec<String> {
        ts.into_tokens()
    }

    #[test]
    fn whitespace_collapses_runs() {
        assert_eq!(toks(whitespace_tokens("a b  c")), ["a", "b", "c"]);
        assert!(whitespace_tokens("").is_empty());
        assert!(whitespace_tokens(" \t\n ").is_empty());
    }

    #[test]
    fn cjk_bigrams_overlap() {
        assert_eq!(toks(cjk_bigram_tokens("盗窃罪")), ["盗窃", "窃罪"]);
        assert!(cjk_bigram_tokens("").is_empty());
    }

    #[test]
    fn cjk_single_char_run_is_unigram() {
        assert_eq!(toks(cjk_bigram_tokens("甲 乙丙")), ["甲", "乙丙"]);
    }

    #[test]
    fn cjk_mixed_with_latin_and_punctuation() {
        assert_eq!(
            toks(cjk_bigram_tokens("被告人张三，于2019年盗窃 car-parts。")),
            ["被告", "告人", "人张", "张三", "于", "2019", "年盗", "盗窃", "car", "parts"]
        );
    }

    #[test]
    fn external_tokenizer_splits_stdout() {
        let t = Tokenizer::external("tr ',' ' '");
        assert_eq!(toks(t.tokenize("x,y,z").unwrap()), ["x", "y", "z"]);
    }

    #[test]
    fn external_tokenizer_reports_nonzero_exit() {
        let t = Tokenizer::external("echo boom >&2; exit 3");
        match t.tokenize("x") {
            Err(ExternalTokenizerError::NonZeroExit { stderr, .. }) => assert_eq!(stderr, "boom"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn external_tokenizer_times_out() {
        let t = Tokenizer::external("sleep 5").with_timeout(Duration::from_millis(100));
        assert!(matches!(
            t.tokenize("x"),
            Err(ExternalTokenizerError::Timeout { .. })
        ));
    }

    #[test]
    fn external_without_command_is_an_error() {
        let t = Tokenizer::new(TokenizerMode::External);
        assert!(matches!(
            t.tokenize("x"),
            Err(ExternalTokenizerError::NotConfigured)
        ));
    }
}
