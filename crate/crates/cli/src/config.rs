//! Layered configuration: built-in defaults, then a JSON file, then
//! `key=value` overrides. Files may nest objects or use dotted keys.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config key `{key}`: {message}")]
    Key { key: String, message: String },
}

fn key_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.to_owned(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub requests_per_minute: Option<u32>,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeConfig {
    pub temperature: f64,
    pub top_k_demos: usize,
    pub fa_demos_per_polarity: usize,
    pub runs: usize,
    pub top_n_candidates: usize,
    /// Re-asks after an unparseable response.
    pub retry: u32,
    pub seed: u64,
    /// `extracted` or `raw`.
    pub fa_match_query: String,
    pub demos_path: Option<String>,
    pub templates_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub temperature: f64,
    pub pairs: usize,
    pub prerank_top: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Config {
    pub k1: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    /// `whitespace`, `cjk_bigram` or `external`.
    pub mode: String,
    pub command: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    pub mf_jaccard_threshold: f64,
    pub lexicon_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    pub enabled: bool,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub disable_adm: bool,
    pub disable_fe: bool,
    pub disable_fa_demos: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub api: ApiConfig,
    pub judge: JudgeConfig,
    pub augment: AugmentConfig,
    pub bm25: Bm25Config,
    pub tokenizer: TokenizerConfig,
    pub mock: MockConfig,
    pub parallelism: usize,
    pub cache: CacheConfig,
    pub ablation: AblationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            api: ApiConfig {
                base_url: "https://api.openai.com/v1".into(),
                model: "gpt-3.5-turbo".into(),
                key_env: "OPENAI_API_KEY".into(),
                timeout_secs: 60,
                max_retries: 4,
                requests_per_minute: None,
                max_tokens: 1024,
            },
            judge: JudgeConfig {
                temperature: 0.4,
                top_k_demos: 2,
                fa_demos_per_polarity: 2,
                runs: 3,
                top_n_candidates: 30,
                retry: 2,
                seed: 0,
                fa_match_query: "extracted".into(),
                demos_path: None,
                templates_dir: None,
            },
            augment: AugmentConfig {
                temperature: 0.5,
                pairs: 200_000,
                prerank_top: 50_000,
                seed: 0,
            },
            bm25: Bm25Config { k1: 1.2, b: 0.75 },
            tokenizer: TokenizerConfig {
                mode: "cjk_bigram".into(),
                command: None,
            },
            mock: MockConfig {
                mf_jaccard_threshold: 0.4,
                lexicon_path: None,
            },
            parallelism: 4,
            cache: CacheConfig {
                enabled: false,
                dir: ".factjudge-cache".into(),
            },
            ablation: AblationConfig {
                disable_adm: false,
                disable_fe: false,
                disable_fa_demos: false,
            },
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, t) in [
            ("judge.temperature", self.judge.temperature),
            ("augment.temperature", self.augment.temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return Err(key_err(key, format!("{t} is outside [0, 2]")));
            }
        }
        let positive = [
            ("parallelism", self.parallelism),
            ("judge.runs", self.judge.runs),
            ("judge.top_n_candidates", self.judge.top_n_candidates),
            ("judge.top_k_demos", self.judge.top_k_demos),
            ("augment.pairs", self.augment.pairs),
            ("augment.prerank_top", self.augment.prerank_top),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(key_err(key, "must be at least 1"));
            }
        }
        if self.bm25.k1.is_nan() || self.bm25.k1 < 0.0 {
            return Err(key_err("bm25.k1", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.bm25.b) {
            return Err(key_err("bm25.b", "must be within [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.mock.mf_jaccard_threshold) {
            return Err(key_err("mock.mf_jaccard_threshold", "must be within [0, 1]"));
        }
        if !["whitespace", "cjk_bigram", "external"].contains(&self.tokenizer.mode.as_str()) {
            return Err(key_err("tokenizer.mode", format!("unknown mode `{}`", self.tokenizer.mode)));
        }
        if self.tokenizer.mode == "external" && self.tokenizer.command.is_none() {
            return Err(key_err("tokenizer.command", "required when tokenizer.mode is external"));
        }
        if !["extracted", "raw"].contains(&self.judge.fa_match_query.as_str()) {
            return Err(key_err(
                "judge.fa_match_query",
                format!("expected `extracted` or `raw`, got `{}`", self.judge.fa_match_query),
            ));
        }
        Ok(())
    }
}

fn same_kind(default: &Value, new: &Value) -> bool {
    match (default, new) {
        // optional settings accept any scalar
        (Value::Null, _) | (_, Value::Null) => !new.is_object() && !new.is_array(),
        (Value::Number(d), Value::Number(n)) => !(d.is_u64() && !n.is_u64()),
        (Value::String(_), Value::String(_)) | (Value::Bool(_), Value::Bool(_)) => true,
        _ => false,
    }
}

/// Sets a dotted key in `root`, checking it names a known setting of the
/// right kind.
fn set_key(root: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| key_err(key, "not a known setting"))?;
        let slot = obj.get_mut(*part).ok_or_else(|| key_err(key, "not a known setting"))?;
        if i + 1 == parts.len() {
            if slot.is_object() {
                let Value::Object(map) = value else {
                    return Err(key_err(key, "is a section, not a value"));
                };
                for (k, v) in map {
                    set_key(slot, &k, v).map_err(|e| match e {
                        ConfigError::Key { message, .. } => key_err(&format!("{key}.{k}"), message),
                        other => other,
                    })?;
                }
                return Ok(());
            }
            if !same_kind(slot, &value) {
                return Err(key_err(key, format!("expected a value like {slot}, got {value}")));
            }
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

fn merge_object(root: &mut Value, obj: Map<String, Value>) -> Result<(), ConfigError> {
    for (k, v) in obj {
        set_key(root, &k, v)?;
    }
    Ok(())
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_override(raw: &str) -> Result<(String, Value), ConfigError> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| key_err(raw, "override must look like key=value"))?;
    let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_owned()));
    Ok((k.trim().to_owned(), value))
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Config, ConfigError> {
    let mut root = serde_json::to_value(Config::default()).expect("serializable");
    if let Some(path) = path {
        let read_err = |message: String| ConfigError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        if !text.trim().is_empty() {
            let file: Value = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
            let Value::Object(obj) = file else {
                return Err(read_err("top level must be an object".into()));
            };
            merge_object(&mut root, obj)?;
        }
    }
    for raw in overrides {
        let (k, v) = parse_override(raw)?;
        set_key(&mut root, &k, v)?;
    }
    let config: Config = serde_json::from_value(root).map_err(|e| key_err("<root>", e.to_string()))?;
    config.validate()?;
    Ok(config)
}
