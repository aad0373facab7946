//! Per-pair judging workflow.
//!
//! For a (query, candidate) pair the engine runs, strictly in this order:
//! material-fact extraction for query then candidate, legal-fact extraction
//! (from the extracted material facts) for query then candidate, material-fact
//! annotation, legal-fact annotation. The label is `1*MF + 2*LF`.
//!
//! Demonstrations for each call are picked from the matching library set by
//! BM25 against the call's own input, or at random when matching is ablated.

mod parse;
mod prompt;

pub use parse::{parse_facts, parse_judge_response, parse_verdict, ParsedResponse, Unparseable};
pub use prompt::{
    assemble_prompt, render_demos, render_extraction_target, render_pair_target, TemplateError,
    TemplateSet, DEFAULT_SYSTEM_TEXT, PLACEHOLDERS,
};

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidatePool, Case, CaseStore};
use crate::demo_store::{DemoError, DemoLibrary, Demonstration, FactType, Polarity, Stage};
use crate::io::sha256_fields;
use crate::llm_gateway::{GatewayError, Judge, JudgeRequest};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Random demonstrations instead of BM25 matching.
    #[serde(default)]
    pub disable_adm: bool,
    /// Skip extraction; the raw fact text stands in for both fact types.
    #[serde(default)]
    pub disable_fe: bool,
    /// Annotation prompts carry no demonstrations.
    #[serde(default)]
    pub disable_fa_demos: bool,
}

/// What the annotation-stage demo matching queries with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaMatchQuery {
    /// The two extracted fact texts, concatenated.
    #[default]
    Extracted,
    /// The two raw case fact texts, concatenated.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_k_demos: usize,
    pub fa_demos_per_polarity: usize,
    /// Extra attempts after an unparseable response.
    pub parse_retries: u32,
    pub flags: AblationFlags,
    /// Seed for random demo sampling under `disable_adm`.
    pub seed: u64,
    pub fa_match_query: FaMatchQuery,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.4,
            max_tokens: 1024,
            top_k_demos: 2,
            fa_demos_per_polarity: 2,
            parse_retries: 2,
            flags: AblationFlags::default(),
            seed: 0,
            fa_match_query: FaMatchQuery::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactExtraction {
    pub case_id: String,
    pub fact_type: FactType,
    pub text: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactVerdict {
    pub fact_type: FactType,
    pub relevant: bool,
    pub reasoning: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub query_id: String,
    pub candidate_id: String,
    /// (query, candidate)
    pub mf_extractions: (FactExtraction, FactExtraction),
    /// (query, candidate)
    pub lf_extractions: (FactExtraction, FactExtraction),
    pub mf_verdict: FactVerdict,
    pub lf_verdict: FactVerdict,
    pub label: u8,
    pub run_id: String,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedPair {
    pub query_id: String,
    pub candidate_id: String,
    pub run_id: String,
    pub error: String,
}

/// One line of a judgments file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum PairOutcome {
    Ok(JudgmentRecord),
    Failed(FailedPair),
}

impl PairOutcome {
    pub fn ids(&self) -> (&str, &str) {
        match self {
            Self::Ok(r) => (&r.query_id, &r.candidate_id),
            Self::Failed(f) => (&f.query_id, &f.candidate_id),
        }
    }

    pub fn run_id(&self) -> &str {
        match self {
            Self::Ok(r) => &r.run_id,
            Self::Failed(f) => &f.run_id,
        }
    }

    pub fn record(&self) -> Option<&JudgmentRecord> {
        match self {
            Self::Ok(r) => Some(r),
            Self::Failed(_) => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{stage}/{fact_type}: response unparseable after {attempts} attempt(s): {reason}")]
    Unparseable {
        stage: Stage,
        fact_type: FactType,
        attempts: u32,
        reason: &'static str,
        raw: String,
    },
    #[error("{stage}/{fact_type}: {source}")]
    Upstream {
        stage: Stage,
        fact_type: FactType,
        #[source]
        source: GatewayError,
    },
    #[error("{stage}/{fact_type}: demonstration selection failed: {source}")]
    Demo {
        stage: Stage,
        fact_type: FactType,
        #[source]
        source: DemoError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

pub fn aggregate_label(mf: &FactVerdict, lf: &FactVerdict) -> u8 {
    u8::from(mf.relevant) + 2 * u8::from(lf.relevant)
}

const FORMAT_REMINDER_FE: &str = "\n\nREMINDER: your previous answer could not be read. Put the extracted facts between a line `===FACTS===` and a line `===END===`.";
const FORMAT_REMINDER_FA: &str = "\n\nREMINDER: your previous answer could not be read. End with exactly one line `VERDICT: RELEVANT` or `VERDICT: IRRELEVANT`.";

type Slot = Arc<Mutex<Option<FactExtraction>>>;

/// Memoized extractions keyed by (case id, fact type). One writer per key;
/// concurrent readers of the same key wait for it.
#[derive(Debug, Default)]
pub struct ExtractionCache {
    slots: Mutex<HashMap<(String, FactType), Slot>>,
}

impl ExtractionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_try_insert<E>(
        &self,
        case_id: &str,
        fact_type: FactType,
        compute: impl FnOnce() -> Result<FactExtraction, E>,
    ) -> Result<FactExtraction, E> {
        let slot = {
            let mut slots = self.slots.lock().expect("cache poisoned");
            slots
                .entry((case_id.to_owned(), fact_type))
                .or_default()
                .clone()
        };
        let mut guard = slot.lock().expect("cache slot poisoned");
        if let Some(hit) = guard.as_ref() {
            return Ok(hit.clone());
        }
        let value = compute()?;
        *guard = Some(value.clone());
        Ok(value)
    }

    pub fn len(&self) -> usize {
        let slots = self.slots.lock().expect("cache poisoned");
        slots
            .values()
            .filter(|s| s.lock().map(|g| g.is_some()).unwrap_or(false))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct JudgeEngine {
    judge: Arc<dyn Judge>,
    library: Arc<DemoLibrary>,
    templates: Arc<TemplateSet>,
    settings: EngineSettings,
    fingerprint: String,
}

impl std::fmt::Debug for JudgeEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JudgeEngine")
            .field("settings", &self.settings)
            .field("fingerprint", &self.fingerprint)
            .finish_non_exhaustive()
    }
}

impl JudgeEngine {
    pub fn new(
        judge: Arc<dyn Judge>,
        library: Arc<DemoLibrary>,
        templates: Arc<TemplateSet>,
        settings: EngineSettings,
    ) -> Self {
        let fingerprint = config_fingerprint(&settings, &templates, &library);
        Self {
            judge,
            library,
            templates,
            settings,
            fingerprint,
        }
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn flags(&self) -> AblationFlags {
        self.settings.flags
    }

    pub fn config_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn request(&self, user_text: String) -> JudgeRequest {
        JudgeRequest {
            system_text: self.templates.system_text.clone(),
            user_text,
            temperature: self.settings.temperature,
            model: self.settings.model.clone(),
            max_tokens: self.settings.max_tokens,
        }
    }

    fn select_demos(
        &self,
        x: &str,
        stage: Stage,
        fact_type: FactType,
        polarity: Option<Polarity>,
        k: usize,
    ) -> Result<Vec<&Demonstration>, EngineError> {
        let demo_err = |source| EngineError::Demo {
            stage,
            fact_type,
            source,
        };
        if self.settings.flags.disable_adm {
            return self
                .library
                .random_select(x, stage, fact_type, polarity, k, self.settings.seed)
                .map_err(demo_err);
        }
        match polarity {
            None => self.library.adm_select(x, stage, fact_type, k),
            Some(p) => self.library.adm_select_polarity(x, fact_type, p, k),
        }
        .map_err(demo_err)
    }

    /// Sends the prompt, re-asking with a format reminder while the response
    /// stays unparseable.
    fn ask<T>(
        &self,
        stage: Stage,
        fact_type: FactType,
        prompt: String,
        parse: impl Fn(&str) -> Result<T, Unparseable>,
    ) -> Result<(T, String), EngineError> {
        let reminder = match stage {
            Stage::FactExtraction => FORMAT_REMINDER_FE,
            Stage::FactAnnotation => FORMAT_REMINDER_FA,
        };
        let mut user_text = prompt;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let resp = self
                .judge
                .complete(&self.request(user_text.clone()))
                .map_err(|source| EngineError::Upstream {
                    stage,
                    fact_type,
                    source,
                })?;
            match parse(&resp.text) {
                Ok(v) => return Ok((v, resp.text)),
                Err(e) if attempt > self.settings.parse_retries => {
                    return Err(EngineError::Unparseable {
                        stage,
                        fact_type,
                        attempts: attempt,
                        reason: e.reason,
                        raw: resp.text,
                    })
                }
                Err(e) => {
                    log::debug!("{stage}/{fact_type}: attempt {attempt} unparseable ({})", e.reason);
                    if attempt == 1 {
                        user_text.push_str(reminder);
                    }
                }
            }
        }
    }

    /// Material facts come from the case text; legal facts from the
    /// previously extracted material facts.
    pub fn extract_fact(
        &self,
        case: &Case,
        fact_type: FactType,
        prior_mf: Option<&FactExtraction>,
    ) -> Result<FactExtraction, EngineError> {
        if self.settings.flags.disable_fe {
            return Ok(FactExtraction {
                case_id: case.id.clone(),
                fact_type,
                text: case.fact_text.clone(),
                raw_response: String::new(),
            });
        }
        let input = match fact_type {
            FactType::Material => case.fact_text.as_str(),
            FactType::Legal => {
                let mf = prior_mf.ok_or_else(|| {
                    EngineError::Precondition(format!(
                        "legal-fact extraction for `{}` needs its material-fact extraction",
                        case.id
                    ))
                })?;
                if mf.fact_type != FactType::Material || mf.case_id != case.id {
                    return Err(EngineError::Precondition(format!(
                        "prior extraction ({}, {}) does not match material facts of `{}`",
                        mf.case_id, mf.fact_type, case.id
                    )));
                }
                mf.text.as_str()
            }
        };
        let stage = Stage::FactExtraction;
        let demos = self.select_demos(input, stage, fact_type, None, self.settings.top_k_demos)?;
        let prompt =
            self.templates
                .assemble(stage, fact_type, &demos, &render_extraction_target(input))?;
        let (text, raw) = self.ask(stage, fact_type, prompt, parse_facts)?;
        Ok(FactExtraction {
            case_id: case.id.clone(),
            fact_type,
            text,
            raw_response: raw,
        })
    }

    pub fn judge_fact_pair(
        &self,
        a: &FactExtraction,
        b: &FactExtraction,
        fact_type: FactType,
    ) -> Result<FactVerdict, EngineError> {
        let match_text = format!("{}\n{}", a.text, b.text);
        self.judge_fact_pair_with(a, b, fact_type, &match_text)
    }

    fn judge_fact_pair_with(
        &self,
        a: &FactExtraction,
        b: &FactExtraction,
        fact_type: FactType,
        match_text: &str,
    ) -> Result<FactVerdict, EngineError> {
        if a.fact_type != fact_type || b.fact_type != fact_type {
            return Err(EngineError::Precondition(format!(
                "annotation of {fact_type} given {} and {} extractions",
                a.fact_type, b.fact_type
            )));
        }
        let stage = Stage::FactAnnotation;
        let mut demos = Vec::new();
        if !self.settings.flags.disable_fa_demos && self.settings.fa_demos_per_polarity > 0 {
            for pol in [Polarity::Relevant, Polarity::Irrelevant] {
                demos.extend(self.select_demos(
                    match_text,
                    stage,
                    fact_type,
                    Some(pol),
                    self.settings.fa_demos_per_polarity,
                )?);
            }
        }
        let prompt = self.templates.assemble(
            stage,
            fact_type,
            &demos,
            &render_pair_target(&a.text, &b.text),
        )?;
        let ((relevant, reasoning), raw) = self.ask(stage, fact_type, prompt, parse_verdict)?;
        Ok(FactVerdict {
            fact_type,
            relevant,
            reasoning,
            raw_response: raw,
        })
    }

    pub fn judge_pair(
        &self,
        query: &Case,
        candidate: &Case,
        run_id: &str,
    ) -> Result<JudgmentRecord, EngineError> {
        self.judge_pair_cached(query, candidate, run_id, None)
    }

    /// As [`judge_pair`](Self::judge_pair), reusing extractions from `cache`.
    pub fn judge_pair_cached(
        &self,
        query: &Case,
        candidate: &Case,
        run_id: &str,
        cache: Option<&ExtractionCache>,
    ) -> Result<JudgmentRecord, EngineError> {
        let extract = |case: &Case, ft: FactType, prior: Option<&FactExtraction>| match cache {
            Some(c) => c.get_or_try_insert(&case.id, ft, || self.extract_fact(case, ft, prior)),
            None => self.extract_fact(case, ft, prior),
        };
        let q_mf = extract(query, FactType::Material, None)?;
        let c_mf = extract(candidate, FactType::Material, None)?;
        let q_lf = extract(query, FactType::Legal, Some(&q_mf))?;
        let c_lf = extract(candidate, FactType::Legal, Some(&c_mf))?;

        let (mf_match, lf_match) = match self.settings.fa_match_query {
            FaMatchQuery::Extracted => (
                format!("{}\n{}", q_mf.text, c_mf.text),
                format!("{}\n{}", q_lf.text, c_lf.text),
            ),
            FaMatchQuery::Raw => {
                let raw = format!("{}\n{}", query.fact_text, candidate.fact_text);
                (raw.clone(), raw)
            }
        };
        let mf_verdict = self.judge_fact_pair_with(&q_mf, &c_mf, FactType::Material, &mf_match)?;
        let lf_verdict = self.judge_fact_pair_with(&q_lf, &c_lf, FactType::Legal, &lf_match)?;
        let label = aggregate_label(&mf_verdict, &lf_verdict);

        Ok(JudgmentRecord {
            query_id: query.id.clone(),
            candidate_id: candidate.id.clone(),
            mf_extractions: (q_mf, c_mf),
            lf_extractions: (q_lf, c_lf),
            mf_verdict,
            lf_verdict,
            label,
            run_id: run_id.to_owned(),
            config_fingerprint: self.fingerprint.clone(),
        })
    }

    /// Judges many pairs under a bounded worker budget. Output order follows
    /// input order regardless of completion order; failures become
    /// [`PairOutcome::Failed`].
    pub fn judge_pairs(
        &self,
        pairs: &[(&Case, &Case)],
        run_id: &str,
        parallelism: usize,
        cache: &ExtractionCache,
    ) -> Vec<PairOutcome> {
        let one = |&(q, c): &(&Case, &Case)| match self.judge_pair_cached(q, c, run_id, Some(cache)) {
            Ok(r) => PairOutcome::Ok(r),
            Err(e) => {
                log::warn!("pair ({}, {}) failed: {e}", q.id, c.id);
                PairOutcome::Failed(FailedPair {
                    query_id: q.id.clone(),
                    candidate_id: c.id.clone(),
                    run_id: run_id.to_owned(),
                    error: e.to_string(),
                })
            }
        };
        if parallelism <= 1 {
            return pairs.iter().map(one).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .expect("thread pool");
        pool.install(|| pairs.par_iter().map(one).collect())
    }

    /// Judges the first `top_n` candidates of `pool`, in pool order.
    #[allow(clippy::too_many_arguments)]
    pub fn judge_query(
        &self,
        query: &Case,
        pool: &CandidatePool,
        cases: &CaseStore,
        top_n: usize,
        run_id: &str,
        parallelism: usize,
        cache: &ExtractionCache,
    ) -> Result<Vec<PairOutcome>, EngineError> {
        if top_n == 0 {
            return Err(EngineError::Precondition("top_n must be at least 1".into()));
        }
        let candidates = pool
            .candidate_ids
            .iter()
            .take(top_n)
            .map(|id| {
                cases.get(id).ok_or_else(|| {
                    EngineError::Precondition(format!("candidate `{id}` is not in the case store"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let pairs: Vec<(&Case, &Case)> = candidates.into_iter().map(|c| (query, c)).collect();
        Ok(self.judge_pairs(&pairs, run_id, parallelism, cache))
    }
}

/// Digest of everything that determines a judgment besides the inputs.
pub fn config_fingerprint(
    settings: &EngineSettings,
    templates: &TemplateSet,
    library: &DemoLibrary,
) -> String {
    let settings_json = serde_json::to_vec(settings).expect("serializable");
    sha256_fields([
        settings_json.as_slice(),
        templates.content_hash().as_bytes(),
        library.content_hash().as_bytes(),
    ])
}
