//! Cases, candidate pools, and gold labels.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::io::{read_json, read_jsonl, ReadError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("label {0} is outside 0..=3")]
    Domain(i64),
}

impl From<ReadError> for CorpusError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Io { path, source } => Self::Io { path, source },
            ReadError::Parse {
                path,
                line,
                message,
            } => Self::Parse {
                path,
                line,
                message,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    /// The fact paragraph. The only text ever shown to a judge.
    pub fact_text: String,
    #[serde(default)]
    pub crime_tags: Vec<String>,
    #[serde(default)]
    pub full_text: Option<String>,
}

impl Case {
    pub fn new(id: impl Into<String>, fact_text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            fact_text: fact_text.into(),
            crime_tags: Vec::new(),
            full_text: None,
        }
    }

    fn nfc(mut self) -> Self {
        self.id = self.id.nfc().collect();
        self.fact_text = self.fact_text.nfc().collect();
        self.crime_tags = self.crime_tags.iter().map(|t| t.nfc().collect()).collect();
        self.full_text = self.full_text.map(|t| t.nfc().collect());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks the per-case invariants. Uniqueness is checked at ingest.
pub fn validate_case(case: &Case) -> Vec<Violation> {
    let mut out = Vec::new();
    if case.id.is_empty() {
        out.push(Violation {
            field: "id",
            rule: "must be nonempty",
        });
    }
    if case.fact_text.trim().is_empty() {
        out.push(Violation {
            field: "fact_text",
            rule: "must be nonempty after trimming whitespace",
        });
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaseStore {
    cases: Vec<Case>,
    by_id: HashMap<String, usize>,
}

impl CaseStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a case after NFC normalization and validation.
    pub fn insert(&mut self, case: Case) -> Result<(), CorpusError> {
        let case = case.nfc();
        if let Some(v) = validate_case(&case).first() {
            return Err(CorpusError::Integrity(format!(
                "case `{}`: {v}",
                case.id
            )));
        }
        if self.by_id.contains_key(&case.id) {
            return Err(CorpusError::Integrity(format!(
                "duplicate case id `{}`",
                case.id
            )));
        }
        self.by_id.insert(case.id.clone(), self.cases.len());
        self.cases.push(case);
        Ok(())
    }

    pub fn from_cases(cases: impl IntoIterator<Item = Case>) -> Result<Self, CorpusError> {
        let mut store = Self::new();
        for c in cases {
            store.insert(c)?;
        }
        Ok(store)
    }

    pub fn get(&self, id: &str) -> Option<&Case> {
        self.by_id.get(id).map(|&i| &self.cases[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Cases in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Case> {
        self.cases.iter()
    }

    pub fn load_jsonl(&mut self, path: &Path) -> Result<(), CorpusError> {
        for (line, case) in read_jsonl::<Case>(path)? {
            self.insert(case).map_err(|e| match e {
                CorpusError::Integrity(msg) => {
                    CorpusError::Integrity(format!("{}:{line}: {msg}", path.display()))
                }
                other => other,
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query_id: String,
    pub candidate_ids: Vec<String>,
}

/// Gold multi-level labels: query id -> candidate id -> label in 0..=3.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Qrels {
    entries: BTreeMap<String, BTreeMap<String, u8>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, candidate_id: &str, label: i64) -> Result<(), CorpusError> {
        if !(0..=3).contains(&label) {
            return Err(CorpusError::Integrity(format!(
                "label {label} for ({query_id}, {candidate_id}) is outside 0..=3"
            )));
        }
        self.entries
            .entry(query_id.to_owned())
            .or_default()
            .insert(candidate_id.to_owned(), label as u8);
        Ok(())
    }

    pub fn get(&self, query_id: &str, candidate_id: &str) -> Option<u8> {
        self.entries.get(query_id)?.get(candidate_id).copied()
    }

    pub fn query(&self, query_id: &str) -> Option<&BTreeMap<String, u8>> {
        self.entries.get(query_id)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, u8>)> {
        self.entries.iter()
    }

    /// Number of (query, candidate) entries.
    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw: BTreeMap<String, BTreeMap<String, i64>> = read_json(path)?;
        let mut q = Self::new();
        for (qid, cands) in raw {
            for (cid, label) in cands {
                q.insert(&qid, &cid, label)?;
            }
        }
        Ok(q)
    }
}

/// Per-fact-type relevance flags; `label = 1*mf + 2*lf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactFlags {
    pub mf_relevant: bool,
    pub lf_relevant: bool,
}

impl FactFlags {
    pub fn label(self) -> u8 {
        u8::from(self.mf_relevant) + 2 * u8::from(self.lf_relevant)
    }
}

pub fn gold_fact_flags(label: i64) -> Result<FactFlags, CorpusError> {
    match label {
        0..=3 => Ok(FactFlags {
            mf_relevant: label & 1 == 1,
            lf_relevant: label & 2 == 2,
        }),
        other => Err(CorpusError::Domain(other)),
    }
}

pub fn label_of(flags: FactFlags) -> u8 {
    flags.label()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub cases: CaseStore,
    pub pools: Vec<CandidatePool>,
    pub qrels: Option<Qrels>,
    /// Non-fatal findings, e.g. qrels entries outside the candidate pool.
    pub warnings: Vec<String>,
}

/// Loads cases (one or more JSONL files), pools, and optional qrels, and
/// checks cross-references.
pub fn ingest_corpus(
    case_paths: &[&Path],
    pools_path: &Path,
    qrels_path: Option<&Path>,
) -> Result<Corpus, CorpusError> {
    let mut cases = CaseStore::new();
    for p in case_paths {
        cases.load_jsonl(p)?;
    }
    let pools: Vec<CandidatePool> = read_json(pools_path)?;
    check_pools(&cases, &pools)?;
    let qrels = qrels_path.map(Qrels::load).transpose()?;
    let warnings = match &qrels {
        Some(q) => check_qrels(&cases, &pools, q)?,
        None => Vec::new(),
    };
    Ok(Corpus {
        cases,
        pools,
        qrels,
        warnings,
    })
}

pub fn check_pools(cases: &CaseStore, pools: &[CandidatePool]) -> Result<(), CorpusError> {
    let mut seen_queries = HashSet::new();
    for pool in pools {
        if !cases.contains(&pool.query_id) {
            return Err(CorpusError::Integrity(format!(
                "pool references unknown query case `{}`",
                pool.query_id
            )));
        }
        if !seen_queries.insert(pool.query_id.as_str()) {
            return Err(CorpusError::Integrity(format!(
                "duplicate pool for query `{}`",
                pool.query_id
            )));
        }
        let mut seen = HashSet::new();
        for cid in &pool.candidate_ids {
            if !cases.contains(cid) {
                return Err(CorpusError::Integrity(format!(
                    "pool `{}` references unknown candidate case `{cid}`",
                    pool.query_id
                )));
            }
            if !seen.insert(cid.as_str()) {
                return Err(CorpusError::Integrity(format!(
                    "pool `{}` lists candidate `{cid}` twice",
                    pool.query_id
                )));
            }
        }
    }
    Ok(())
}

/// Rejects dangling ids; returns warnings for entries outside the pools.
pub fn check_qrels(
    cases: &CaseStore,
    pools: &[CandidatePool],
    qrels: &Qrels,
) -> Result<Vec<String>, CorpusError> {
    let pool_of: HashMap<&str, HashSet<&str>> = pools
        .iter()
        .map(|p| {
            (
                p.query_id.as_str(),
                p.candidate_ids.iter().map(String::as_str).collect(),
            )
        })
        .collect();
    let mut warnings = Vec::new();
    for (qid, cands) in qrels.queries() {
        if !cases.contains(qid) {
            return Err(CorpusError::Integrity(format!(
                "qrels reference unknown query `{qid}`"
            )));
        }
        for cid in cands.keys() {
            if !cases.contains(cid) {
                return Err(CorpusError::Integrity(format!(
                    "qrels ({qid}, {cid}) reference unknown candidate `{cid}`"
                )));
            }
            let in_pool = pool_of.get(qid.as_str()).is_some_and(|p| p.contains(cid.as_str()));
            if !in_pool {
                warnings.push(format!("qrels ({qid}, {cid}) is outside the candidate pool"));
            }
        }
    }
    Ok(warnings)
}

/// Adapters for the LeCaRD layout.
pub mod lecard {
    use super::Case;
    use serde_json::Value;

    fn str_field(v: &Value, key: &str) -> Option<String> {
        v.get(key).and_then(Value::as_str).map(str::to_owned)
    }

    fn id_field(v: &Value, key: &str) -> Option<String> {
        match v.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }

    /// Query line: `{"ridx": .., "q": fact paragraph, "crime": [..]}`.
    pub fn query_case(v: &Value) -> Option<Case> {
        Some(Case {
            id: id_field(v, "ridx")?,
            fact_text: str_field(v, "q")?,
            crime_tags: v
                .get("crime")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(|x| x.as_str().map(str::to_owned)).collect())
                .unwrap_or_default(),
            full_text: None,
        })
    }

    /// Candidate document: `ajjbqk` is the fact paragraph, `qw` the full text.
    pub fn candidate_case(id: &str, v: &Value) -> Option<Case> {
        Some(Case {
            id: id.to_owned(),
            fact_text: str_field(v, "ajjbqk")?,
            crime_tags: Vec::new(),
            full_text: str_field(v, "qw"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn fact_flags_match_label_semantics() {
        assert_eq!(
            gold_fact_flags(0).unwrap(),
            FactFlags { mf_relevant: false, lf_relevant: false }
        );
        assert_eq!(
            gold_fact_flags(1).unwrap(),
            FactFlags { mf_relevant: true, lf_relevant: false }
        );
        assert_eq!(
            gold_fact_flags(2).unwrap(),
            FactFlags { mf_relevant: false, lf_relevant: true }
        );
        assert_eq!(
            gold_fact_flags(3).unwrap(),
            FactFlags { mf_relevant: true, lf_relevant: true }
        );
        assert!(matches!(gold_fact_flags(4), Err(CorpusError::Domain(4))));
        assert!(matches!(gold_fact_flags(-1), Err(CorpusError::Domain(-1))));
    }

    #[test]
    fn label_bijection_is_exhaustive() {
        for label in 0..=3 {
            assert_eq!(label_of(gold_fact_flags(label).unwrap()) as i64, label);
        }
        for mf in [false, true] {
            for lf in [false, true] {
                let f = FactFlags { mf_relevant: mf, lf_relevant: lf };
                assert_eq!(gold_fact_flags(label_of(f) as i64).unwrap(), f);
            }
        }
    }

    #[test]
    fn validate_case_reports_each_field() {
        assert!(validate_case(&Case::new("c1", "facts")).is_empty());
        let v = validate_case(&Case::new("c1", "  "));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "fact_text");
        let v = validate_case(&Case::new("", "facts"));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "id");
    }

    #[test]
    fn nfc_applied_at_insert() {
        let mut store = CaseStore::new();
        // "e" + combining acute accent
        store.insert(Case::new("c", "cafe\u{301}")).unwrap();
        assert_eq!(store.get("c").unwrap().fact_text, "caf\u{e9}");
    }

    struct Fixture {
        _dir: tempfile::TempDir,
        cases: PathBuf,
        pools: PathBuf,
        qrels: PathBuf,
    }

    fn fixture(qrels: &str, pools: &str) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let cases = dir.path().join("cases.jsonl");
        fs::write(
            &cases,
            concat!(
                r#"{"id":"q1","fact_text":"query facts","crime_tags":["theft"],"full_text":null}"#, "\n",
                r#"{"id":"c1","fact_text":"cand one"}"#, "\n",
                r#"{"id":"c2","fact_text":"cand two","crime_tags":[],"full_text":"whole judgment"}"#, "\n",
            ),
        )
        .unwrap();
        let p = dir.path().join("pools.json");
        fs::write(&p, pools).unwrap();
        let q = dir.path().join("qrels.json");
        fs::write(&q, qrels).unwrap();
        Fixture { cases, pools: p, qrels: q, _dir: dir }
    }

    const POOLS: &str = r#"[{"query_id":"q1","candidate_ids":["c1","c2"]}]"#;

    #[test]
    fn ingest_round_trip() {
        let f = fixture(r#"{"q1":{"c1":3,"c2":0}}"#, POOLS);
        let c = ingest_corpus(&[&f.cases], &f.pools, Some(&f.qrels)).unwrap();
        assert_eq!(c.cases.len(), 3);
        assert_eq!(c.pools.len(), 1);
        let q = c.qrels.as_ref().unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.get("q1", "c1"), Some(3));
        assert!(c.warnings.is_empty());

        let again = ingest_corpus(&[&f.cases], &f.pools, Some(&f.qrels)).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn label_out_of_range_names_pair() {
        let f = fixture(r#"{"q1":{"c1":4}}"#, POOLS);
        let err = ingest_corpus(&[&f.cases], &f.pools, Some(&f.qrels)).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, CorpusError::Integrity(_)));
        assert!(msg.contains("q1") && msg.contains("c1") && msg.contains('4'), "{msg}");
    }

    #[test]
    fn dangling_pool_reference_rejected() {
        let f = fixture("{}", r#"[{"query_id":"q1","candidate_ids":["c1","ghost"]}]"#);
        let err = ingest_corpus(&[&f.cases], &f.pools, None).unwrap_err();
        assert!(matches!(err, CorpusError::Integrity(ref m) if m.contains("ghost")));
    }

    #[test]
    fn duplicate_candidate_in_pool_rejected() {
        let f = fixture("{}", r#"[{"query_id":"q1","candidate_ids":["c1","c1"]}]"#);
        assert!(matches!(
            ingest_corpus(&[&f.cases], &f.pools, None),
            Err(CorpusError::Integrity(_))
        ));
    }

    #[test]
    fn qrels_outside_pool_is_a_warning() {
        let f = fixture(
            r#"{"q1":{"c1":1,"c2":2}}"#,
            r#"[{"query_id":"q1","candidate_ids":["c1"]}]"#,
        );
        let c = ingest_corpus(&[&f.cases], &f.pools, Some(&f.qrels)).unwrap();
        assert_eq!(c.warnings.len(), 1);
        assert!(c.warnings[0].contains("c2"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let cases = dir.path().join("cases.jsonl");
        fs::write(&cases, "{\"id\":\"a\",\"fact_text\":\"x\"}\n{\"id\":\"b\"}\n").unwrap();
        let mut store = CaseStore::new();
        match store.load_jsonl(&cases) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_case_id_rejected() {
        let err = CaseStore::from_cases([Case::new("a", "x"), Case::new("a", "y")]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn lecard_adapter_maps_fields() {
        let q: serde_json::Value =
            serde_json::json!({"ridx": 5156, "q": "某某盗窃", "crime": ["盗窃"]});
        let case = lecard::query_case(&q).unwrap();
        assert_eq!(case.id, "5156");
        assert_eq!(case.crime_tags, ["盗窃"]);
        let d: serde_json::Value = serde_json::json!({"ajjbqk": "事实", "qw": "全文"});
        let case = lecard::candidate_case("38633", &d).unwrap();
        assert_eq!(case.fact_text, "事实");
        assert_eq!(case.full_text.as_deref(), Some("全文"));
    }
}
