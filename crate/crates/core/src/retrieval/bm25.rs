//! Okapi BM25 over an in-memory inverted index.
//!
//! idf(t) = ln(1 + (N - n_t + 0.5) / (n_t + 0.5)), which is always positive,
//! so scores are non-negative. Repeated query terms contribute once per
//! occurrence.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tokenize::TokenStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("unknown document `{0}`")]
    UnknownDoc(String),
    #[error("duplicate document id `{0}`")]
    DuplicateDoc(String),
    #[error("index is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable inverted index. Build once, score concurrently.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lookup: HashMap<String, u32>,
    doc_lens: Vec<u32>,
    avg_doc_len: f64,
    postings: HashMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build<I, S>(docs: I, params: Bm25Params) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (S, TokenStream)>,
        S: Into<String>,
    {
        let mut doc_ids = Vec::new();
        let mut doc_lookup = HashMap::new();
        let mut doc_lens = Vec::new();
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();

        for (id, tokens) in docs {
            let id = id.into();
            let doc = doc_ids.len() as u32;
            if doc_lookup.insert(id.clone(), doc).is_some() {
                return Err(IndexError::DuplicateDoc(id));
            }
            doc_ids.push(id);
            doc_lens.push(tokens.len() as u32);

            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens.tokens() {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, tf) in tf {
                postings
                    .entry(term.to_owned())
                    .or_default()
                    .push(Posting { doc, tf });
            }
        }
        if doc_ids.is_empty() {
            return Err(IndexError::Empty);
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / doc_ids.len() as f64;

        Ok(Self {
            params,
            doc_ids,
            doc_lookup,
            doc_lens,
            avg_doc_len,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u32> {
        self.doc_lookup
            .get(doc_id)
            .map(|&d| self.doc_lens[d as usize])
    }

    /// Number of documents containing `term`.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_freq(&self, term: &str, doc_id: &str) -> u32 {
        let Some(&doc) = self.doc_lookup.get(doc_id) else {
            return 0;
        };
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&doc, |p| p.doc).ok().map(|i| p[i].tf))
            .unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn length_norm(&self, doc: u32) -> f64 {
        // An index of all-empty documents has avg 0; treat every length as average.
        if self.avg_doc_len > 0.0 {
            self.doc_lens[doc as usize] as f64 / self.avg_doc_len
        } else {
            1.0
        }
    }

    fn term_weight(&self, tf: u32, doc: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * self.length_norm(doc)))
    }

    pub fn score(&self, query: &TokenStream, doc_id: &str) -> Result<f64, IndexError> {
        let &doc = self
            .doc_lookup
            .get(doc_id)
            .ok_or_else(|| IndexError::UnknownDoc(doc_id.to_owned()))?;
        let mut score = 0.0;
        for (term, qtf) in query_terms(query) {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            if let Ok(i) = postings.binary_search_by_key(&doc, |p| p.doc) {
                score += qtf as f64 * self.idf(term) * self.term_weight(postings[i].tf, doc);
            }
        }
        Ok(score)
    }

    /// Scores every document (term-at-a-time accumulation).
    pub fn score_all(&self, query: &TokenStream) -> Vec<(String, f64)> {
        let mut acc = vec![0.0f64; self.doc_count()];
        for (term, qtf) in query_terms(query) {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for p in postings {
                acc[p.doc as usize] += qtf as f64 * idf * self.term_weight(p.tf, p.doc);
            }
        }
        self.doc_ids.iter().cloned().zip(acc).collect()
    }

    /// Top `k` documents, descending score, ties by ascending doc id.
    pub fn top_k(&self, query: &TokenStream, k: usize) -> Vec<(String, f64)> {
        let mut scored = self.score_all(query);
        scored.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        scored.truncate(k);
        scored
    }
}

/// Distinct query terms in sorted order with their multiplicity. Summing in
/// a fixed order makes scores exactly invariant under query permutation.
fn query_terms(query: &TokenStream) -> BTreeMap<&str, u32> {
    let mut terms = BTreeMap::new();
    for t in query.tokens() {
        *terms.entry(t.as_str()).or_insert(0) += 1;
    }
    terms
}

/// Rounds to 12 significant digits so near-equal scores compare as ties.
pub fn round_sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Descending score (after 12-digit rounding), then ascending id.
pub fn rank_order(score_a: f64, id_a: &str, score_b: f64, id_b: &str) -> Ordering {
    round_sig12(score_b)
        .partial_cmp(&round_sig12(score_a))
        .unwrap_or(Ordering::Equal)
        .then_with(|| id_a.cmp(id_b))
}
