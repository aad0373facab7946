//! Synthetic training data: sample case pairs, pre-rank them, annotate them
//! with the judge engine, and build/export label-balanced datasets.

mod annotate;
mod dataset;

pub use annotate::{annotate_pairs, read_checkpoint, AnnotateOptions, AnnotatedPair, AnnotationRun};
pub use dataset::{
    build_dataset, export_dataset, label_distribution, largest_remainder_quotas, DatasetMode,
    DatasetSpec, ExportFormat, Manifest,
};

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Case, CaseStore};
use crate::io::ReadError;
use crate::retrieval::{round_sig12, Bm25Index, Bm25Params, Tokenizer};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("need at least 2 cases to form pairs, have {0}")]
    TooFewCases(usize),
    #[error("requested {requested} pairs but only {available} exist")]
    Exhausted { requested: usize, available: usize },
    #[error("scoring pair ({left}, {right}): {message}")]
    Scorer { left: String, right: String, message: String },
    #[error("case `{0}` is not in the case store")]
    UnknownCase(String),
    #[error("not enough pairs with label {label}: short by {shortfall}")]
    InsufficientLabel { label: u8, shortfall: usize },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] ReadError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unordered pair of distinct cases, stored with `left_id < right_id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CasePair {
    pub left_id: String,
    pub right_id: String,
}

impl CasePair {
    /// Canonicalizes the order; `None` when both ids are equal.
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Option<Self> {
        let (a, b) = (a.into(), b.into());
        match a.cmp(&b) {
            Ordering::Less => Some(Self { left_id: a, right_id: b }),
            Ordering::Greater => Some(Self { left_id: b, right_id: a }),
            Ordering::Equal => None,
        }
    }

    pub fn resolve<'a>(&self, store: &'a CaseStore) -> Result<(&'a Case, &'a Case), AugmentError> {
        let get = |id: &str| store.get(id).ok_or_else(|| AugmentError::UnknownCase(id.to_owned()));
        Ok((get(&self.left_id)?, get(&self.right_id)?))
    }
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Number of unordered pairs over `n` items.
pub fn pair_universe(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps `index` in `0..pair_universe(n)` to `(i, j)` with `i < j`, row-major.
pub fn unrank_pair(n: usize, index: usize) -> (usize, usize) {
    // Row i starts at i*(2n - i - 1)/2.
    let start = |i: usize| i * (2 * n - i - 1) / 2;
    let (mut lo, mut hi) = (0, n - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if start(mid) <= index {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = lo;
    (i, i + 1 + index - start(i))
}

/// `n` distinct pairs drawn uniformly without replacement. Ids are ordered
/// before sampling, so the result does not depend on store insertion order.
pub fn sample_pairs(store: &CaseStore, n: usize, seed: u64) -> Result<Vec<CasePair>, AugmentError> {
    if store.len() < 2 {
        return Err(AugmentError::TooFewCases(store.len()));
    }
    let mut ids: Vec<&str> = store.iter().map(|c| c.id.as_str()).collect();
    ids.sort_unstable();
    let available = pair_universe(ids.len());
    if n > available {
        return Err(AugmentError::Exhausted { requested: n, available });
    }
    let mut rng = rng_for(seed);
    Ok(rand::seq::index::sample(&mut rng, available, n)
        .into_iter()
        .map(|k| {
            let (i, j) = unrank_pair(ids.len(), k);
            CasePair {
                left_id: ids[i].to_owned(),
                right_id: ids[j].to_owned(),
            }
        })
        .collect())
}

/// Scores how likely a pair is to be relevant; higher is better.
pub trait PairScorer: Send + Sync {
    fn score(&self, left: &Case, right: &Case) -> Result<f64, String>;
}

/// BM25 of the left fact text against a one-document index of the right.
#[derive(Debug, Clone, Default)]
pub struct Bm25PairScorer {
    pub tokenizer: Tokenizer,
    pub params: Bm25Params,
}

impl PairScorer for Bm25PairScorer {
    fn score(&self, left: &Case, right: &Case) -> Result<f64, String> {
        let doc = self.tokenizer.tokenize(&right.fact_text).map_err(|e| e.to_string())?;
        let query = self.tokenizer.tokenize(&left.fact_text).map_err(|e| e.to_string())?;
        let index = Bm25Index::build([(right.id.clone(), doc)], self.params).map_err(|e| e.to_string())?;
        index.score(&query, &right.id).map_err(|e| e.to_string())
    }
}

/// Pairs by descending score (12 significant digits), ties by pair key;
/// the first `top_n` are kept.
pub fn prerank_pairs(
    pairs: &[CasePair],
    store: &CaseStore,
    scorer: &dyn PairScorer,
    top_n: usize,
) -> Result<Vec<(CasePair, f64)>, AugmentError> {
    if top_n == 0 {
        return Err(AugmentError::InvalidSpec("top_n must be at least 1".into()));
    }
    let mut scored = pairs
        .iter()
        .map(|p| {
            let (l, r) = p.resolve(store)?;
            let s = scorer.score(l, r).map_err(|message| AugmentError::Scorer {
                left: p.left_id.clone(),
                right: p.right_id.clone(),
                message,
            })?;
            Ok((p.clone(), s))
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;
    scored.sort_by(|a, b| {
        round_sig12(b.1)
            .total_cmp(&round_sig12(a.1))
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(top_n);
    Ok(scored)
}
