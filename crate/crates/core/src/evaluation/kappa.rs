//! Cohen's kappa for two raters, computed with exact integer counts.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Labels attached to (query id, candidate id) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSeries {
    ids: Vec<(String, String)>,
    labels: Vec<i32>,
}

impl LabelSeries {
    pub fn new(ids: Vec<(String, String)>, labels: Vec<i32>) -> Result<Self, EvalError> {
        if ids.len() != labels.len() {
            return Err(EvalError::Alignment(format!(
                "{} ids but {} labels",
                ids.len(),
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id) {
                return Err(EvalError::Alignment(format!("duplicate pair ({}, {})", id.0, id.1)));
            }
        }
        Ok(Self { ids, labels })
    }

    pub fn from_pairs<Q, C>(items: impl IntoIterator<Item = ((Q, C), i32)>) -> Result<Self, EvalError>
    where
        Q: Into<String>,
        C: Into<String>,
    {
        let (ids, labels) = items
            .into_iter()
            .map(|((q, c), l)| ((q.into(), c.into()), l))
            .unzip();
        Self::new(ids, labels)
    }

    /// Convenience for anonymous series: ids are ("", index).
    pub fn from_labels(labels: impl IntoIterator<Item = i32>) -> Self {
        let labels: Vec<i32> = labels.into_iter().collect();
        let ids = (0..labels.len()).map(|i| (String::new(), i.to_string())).collect();
        Self { ids, labels }
    }

    pub fn ids(&self) -> &[(String, String)] {
        &self.ids
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `other`'s labels reordered to follow `self`'s ids.
    pub fn align(&self, other: &LabelSeries) -> Result<Vec<i32>, EvalError> {
        if self.ids == other.ids {
            return Ok(other.labels.clone());
        }
        if self.len() != other.len() {
            return Err(EvalError::Alignment(format!(
                "series have {} and {} pairs",
                self.len(),
                other.len()
            )));
        }
        let lookup: HashMap<&(String, String), i32> =
            other.ids.iter().zip(&other.labels).map(|(id, &l)| (id, l)).collect();
        self.ids
            .iter()
            .map(|id| {
                lookup.get(id).copied().ok_or_else(|| {
                    EvalError::Alignment(format!("pair ({}, {}) missing from second series", id.0, id.1))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaStats {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub n: usize,
    /// Both raters used one class each, and not the same one.
    pub degenerate: bool,
}

pub fn kappa_stats(a: &LabelSeries, b: &LabelSeries) -> Result<KappaStats, EvalError> {
    let b_labels = a.align(b)?;
    kappa_from_labels(a.labels(), &b_labels)
}

pub(crate) fn kappa_from_labels(a: &[i32], b: &[i32]) -> Result<KappaStats, EvalError> {
    if a.is_empty() {
        return Err(EvalError::Alignment("no pairs to compare".into()));
    }
    let n = a.len() as u128;
    let mut ca: BTreeMap<i32, u128> = BTreeMap::new();
    let mut cb: BTreeMap<i32, u128> = BTreeMap::new();
    let mut agree = 0u128;
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        agree += u128::from(x == y);
    }
    let classes: BTreeSet<i32> = ca.keys().chain(cb.keys()).copied().collect();
    let chance: u128 = classes
        .iter()
        .map(|c| ca.get(c).copied().unwrap_or(0) * cb.get(c).copied().unwrap_or(0))
        .sum();
    let nn = n * n;
    let observed_agreement = agree as f64 / n as f64;
    let expected_agreement = chance as f64 / nn as f64;
    let degenerate = ca.len() == 1 && cb.len() == 1 && ca.keys().next() != cb.keys().next();

    let kappa = if chance == nn {
        1.0
    } else {
        // (p_o - p_e) / (1 - p_e) with both terms scaled by n^2.
        let num = (agree * n) as f64 - chance as f64;
        num / (nn - chance) as f64
    };
    if degenerate {
        log::warn!("kappa on constant, disagreeing raters: returning 0");
    }
    Ok(KappaStats {
        kappa,
        observed_agreement,
        expected_agreement,
        n: a.len(),
        degenerate,
    })
}

pub fn cohens_kappa(a: &LabelSeries, b: &LabelSeries) -> Result<f64, EvalError> {
    kappa_stats(a, b).map(|s| s.kappa)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseKappa {
    pub run_a: usize,
    pub run_b: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reliability {
    pub mean_pairwise_kappa: f64,
    pub per_pair: Vec<PairwiseKappa>,
}

/// Kappa for every unordered pair of runs, and their mean.
pub fn reliability_kappa(runs: &[LabelSeries]) -> Result<Reliability, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::Alignment(format!(
            "reliability needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    let mut per_pair = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            per_pair.push(PairwiseKappa {
                run_a: i,
                run_b: j,
                kappa: cohens_kappa(&runs[i], &runs[j])?,
            });
        }
    }
    let mean = per_pair.iter().map(|p| p.kappa).sum::<f64>() / per_pair.len() as f64;
    Ok(Reliability {
        mean_pairwise_kappa: mean,
        per_pair,
    })
}
