//! Agreement statistics, confusion matrices and ranking metrics.

mod confusion;
mod kappa;
mod ndcg;

pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use kappa::{
    cohens_kappa, kappa_stats, reliability_kappa, KappaStats, LabelSeries, PairwiseKappa, Reliability,
};
pub use ndcg::{dcg, ndcg_at_k, NdcgReport, RunEntry, RunFile};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{gold_fact_flags, Qrels};
use crate::judge_engine::JudgmentRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("series misaligned: {0}")]
    Alignment(String),
    #[error("no gold label for pair ({query_id}, {candidate_id})")]
    MissingGold { query_id: String, candidate_id: String },
    #[error("label {label} is not one of the classes {classes:?}")]
    Domain { label: i32, classes: Vec<i32> },
    #[error("run contains no queries")]
    EmptyRun,
    #[error("run file line {line}: {message}")]
    RunFormat { line: usize, message: String },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub kappa_mf: f64,
    pub kappa_lf: f64,
    pub kappa_4level: f64,
    pub pairs: usize,
}

/// The three judged-vs-gold series (MF flag, LF flag, 4-level label), in
/// record order.
pub fn judged_and_gold_series(
    judged: &[JudgmentRecord],
    qrels: &Qrels,
) -> Result<[(LabelSeries, LabelSeries); 3], EvalError> {
    let mut ids = Vec::with_capacity(judged.len());
    let mut j = [Vec::new(), Vec::new(), Vec::new()];
    let mut g = [Vec::new(), Vec::new(), Vec::new()];
    for r in judged {
        let gold = qrels
            .get(&r.query_id, &r.candidate_id)
            .ok_or_else(|| EvalError::MissingGold {
                query_id: r.query_id.clone(),
                candidate_id: r.candidate_id.clone(),
            })?;
        let flags = gold_fact_flags(i64::from(gold)).expect("qrels hold labels in 0..=3");
        ids.push((r.query_id.clone(), r.candidate_id.clone()));
        j[0].push(i32::from(r.mf_verdict.relevant));
        j[1].push(i32::from(r.lf_verdict.relevant));
        j[2].push(i32::from(r.label));
        g[0].push(i32::from(flags.mf_relevant));
        g[1].push(i32::from(flags.lf_relevant));
        g[2].push(i32::from(gold));
    }
    let [j0, j1, j2] = j;
    let [g0, g1, g2] = g;
    Ok([
        (LabelSeries::new(ids.clone(), j0)?, LabelSeries::new(ids.clone(), g0)?),
        (LabelSeries::new(ids.clone(), j1)?, LabelSeries::new(ids.clone(), g1)?),
        (LabelSeries::new(ids.clone(), j2)?, LabelSeries::new(ids, g2)?),
    ])
}

/// Kappa of judged MF flags, LF flags and 4-level labels against gold.
pub fn validity_kappa(judged: &[JudgmentRecord], qrels: &Qrels) -> Result<Validity, EvalError> {
    let [mf, lf, four] = judged_and_gold_series(judged, qrels)?;
    Ok(Validity {
        kappa_mf: cohens_kappa(&mf.0, &mf.1)?,
        kappa_lf: cohens_kappa(&lf.0, &lf.1)?,
        kappa_4level: cohens_kappa(&four.0, &four.1)?,
        pairs: judged.len(),
    })
}

/// Label series of one run, keyed by pair.
pub fn label_series(records: &[JudgmentRecord]) -> Result<LabelSeries, EvalError> {
    LabelSeries::new(
        records
            .iter()
            .map(|r| (r.query_id.clone(), r.candidate_id.clone()))
            .collect(),
        records.iter().map(|r| i32::from(r.label)).collect(),
    )
}
