//! TREC run files and NDCG@k.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Qrels;
use crate::retrieval::rank_order;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub candidate_id: String,
    pub score: f64,
    pub rank: u32,
}

/// Ranked candidates per query. Ranks start at 1 and strictly increase;
/// scores never increase down a ranking.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a query ranked by descending score, ties by ascending id.
    pub fn add_scored(&mut self, query_id: impl Into<String>, mut scored: Vec<(String, f64)>) {
        scored.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (candidate_id, score))| RunEntry {
                candidate_id,
                score,
                rank: i as u32 + 1,
            })
            .collect();
        self.queries.insert(query_id.into(), entries);
    }

    /// Adds a query in the given order, scoring n, n-1, ..., 1.
    pub fn add_ordered(&mut self, query_id: impl Into<String>, candidates: &[String]) {
        let n = candidates.len();
        let entries = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| RunEntry {
                candidate_id: c.clone(),
                score: (n - i) as f64,
                rank: i as u32 + 1,
            })
            .collect();
        self.queries.insert(query_id.into(), entries);
    }

    pub fn query(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&String, &Vec<RunEntry>)> {
        self.queries.iter()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Parses `query_id Q0 candidate_id rank score tag` lines.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut lines_of: BTreeMap<String, Vec<(usize, RunEntry)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| EvalError::RunFormat { line: line_no, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", fields.len())));
            }
            let rank: u32 = fields[3]
                .parse()
                .map_err(|_| err(format!("bad rank `{}`", fields[3])))?;
            let score: f64 = fields[4]
                .parse()
                .map_err(|_| err(format!("bad score `{}`", fields[4])))?;
            if !score.is_finite() {
                return Err(err(format!("non-finite score `{}`", fields[4])));
            }
            lines_of.entry(fields[0].to_owned()).or_default().push((
                line_no,
                RunEntry {
                    candidate_id: fields[2].to_owned(),
                    score,
                    rank,
                },
            ));
        }
        let mut queries = BTreeMap::new();
        for (qid, mut entries) in lines_of {
            entries.sort_by_key(|(_, e)| e.rank);
            let mut seen = std::collections::HashSet::new();
            for (pos, (line, e)) in entries.iter().enumerate() {
                let line = *line;
                if pos == 0 && e.rank != 1 {
                    return Err(EvalError::RunFormat {
                        line,
                        message: format!("query {qid}: ranks must start at 1, found {}", e.rank),
                    });
                }
                if pos > 0 {
                    let prev = &entries[pos - 1].1;
                    if e.rank == prev.rank {
                        return Err(EvalError::RunFormat {
                            line,
                            message: format!("query {qid}: rank {} repeated", e.rank),
                        });
                    }
                    if e.score > prev.score {
                        return Err(EvalError::RunFormat {
                            line,
                            message: format!("query {qid}: score increases at rank {}", e.rank),
                        });
                    }
                }
                if !seen.insert(e.candidate_id.clone()) {
                    return Err(EvalError::RunFormat {
                        line,
                        message: format!("query {qid}: candidate {} listed twice", e.candidate_id),
                    });
                }
            }
            queries.insert(qid, entries.into_iter().map(|(_, e)| e).collect());
        }
        Ok(Self { queries })
    }

    pub fn to_trec(&self, tag: &str) -> String {
        let mut out = String::new();
        for (qid, entries) in &self.queries {
            for e in entries {
                writeln!(out, "{qid} Q0 {} {} {} {tag}", e.candidate_id, e.rank, e.score).unwrap();
            }
        }
        out
    }
}

/// Exponential gain, log2(i + 1) discount, over the first `k` labels.
pub fn dcg(labels: &[u8], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &rel)| (2f64.powi(i32::from(rel)) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcgReport {
    pub k: usize,
    /// Mean over evaluated queries; 0 when none were evaluated.
    pub mean: f64,
    pub per_query: BTreeMap<String, f64>,
    /// Queries whose ideal DCG is zero.
    pub skipped: Vec<String>,
}

pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<NdcgReport, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if run.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut per_query = BTreeMap::new();
    let mut skipped = Vec::new();
    for (qid, entries) in run.queries() {
        let gold = qrels.query(qid);
        let mut ideal: Vec<u8> = gold.map(|g| g.values().copied().collect()).unwrap_or_default();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(&ideal, k);
        if idcg == 0.0 {
            skipped.push(qid.clone());
            continue;
        }
        let labels: Vec<u8> = entries
            .iter()
            .map(|e| gold.and_then(|g| g.get(&e.candidate_id).copied()).unwrap_or(0))
            .collect();
        per_query.insert(qid.clone(), dcg(&labels, k) / idcg);
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok(NdcgReport {
        k,
        mean,
        per_query,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn qrels(entries: &[(&str, &str, i64)]) -> Qrels {
        let mut q = Qrels::new();
        for &(a, b, l) in entries {
            q.insert(a, b, l).unwrap();
        }
        q
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ideal_order_scores_one() {
        let q = qrels(&[("q", "a", 3), ("q", "b", 1), ("q", "c", 0), ("q", "d", 2)]);
        let mut run = RunFile::new();
        run.add_ordered("q", &ids(&["a", "d", "b", "c"]));
        let r = ndcg_at_k(&run, &q, 30).unwrap();
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn hand_derived_swap() {
        // gold a=1, b=0; run b, a: DCG = 1/log2(3); IDCG = 1.
        let q = qrels(&[("q", "a", 1), ("q", "b", 0)]);
        let mut run = RunFile::new();
        run.add_ordered("q", &ids(&["b", "a"]));
        let r = ndcg_at_k(&run, &q, 2).unwrap();
        assert_relative_eq!(r.mean, 1.0 / 3f64.log2(), epsilon = 1e-12);
        // cutoff 1 sees only the irrelevant b
        assert_eq!(ndcg_at_k(&run, &q, 1).unwrap().mean, 0.0);
    }

    #[test]
    fn all_zero_query_is_skipped() {
        let q = qrels(&[("q", "a", 0), ("p", "x", 2)]);
        let mut run = RunFile::new();
        run.add_ordered("q", &ids(&["a"]));
        run.add_ordered("p", &ids(&["x"]));
        let r = ndcg_at_k(&run, &q, 5).unwrap();
        assert_eq!(r.skipped, vec!["q".to_string()]);
        assert_eq!(r.per_query.len(), 1);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn unjudged_candidates_count_as_zero() {
        let q = qrels(&[("q", "a", 2)]);
        let mut run = RunFile::new();
        run.add_ordered("q", &ids(&["zz", "a"]));
        let r = ndcg_at_k(&run, &q, 10).unwrap();
        assert_relative_eq!(r.mean, 1.0 / 3f64.log2(), epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(ndcg_at_k(&RunFile::new(), &Qrels::new(), 3), Err(EvalError::EmptyRun)));
        let mut run = RunFile::new();
        run.add_ordered("q", &ids(&["a"]));
        assert!(matches!(ndcg_at_k(&run, &Qrels::new(), 0), Err(EvalError::ZeroK)));
    }

    #[test]
    fn trec_round_trip() {
        let mut run = RunFile::new();
        run.add_scored("q1", vec![("b".into(), 1.5), ("a".into(), 1.5), ("c".into(), 7.25)]);
        run.add_scored("q0", vec![("x".into(), 0.0)]);
        let text = run.to_trec("bm25");
        assert!(text.starts_with("q0 Q0 x 1 0 bm25\nq1 Q0 c 1 7.25 bm25\nq1 Q0 a 2 1.5 bm25\n"));
        assert_eq!(RunFile::parse(&text).unwrap(), run);
    }

    #[test]
    fn parse_rejects_bad_runs() {
        assert!(RunFile::parse("q Q0 a 2 1.0 t\n").is_err());
        assert!(RunFile::parse("q Q0 a 1 1.0 t\nq Q0 b 2 2.0 t\n").is_err());
        assert!(RunFile::parse("q Q0 a 1 1.0 t\nq Q0 b 1 1.0 t\n").is_err());
        assert!(RunFile::parse("q Q0 a 1 1.0 t\nq Q0 a 2 1.0 t\n").is_err());
        assert!(RunFile::parse("q Q0 a one 1.0 t\n").is_err());
        let err = RunFile::parse("q Q0 a 1\n").unwrap_err();
        assert!(matches!(err, EvalError::RunFormat { line: 1, .. }));
        // gaps are allowed, order in the file is not significant
        let run = RunFile::parse("q Q0 b 3 1.0 t\n\nq Q0 a 1 2.0 t\n").unwrap();
        assert_eq!(run.query("q").unwrap()[0].candidate_id, "a");
    }
}
