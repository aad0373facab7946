use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AugmentError, CasePair};
use crate::corpus::{Case, CaseStore};
use crate::io::{to_jsonl, ReadError};
use crate::judge_engine::{ExtractionCache, JudgeEngine, JudgmentRecord, PairOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    pub pair: CasePair,
    pub record: JudgmentRecord,
}

impl AnnotatedPair {
    pub fn label(&self) -> u8 {
        self.record.label
    }
}

#[derive(Debug, Clone)]
pub struct AnnotateOptions {
    pub run_id: String,
    pub parallelism: usize,
    /// Append-only progress log; completed pairs found here are not re-judged.
    pub checkpoint: Option<PathBuf>,
    /// Stop after judging this many new pairs (the rest stay pending).
    pub limit: Option<usize>,
    /// Pairs judged between checkpoint flushes.
    pub batch_size: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self {
            run_id: "augment".into(),
            parallelism: 1,
            checkpoint: None,
            limit: None,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationRun {
    /// One outcome per finished input pair, in input order.
    pub outcomes: Vec<PairOutcome>,
    /// Pairs judged in this call.
    pub newly_judged: usize,
    /// Pairs taken from the checkpoint.
    pub resumed: usize,
    /// Pairs neither resumed nor judged because `limit` was reached.
    pub pending: usize,
}

impl AnnotationRun {
    pub fn annotated(&self) -> Vec<AnnotatedPair> {
        self.outcomes
            .iter()
            .filter_map(PairOutcome::record)
            .map(|r| AnnotatedPair {
                pair: CasePair {
                    left_id: r.query_id.clone(),
                    right_id: r.candidate_id.clone(),
                },
                record: r.clone(),
            })
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.record().is_none()).count()
    }
}

/// Outcomes in a checkpoint file. A torn final line (no trailing newline) is
/// dropped; any other malformed line is an error.
pub fn read_checkpoint(path: &Path) -> Result<Vec<PairOutcome>, ReadError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(ReadError::Io {
                path: path.to_owned(),
                source,
            })
        }
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(o) => out.push(o),
            Err(_) if i + 1 == lines.len() && !complete => {
                log::warn!("{}: dropping torn final line", path.display());
            }
            Err(e) => {
                return Err(ReadError::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn append_lines(path: &Path, outcomes: &[PairOutcome]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    // One write per batch so a crash leaves at most one torn line.
    file.write_all(&to_jsonl(outcomes))?;
    file.sync_data()
}

/// Truncates a torn tail so later appends start on a fresh line.
fn repair_tail(path: &Path) -> std::io::Result<()> {
    let Ok(bytes) = fs::read(path) else {
        return Ok(());
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let file = OpenOptions::new().write(true).open(path)?;
    file.set_len(keep as u64)?;
    file.sync_data()
}

/// Judges each pair as (left = query, right = candidate). Successful pairs
/// in the checkpoint are reused; failed ones are retried.
pub fn annotate_pairs(
    engine: &JudgeEngine,
    store: &CaseStore,
    pairs: &[CasePair],
    opts: &AnnotateOptions,
) -> Result<AnnotationRun, AugmentError> {
    let resolved = pairs
        .iter()
        .map(|p| p.resolve(store))
        .collect::<Result<Vec<(&Case, &Case)>, _>>()?;

    let mut done: HashMap<(String, String), PairOutcome> = HashMap::new();
    if let Some(path) = &opts.checkpoint {
        for o in read_checkpoint(path)? {
            if o.record().is_some() {
                let (q, c) = o.ids();
                done.insert((q.to_owned(), c.to_owned()), o);
            }
        }
        repair_tail(path)?;
    }

    let key = |p: &CasePair| (p.left_id.clone(), p.right_id.clone());
    let mut todo: Vec<usize> = (0..pairs.len()).filter(|&i| !done.contains_key(&key(&pairs[i]))).collect();
    let resumed = pairs.len() - todo.len();
    let pending = match opts.limit {
        Some(limit) if limit < todo.len() => {
            let rest = todo.len() - limit;
            todo.truncate(limit);
            rest
        }
        _ => 0,
    };

    let cache = ExtractionCache::new();
    let mut fresh: HashMap<usize, PairOutcome> = HashMap::new();
    for chunk in todo.chunks(opts.batch_size.max(1)) {
        let batch: Vec<(&Case, &Case)> = chunk.iter().map(|&i| resolved[i]).collect();
        let outcomes = engine.judge_pairs(&batch, &opts.run_id, opts.parallelism, &cache);
        if let Some(path) = &opts.checkpoint {
            append_lines(path, &outcomes)?;
        }
        fresh.extend(chunk.iter().copied().zip(outcomes));
    }

    let newly_judged = fresh.len();
    let outcomes = pairs
        .iter()
        .enumerate()
        .filter_map(|(i, p)| fresh.remove(&i).or_else(|| done.remove(&key(p))))
        .collect();
    Ok(AnnotationRun {
        outcomes,
        newly_judged,
        resumed,
        pending,
    })
}
