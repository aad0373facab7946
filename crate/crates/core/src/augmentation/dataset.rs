use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{rng_for, AnnotatedPair, AugmentError};
use crate::corpus::CaseStore;
use crate::io::{sha256_hex, to_jsonl, write_atomic, write_json_atomic};
use crate::protocol::{facts_block, verdict_line};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    DistributionMatched,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub size: usize,
    pub mode: DatasetMode,
    /// label -> fraction; required for distribution matching.
    #[serde(default)]
    pub target_distribution: Option<BTreeMap<u8, f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidSpec(m));
        if self.size == 0 {
            return bad("size must be at least 1".into());
        }
        match (self.mode, &self.target_distribution) {
            (DatasetMode::DistributionMatched, None) => {
                bad("distribution_matched needs target_distribution".into())
            }
            (_, Some(dist)) => {
                if let Some((l, f)) = dist.iter().find(|(l, f)| **l > 3 || !(0.0..=1.0).contains(*f)) {
                    return bad(format!("bad entry {l}: {f}"));
                }
                let sum: f64 = dist.values().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return bad(format!("fractions sum to {sum}, not 1"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Fraction of each label among `labels`.
pub fn label_distribution(labels: impl IntoIterator<Item = u8>) -> BTreeMap<u8, f64> {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    let mut n = 0usize;
    for l in labels {
        *counts.entry(l).or_default() += 1;
        n += 1;
    }
    counts.into_iter().map(|(l, c)| (l, c as f64 / n as f64)).collect()
}

/// Floors of `size * fraction`, with the leftover units given to the largest
/// fractional parts (ties to the smaller label). Quotas sum to `size`.
pub fn largest_remainder_quotas(size: usize, dist: &BTreeMap<u8, f64>) -> BTreeMap<u8, usize> {
    let exact: Vec<(u8, f64)> = dist.iter().map(|(&l, &f)| (l, size as f64 * f)).collect();
    let mut quotas: BTreeMap<u8, usize> = exact.iter().map(|&(l, x)| (l, x.floor() as usize)).collect();
    let assigned: usize = quotas.values().sum();
    let mut order: Vec<(u8, f64)> = exact.iter().map(|&(l, x)| (l, x - x.floor())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (l, _) in order.into_iter().cycle().take(size.saturating_sub(assigned)) {
        *quotas.get_mut(&l).expect("label present") += 1;
    }
    quotas
}

/// Draws a dataset from annotated pairs. The input is put in canonical pair
/// order first, so the result depends only on its contents and the seed.
pub fn build_dataset(
    annotated: &[AnnotatedPair],
    spec: &DatasetSpec,
) -> Result<Vec<AnnotatedPair>, AugmentError> {
    spec.validate()?;
    let mut pool: Vec<&AnnotatedPair> = annotated.iter().collect();
    pool.sort_by(|a, b| a.pair.cmp(&b.pair));
    pool.dedup_by(|a, b| a.pair == b.pair);
    let mut rng = rng_for(spec.seed);

    let mut picked: Vec<&AnnotatedPair> = match spec.mode {
        DatasetMode::Random => {
            if spec.size > pool.len() {
                return Err(AugmentError::InvalidSpec(format!(
                    "size {} exceeds the {} available pairs",
                    spec.size,
                    pool.len()
                )));
            }
            rand::seq::index::sample(&mut rng, pool.len(), spec.size)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        }
        DatasetMode::DistributionMatched => {
            let dist = spec.target_distribution.as_ref().expect("validated");
            let quotas = largest_remainder_quotas(spec.size, dist);
            let mut out = Vec::with_capacity(spec.size);
            for (&label, &quota) in &quotas {
                let of_label: Vec<&AnnotatedPair> = pool.iter().copied().filter(|a| a.label() == label).collect();
                if of_label.len() < quota {
                    return Err(AugmentError::InsufficientLabel {
                        label,
                        shortfall: quota - of_label.len(),
                    });
                }
                out.extend(
                    rand::seq::index::sample(&mut rng, of_label.len(), quota)
                        .into_iter()
                        .map(|i| of_label[i]),
                );
            }
            out
        }
    };
    picked.shuffle(&mut rng);
    Ok(picked.into_iter().cloned().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    LabelOnly,
    Rationale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub size: usize,
    pub mode: DatasetMode,
    pub format: ExportFormat,
    pub seed: u64,
    pub histogram: BTreeMap<u8, usize>,
    pub config_fingerprint: String,
    /// Digest of the data file's bytes.
    pub sha256: String,
    pub data_file: String,
}

const RATIONALE_SYSTEM: &str = "You judge whether two criminal cases are relevant to each other. \
Extract the material facts and the legal facts of each case, compare them, and give a verdict for each fact type.";

fn rationale_line(a: &AnnotatedPair, store: &CaseStore) -> Result<serde_json::Value, AugmentError> {
    let (q, c) = a.pair.resolve(store)?;
    let r = &a.record;
    let user = format!("Case A:\n{}\n\nCase B:\n{}", q.fact_text, c.fact_text);
    let assistant = format!(
        "Material facts of case A:\n{}\nMaterial facts of case B:\n{}\n\
         Legal facts of case A:\n{}\nLegal facts of case B:\n{}\n\n\
         Material fact comparison:\n{}\n{}\n\n\
         Legal fact comparison:\n{}\n{}",
        facts_block(&r.mf_extractions.0.text),
        facts_block(&r.mf_extractions.1.text),
        facts_block(&r.lf_extractions.0.text),
        facts_block(&r.lf_extractions.1.text),
        r.mf_verdict.reasoning,
        verdict_line(r.mf_verdict.relevant),
        r.lf_verdict.reasoning,
        verdict_line(r.lf_verdict.relevant),
    );
    Ok(json!({
        "messages": [
            {"role": "system", "content": RATIONALE_SYSTEM},
            {"role": "user", "content": user},
            {"role": "assistant", "content": assistant},
        ],
        "label": r.label,
    }))
}

/// Writes `<out_dir>/<name>.jsonl` and `<out_dir>/manifest.json`.
pub fn export_dataset(
    ds: &[AnnotatedPair],
    store: &CaseStore,
    format: ExportFormat,
    spec: &DatasetSpec,
    out_dir: &Path,
) -> Result<Manifest, AugmentError> {
    let lines = ds
        .iter()
        .map(|a| match format {
            ExportFormat::LabelOnly => {
                let (q, c) = a.pair.resolve(store)?;
                Ok(json!({
                    "query_id": q.id,
                    "cand_id": c.id,
                    "query_text": q.fact_text,
                    "cand_text": c.fact_text,
                    "label": a.label(),
                }))
            }
            ExportFormat::Rationale => rationale_line(a, store),
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;
    let bytes = to_jsonl(&lines);
    let data_file = format!("{}.jsonl", spec.name);
    write_atomic(&out_dir.join(&data_file), &bytes)?;

    let mut histogram: BTreeMap<u8, usize> = BTreeMap::new();
    for a in ds {
        *histogram.entry(a.label()).or_default() += 1;
    }
    let fingerprints: BTreeSet<&str> = ds.iter().map(|a| a.record.config_fingerprint.as_str()).collect();
    let manifest = Manifest {
        name: spec.name.clone(),
        size: ds.len(),
        mode: spec.mode,
        format,
        seed: spec.seed,
        histogram,
        config_fingerprint: fingerprints.into_iter().collect::<Vec<_>>().join(","),
        sha256: sha256_hex(&bytes),
        data_file,
    };
    write_json_atomic(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[(u8, f64)]) -> BTreeMap<u8, f64> {
        v.iter().copied().collect()
    }

    #[test]
    fn quotas_sum_to_size() {
        let d = dist(&[(0, 0.5), (1, 0.2), (2, 0.1), (3, 0.2)]);
        assert_eq!(
            largest_remainder_quotas(20, &d),
            [(0, 10), (1, 4), (2, 2), (3, 4)].into_iter().collect()
        );
        let thirds = dist(&[(0, 1.0 / 3.0), (1, 1.0 / 3.0), (2, 1.0 / 3.0)]);
        let q = largest_remainder_quotas(10, &thirds);
        assert_eq!(q.values().sum::<usize>(), 10);
        assert_eq!(q[&0], 4);
    }

    #[test]
    fn spec_validation() {
        let mut spec = DatasetSpec {
            name: "d".into(),
            size: 10,
            mode: DatasetMode::DistributionMatched,
            target_distribution: None,
            seed: 0,
        };
        assert!(spec.validate().is_err());
        spec.target_distribution = Some(dist(&[(0, 0.5), (1, 0.4)]));
        assert!(spec.validate().is_err());
        spec.target_distribution = Some(dist(&[(0, 0.5), (1, 0.5)]));
        assert!(spec.validate().is_ok());
        spec.size = 0;
        assert!(spec.validate().is_err());
        let parsed: DatasetSpec = serde_json::from_str(
            r#"{"name":"x","size":5,"mode":"distribution_matched","target_distribution":{"0":0.6,"3":0.4}}"#,
        )
        .unwrap();
        assert_eq!(parsed.target_distribution.unwrap()[&3], 0.4);
    }

    #[test]
    fn distribution_of_labels() {
        let d = label_distribution([0, 0, 1, 3]);
        assert_eq!(d, dist(&[(0, 0.5), (1, 0.25), (3, 0.25)]));
    }
}
