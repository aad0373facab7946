//! Expert demonstration library and adaptive demo matching.
//!
//! Demonstrations live in four sets keyed by (stage, fact type). Selection
//! ranks a set by BM25 of the current input against each demonstration's
//! `input_text`, ties broken by demonstration id.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_json, sha256_fields, ReadError};
use crate::retrieval::{rank_order, Bm25Index, Bm25Params, ExternalTokenizerError, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "FE")]
    FactExtraction,
    #[serde(rename = "FA")]
    FactAnnotation,
}

impl Stage {
    pub fn code(self) -> &'static str {
        match self {
            Self::FactExtraction => "FE",
            Self::FactAnnotation => "FA",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FactType {
    #[serde(rename = "MF")]
    Material,
    #[serde(rename = "LF")]
    Legal,
}

impl FactType {
    pub fn code(self) -> &'static str {
        match self {
            Self::Material => "MF",
            Self::Legal => "LF",
        }
    }
}

impl fmt::Display for FactType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub stage: Stage,
    pub fact_type: FactType,
    pub input_text: String,
    pub exemplar_output: String,
    #[serde(default)]
    pub polarity: Option<Polarity>,
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("demonstration set {stage}/{fact_type} is empty")]
    EmptySet { stage: Stage, fact_type: FactType },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Tokenizer(#[from] ExternalTokenizerError),
}

#[derive(Debug, Clone)]
struct DemoSet {
    demos: Vec<Demonstration>,
    index: Option<Bm25Index>,
}

#[derive(Debug, Clone)]
pub struct DemoLibrary {
    sets: BTreeMap<(Stage, FactType), DemoSet>,
    tokenizer: Tokenizer,
}

pub const ALL_SETS: [(Stage, FactType); 4] = [
    (Stage::FactExtraction, FactType::Material),
    (Stage::FactExtraction, FactType::Legal),
    (Stage::FactAnnotation, FactType::Material),
    (Stage::FactAnnotation, FactType::Legal),
];

/// Fixture library bundled with the crate.
pub const BUNDLED_DEMOS: &str = include_str!("../assets/demos.json");

impl DemoLibrary {
    pub fn load(path: &Path, tokenizer: Tokenizer, params: Bm25Params) -> Result<Self, DemoError> {
        let demos: Vec<Demonstration> = read_json(path)?;
        Self::from_demos(demos, tokenizer, params)
    }

    pub fn bundled(tokenizer: Tokenizer, params: Bm25Params) -> Result<Self, DemoError> {
        let demos: Vec<Demonstration> = serde_json::from_str(BUNDLED_DEMOS)
            .map_err(|e| DemoError::Integrity(format!("bundled demos: {e}")))?;
        Self::from_demos(demos, tokenizer, params)
    }

    pub fn from_demos(
        demos: Vec<Demonstration>,
        tokenizer: Tokenizer,
        params: Bm25Params,
    ) -> Result<Self, DemoError> {
        validate_demos(&demos)?;
        let mut grouped: BTreeMap<(Stage, FactType), Vec<Demonstration>> =
            ALL_SETS.iter().map(|&k| (k, Vec::new())).collect();
        for d in demos {
            grouped.get_mut(&(d.stage, d.fact_type)).expect("closed key set").push(d);
        }
        let mut sets = BTreeMap::new();
        for (key, demos) in grouped {
            let index = if demos.is_empty() {
                None
            } else {
                let docs = demos
                    .iter()
                    .map(|d| Ok((d.id.clone(), tokenizer.tokenize(&d.input_text)?)))
                    .collect::<Result<Vec<_>, ExternalTokenizerError>>()?;
                Some(Bm25Index::build(docs, params).expect("ids validated unique"))
            };
            sets.insert(key, DemoSet { demos, index });
        }
        Ok(Self { sets, tokenizer })
    }

    pub fn set(&self, stage: Stage, fact_type: FactType) -> &[Demonstration] {
        &self.sets[&(stage, fact_type)].demos
    }

    pub fn set_sizes(&self) -> BTreeMap<(Stage, FactType), usize> {
        self.sets.iter().map(|(k, s)| (*k, s.demos.len())).collect()
    }

    /// Digest of every demonstration, for configuration fingerprints.
    pub fn content_hash(&self) -> String {
        let mut fields: Vec<Vec<u8>> = Vec::new();
        for set in self.sets.values() {
            for d in &set.demos {
                fields.push(serde_json::to_vec(d).expect("serializable"));
            }
        }
        sha256_fields(fields.iter().map(Vec::as_slice))
    }

    /// Top-`k` demonstrations of the (stage, fact type) set by BM25 against `x`.
    pub fn adm_select(
        &self,
        x: &str,
        stage: Stage,
        fact_type: FactType,
        k: usize,
    ) -> Result<Vec<&Demonstration>, DemoError> {
        self.ranked(x, stage, fact_type, k, None)
    }

    /// As [`adm_select`](Self::adm_select), restricted to one polarity class.
    /// Scores still use the whole set's statistics.
    pub fn adm_select_polarity(
        &self,
        x: &str,
        fact_type: FactType,
        polarity: Polarity,
        k: usize,
    ) -> Result<Vec<&Demonstration>, DemoError> {
        self.ranked(x, Stage::FactAnnotation, fact_type, k, Some(polarity))
    }

    fn ranked(
        &self,
        x: &str,
        stage: Stage,
        fact_type: FactType,
        k: usize,
        polarity: Option<Polarity>,
    ) -> Result<Vec<&Demonstration>, DemoError> {
        if k == 0 {
            return Err(DemoError::ZeroK);
        }
        let set = &self.sets[&(stage, fact_type)];
        let index = set.index.as_ref().ok_or(DemoError::EmptySet { stage, fact_type })?;
        let query = self.tokenizer.tokenize(x)?;
        let mut scored: Vec<(&Demonstration, f64)> = set
            .demos
            .iter()
            .zip(index.score_all(&query))
            .filter(|(d, _)| polarity.is_none() || d.polarity == polarity)
            .map(|(d, (_, s))| (d, s))
            .collect();
        scored.sort_by(|a, b| rank_order(a.1, &a.0.id, b.1, &b.0.id));
        Ok(scored.into_iter().take(k).map(|(d, _)| d).collect())
    }

    /// Uniform random draw of `k` demonstrations, used when matching is
    /// ablated. Deterministic in (`seed`, `x`).
    pub fn random_select(
        &self,
        x: &str,
        stage: Stage,
        fact_type: FactType,
        polarity: Option<Polarity>,
        k: usize,
        seed: u64,
    ) -> Result<Vec<&Demonstration>, DemoError> {
        if k == 0 {
            return Err(DemoError::ZeroK);
        }
        let set = &self.sets[&(stage, fact_type)];
        let pool: Vec<&Demonstration> = set
            .demos
            .iter()
            .filter(|d| polarity.is_none() || d.polarity == polarity)
            .collect();
        if pool.is_empty() {
            return Err(DemoError::EmptySet { stage, fact_type });
        }
        let digest = sha256_fields([
            seed.to_le_bytes().as_slice(),
            stage.code().as_bytes(),
            fact_type.code().as_bytes(),
            x.as_bytes(),
        ]);
        let mut rng_seed = [0u8; 32];
        hex_to_seed(&digest, &mut rng_seed);
        let mut rng = ChaCha8Rng::from_seed(rng_seed);
        let n = k.min(pool.len());
        Ok(sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect())
    }
}

fn hex_to_seed(hex_digest: &str, out: &mut [u8; 32]) {
    let bytes = hex::decode(hex_digest).expect("sha256 hex");
    out.copy_from_slice(&bytes[..32]);
}

fn validate_demos(demos: &[Demonstration]) -> Result<(), DemoError> {
    let mut ids = HashSet::new();
    for d in demos {
        if d.id.is_empty() {
            return Err(DemoError::Integrity("demonstration with empty id".into()));
        }
        if !ids.insert(d.id.as_str()) {
            return Err(DemoError::Integrity(format!("duplicate demonstration id `{}`", d.id)));
        }
        if d.input_text.trim().is_empty() || d.exemplar_output.trim().is_empty() {
            return Err(DemoError::Integrity(format!(
                "demonstration `{}` has empty input_text or exemplar_output",
                d.id
            )));
        }
        match (d.stage, d.polarity) {
            (Stage::FactExtraction, Some(_)) => {
                return Err(DemoError::Integrity(format!(
                    "FE demonstration `{}` must not carry a polarity",
                    d.id
                )))
            }
            (Stage::FactAnnotation, None) => {
                return Err(DemoError::Integrity(format!(
                    "FA demonstration `{}` must carry a polarity",
                    d.id
                )))
            }
            _ => {}
        }
    }
    for ft in [FactType::Material, FactType::Legal] {
        for pol in [Polarity::Relevant, Polarity::Irrelevant] {
            let present = demos.iter().any(|d| {
                d.stage == Stage::FactAnnotation && d.fact_type == ft && d.polarity == Some(pol)
            });
            if !present {
                return Err(DemoError::Integrity(format!(
                    "FA/{ft} set has no {} demonstration",
                    match pol {
                        Polarity::Relevant => "relevant",
                        Polarity::Irrelevant => "irrelevant",
                    }
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::TokenizerMode;

    pub(crate) fn demo(
        id: &str,
        stage: Stage,
        ft: FactType,
        input: &str,
        polarity: Option<Polarity>,
    ) -> Demonstration {
        Demonstration {
            id: id.into(),
            stage,
            fact_type: ft,
            input_text: input.into(),
            exemplar_output: format!("output of {id}"),
            polarity,
        }
    }

    fn two_per_set() -> Vec<Demonstration> {
        use FactType::*;
        use Polarity::*;
        use Stage::*;
        vec![
            demo("fe-mf-1", FactExtraction, Material, "alpha beta", None),
            demo("fe-mf-2", FactExtraction, Material, "gamma delta", None),
            demo("fe-lf-1", FactExtraction, Legal, "alpha", None),
            demo("fe-lf-2", FactExtraction, Legal, "beta", None),
            demo("fa-mf-1", FactAnnotation, Material, "alpha", Some(Relevant)),
            demo("fa-mf-2", FactAnnotation, Material, "beta", Some(Irrelevant)),
            demo("fa-lf-1", FactAnnotation, Legal, "alpha", Some(Relevant)),
            demo("fa-lf-2", FactAnnotation, Legal, "beta", Some(Irrelevant)),
        ]
    }

    fn lib(demos: Vec<Demonstration>) -> Result<DemoLibrary, DemoError> {
        DemoLibrary::from_demos(
            demos,
            Tokenizer::new(TokenizerMode::Whitespace),
            Bm25Params::default(),
        )
    }

    #[test]
    fn loads_four_sets() {
        let l = lib(two_per_set()).unwrap();
        assert!(l.set_sizes().values().all(|&n| n == 2));
    }

    #[test]
    fn bundled_library_is_valid() {
        let l = DemoLibrary::bundled(Tokenizer::default(), Bm25Params::default()).unwrap();
        assert!(l.set_sizes().values().all(|&n| n >= 2));
    }

    #[test]
    fn fa_set_missing_polarity_class_rejected() {
        let mut demos = two_per_set();
        demos.retain(|d| d.id != "fa-mf-2");
        let err = lib(demos).unwrap_err();
        assert!(matches!(err, DemoError::Integrity(ref m) if m.contains("FA/MF")), "{err}");
    }

    #[test]
    fn fe_demo_with_polarity_rejected() {
        let mut demos = two_per_set();
        demos[0].polarity = Some(Polarity::Relevant);
        assert!(matches!(lib(demos), Err(DemoError::Integrity(_))));
    }

    #[test]
    fn fa_demo_without_polarity_rejected() {
        let mut demos = two_per_set();
        demos[4].polarity = None;
        assert!(matches!(lib(demos), Err(DemoError::Integrity(_))));
    }

    #[test]
    fn dominant_demo_selected() {
        let l = lib(two_per_set()).unwrap();
        let got = l
            .adm_select("gamma delta", Stage::FactExtraction, FactType::Material, 1)
            .unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, "fe-mf-2");
    }

    #[test]
    fn k_larger_than_set_returns_whole_set() {
        let l = lib(two_per_set()).unwrap();
        let got = l
            .adm_select("x", Stage::FactExtraction, FactType::Legal, 5)
            .unwrap();
        assert_eq!(got.len(), 2);
        // all-zero scores fall back to id order
        assert_eq!(got[0].id, "fe-lf-1");
    }

    #[test]
    fn empty_set_is_an_error() {
        let mut demos = two_per_set();
        demos.retain(|d| d.stage != Stage::FactExtraction || d.fact_type != FactType::Legal);
        let l = lib(demos).unwrap();
        assert!(matches!(
            l.adm_select("x", Stage::FactExtraction, FactType::Legal, 2),
            Err(DemoError::EmptySet { .. })
        ));
    }

    #[test]
    fn polarity_filter_restricts_class() {
        let l = lib(two_per_set()).unwrap();
        let got = l
            .adm_select_polarity("alpha", FactType::Material, Polarity::Irrelevant, 2)
            .unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, "fa-mf-2");
    }

    #[test]
    fn random_select_is_deterministic_and_in_set() {
        let l = lib(two_per_set()).unwrap();
        let a = l
            .random_select("q", Stage::FactExtraction, FactType::Material, None, 1, 7)
            .unwrap();
        let b = l
            .random_select("q", Stage::FactExtraction, FactType::Material, None, 1, 7)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].stage, Stage::FactExtraction);
        assert_eq!(a[0].fact_type, FactType::Material);
    }

    #[test]
    fn serde_codes() {
        let d: Demonstration = serde_json::from_str(
            r#"{"id":"x","stage":"FA","fact_type":"LF","input_text":"a","exemplar_output":"b","polarity":"irrelevant"}"#,
        )
        .unwrap();
        assert_eq!(d.stage, Stage::FactAnnotation);
        assert_eq!(d.fact_type, FactType::Legal);
        assert_eq!(d.polarity, Some(Polarity::Irrelevant));
    }
}
