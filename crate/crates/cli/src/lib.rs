//! Command-line front end for the factjudge pipeline.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use factjudge::augmentation::{
    annotate_pairs, build_dataset, export_dataset, label_distribution, prerank_pairs, sample_pairs,
    AnnotateOptions, AnnotatedPair, Bm25PairScorer, CasePair, DatasetMode, DatasetSpec, ExportFormat,
};
use factjudge::corpus::{ingest_corpus, CandidatePool, CaseStore, Qrels};
use factjudge::demo_store::DemoLibrary;
use factjudge::evaluation::{
    confusion_matrix, judged_and_gold_series, ndcg_at_k, reliability_kappa, validity_kappa, LabelSeries,
    RunFile,
};
use factjudge::io::{read_json, read_jsonl, write_atomic, write_json_atomic, write_jsonl_atomic};
use factjudge::judge_engine::{
    AblationFlags, EngineSettings, ExtractionCache, FaMatchQuery, JudgeEngine, JudgmentRecord, PairOutcome,
    TemplateSet,
};
use factjudge::llm_gateway::{ChatClient, Judge, Lexicon, MockJudge, MockJudgeConfig, RetryPolicy};
use factjudge::retrieval::{Bm25Index, Bm25Params, Tokenizer, TokenizerMode};

pub use config::{load_config, Config, ConfigError};

/// Bad invocation rather than bad data; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "factjudge", version, about = "Fact-based relevance judgment for legal case pairs")]
pub struct Cli {
    /// JSON config file (nested or dotted keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate cases, pools and qrels and print a summary.
    Ingest(CorpusArgs),
    /// Demonstration library checks.
    #[command(subcommand)]
    Demos(DemosCmd),
    /// Judge each query against its top candidates.
    Judge(JudgeArgs),
    /// Agreement statistics.
    #[command(subcommand)]
    Evaluate(EvaluateCmd),
    /// NDCG@k of a TREC run file.
    Ndcg(NdcgArgs),
    /// BM25 baseline ranking of each candidate pool, as a TREC run.
    Rank(RankArgs),
    /// Synthetic dataset construction.
    #[command(subcommand)]
    Augment(AugmentCmd),
    /// Report artifacts.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Case JSONL files (queries and candidates).
    #[arg(long, required = true, num_args = 1..)]
    pub cases: Vec<PathBuf>,
    /// Candidate pools JSON.
    #[arg(long)]
    pub pools: PathBuf,
    /// Gold labels JSON.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DemosCmd {
    /// Load and check a demonstration library (bundled unless --demos).
    Validate {
        #[arg(long)]
        demos: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    /// Query case JSONL.
    #[arg(long)]
    pub queries: PathBuf,
    /// Candidate case JSONL files; may be omitted if --queries holds every case.
    #[arg(long, num_args = 1..)]
    pub cases: Vec<PathBuf>,
    #[arg(long)]
    pub pools: PathBuf,
    /// Output directory; run r goes to `run-r.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Use the rule-based offline judge.
    #[arg(long)]
    pub mock: bool,
}

#[derive(Debug, Subcommand)]
pub enum EvaluateCmd {
    /// Mean pairwise kappa across runs.
    Reliability {
        /// Judgment files, one per run.
        #[arg(long = "in", required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        report_dir: PathBuf,
    },
    /// Kappa of judgments against gold labels, plus heatmaps.
    Validity {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        report_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct NdcgArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub k: usize,
    /// Also merge the result into `<dir>/report.json`.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "bm25")]
    pub tag: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    DistributionMatched,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    LabelOnly,
    Rationale,
}

#[derive(Debug, Subcommand)]
pub enum AugmentCmd {
    /// Draw distinct case pairs uniformly.
    Sample {
        #[arg(long, required = true, num_args = 1..)]
        cases: Vec<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the best-scoring pairs under BM25.
    Prerank {
        #[arg(long, required = true, num_args = 1..)]
        cases: Vec<PathBuf>,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Judge pairs; `--out` doubles as a resumable checkpoint.
    Annotate {
        #[arg(long, required = true, num_args = 1..)]
        cases: Vec<PathBuf>,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mock: bool,
        /// Stop after this many newly judged pairs.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Select a dataset from annotated pairs.
    Build {
        #[arg(long = "in")]
        input: PathBuf,
        /// Dataset spec JSON; the flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Target label distribution taken from these gold labels.
        #[arg(long)]
        distribution_from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a dataset as training JSONL plus a manifest.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        cases: Vec<PathBuf>,
        #[arg(long, value_enum)]
        format: FormatArg,
        /// Spec written by `augment build` (defaults to `<in>.spec.json`).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    /// Confusion matrices of judged vs gold labels as CSV.
    Heatmap {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Parses `argv` (including the program name), runs it, and returns the
/// process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<ConfigError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&args),
        Command::Demos(DemosCmd::Validate { demos }) => cmd_demos_validate(&cfg, demos.as_deref()),
        Command::Judge(args) => cmd_judge(&cfg, &args),
        Command::Evaluate(EvaluateCmd::Reliability { inputs, report_dir }) => {
            cmd_reliability(&inputs, &report_dir)
        }
        Command::Evaluate(EvaluateCmd::Validity {
            input,
            qrels,
            report_dir,
        }) => cmd_validity(&input, &qrels, &report_dir),
        Command::Ndcg(args) => cmd_ndcg(&args),
        Command::Rank(args) => cmd_rank(&cfg, &args),
        Command::Augment(cmd) => cmd_augment(&cfg, cmd),
        Command::Report(ReportCmd::Heatmap { input, qrels, out_dir }) => {
            let records = load_records(&input)?;
            let qrels = Qrels::load(&qrels)?;
            write_heatmaps(&records, &qrels, &out_dir)
        }
    }
}

fn print_json(v: &Value) {
    use std::io::Write;
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("serializable"));
}

/// The error and its causes, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !last.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
        last = text;
    }
    out
}

fn load_cases(paths: &[PathBuf]) -> Result<CaseStore> {
    let mut store = CaseStore::new();
    for p in paths {
        store.load_jsonl(p)?;
    }
    Ok(store)
}

fn cmd_ingest(args: &CorpusArgs) -> Result<()> {
    let paths: Vec<&Path> = args.cases.iter().map(PathBuf::as_path).collect();
    let corpus = ingest_corpus(&paths, &args.pools, args.qrels.as_deref())?;
    for w in &corpus.warnings {
        log::warn!("{w}");
    }
    print_json(&json!({
        "cases": corpus.cases.len(),
        "pools": corpus.pools.len(),
        "pool_pairs": corpus.pools.iter().map(|p| p.candidate_ids.len()).sum::<usize>(),
        "qrels": corpus.qrels.as_ref().map(Qrels::len),
        "warnings": corpus.warnings,
    }));
    Ok(())
}

fn tokenizer_of(cfg: &Config) -> Result<Tokenizer> {
    let mode: TokenizerMode = cfg
        .tokenizer
        .mode
        .parse()
        .map_err(|_| usage(format!("unknown tokenizer mode `{}`", cfg.tokenizer.mode)))?;
    Ok(Tokenizer::new(mode).with_command(cfg.tokenizer.command.clone()))
}

fn bm25_of(cfg: &Config) -> Bm25Params {
    Bm25Params {
        k1: cfg.bm25.k1,
        b: cfg.bm25.b,
    }
}

fn library_of(cfg: &Config, path: Option<&Path>) -> Result<DemoLibrary> {
    let tokenizer = tokenizer_of(cfg)?;
    let path = path.map(Path::to_owned).or(cfg.judge.demos_path.as_ref().map(PathBuf::from));
    Ok(match path {
        Some(p) => DemoLibrary::load(&p, tokenizer, bm25_of(cfg))
            .with_context(|| format!("loading demonstrations from {}", p.display()))?,
        None => DemoLibrary::bundled(tokenizer, bm25_of(cfg))?,
    })
}

fn cmd_demos_validate(cfg: &Config, demos: Option<&Path>) -> Result<()> {
    let lib = library_of(cfg, demos)?;
    let sets: BTreeMap<String, usize> = lib
        .set_sizes()
        .into_iter()
        .map(|((s, f), n)| (format!("{}_{}", s.code(), f.code()), n))
        .collect();
    print_json(&json!({"valid": true, "sets": sets, "content_hash": lib.content_hash()}));
    Ok(())
}

fn mock_judge(cfg: &Config) -> Result<MockJudge> {
    let lexicon = match &cfg.mock.lexicon_path {
        Some(p) => Lexicon::load(Path::new(p)).with_context(|| format!("loading lexicon {p}"))?,
        None => Lexicon::bundled(),
    };
    Ok(MockJudge::new(MockJudgeConfig {
        mf_jaccard_threshold: cfg.mock.mf_jaccard_threshold,
        lexicon,
        seed: cfg.judge.seed,
    }))
}

fn backend(cfg: &Config, mock: bool, transcript: Option<PathBuf>) -> Result<Arc<dyn Judge>> {
    if mock {
        return Ok(Arc::new(mock_judge(cfg)?));
    }
    let client = ChatClient::builder(&cfg.api.base_url)
        .api_key_from_env(&cfg.api.key_env)?
        .timeout(Duration::from_secs(cfg.api.timeout_secs))
        .retry(RetryPolicy {
            max_retries: cfg.api.max_retries,
            ..RetryPolicy::default()
        })
        .requests_per_minute(cfg.api.requests_per_minute)
        .cache_dir(cfg.cache.enabled.then(|| PathBuf::from(&cfg.cache.dir)))
        .transcript(transcript)
        .build()?;
    Ok(Arc::new(client))
}

fn engine(cfg: &Config, judge: Arc<dyn Judge>, temperature: f64) -> Result<JudgeEngine> {
    let templates = match &cfg.judge.templates_dir {
        Some(dir) => TemplateSet::load_dir(Path::new(dir))?,
        None => TemplateSet::default(),
    };
    let settings = EngineSettings {
        model: cfg.api.model.clone(),
        temperature,
        max_tokens: cfg.api.max_tokens,
        top_k_demos: cfg.judge.top_k_demos,
        fa_demos_per_polarity: cfg.judge.fa_demos_per_polarity,
        parse_retries: cfg.judge.retry,
        flags: AblationFlags {
            disable_adm: cfg.ablation.disable_adm,
            disable_fe: cfg.ablation.disable_fe,
            disable_fa_demos: cfg.ablation.disable_fa_demos,
        },
        seed: cfg.judge.seed,
        fa_match_query: if cfg.judge.fa_match_query == "raw" {
            FaMatchQuery::Raw
        } else {
            FaMatchQuery::Extracted
        },
    };
    Ok(JudgeEngine::new(
        judge,
        Arc::new(library_of(cfg, None)?),
        Arc::new(templates),
        settings,
    ))
}

fn cmd_judge(cfg: &Config, args: &JudgeArgs) -> Result<()> {
    let runs = args.runs.unwrap_or(cfg.judge.runs);
    if runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let mut paths = vec![args.queries.clone()];
    paths.extend(args.cases.iter().cloned());
    let cases = load_cases(&paths)?;
    let pools: Vec<CandidatePool> = read_json(&args.pools)?;
    factjudge::corpus::check_pools(&cases, &pools)?;
    let mut queries = CaseStore::new();
    queries.load_jsonl(&args.queries)?;

    if !args.mock && cfg.cache.enabled && runs > 1 {
        log::warn!("response cache is enabled: runs after the first will replay cached answers");
    }
    let transcript = (!args.mock).then(|| args.out.join("transcript.jsonl"));
    let judge = backend(cfg, args.mock, transcript)?;
    let engine = engine(cfg, judge, cfg.judge.temperature)?;

    let mut summary = Vec::new();
    for r in 1..=runs {
        let run_id = format!("run-{r}");
        let cache = ExtractionCache::new();
        let mut outcomes = Vec::new();
        for pool in pools.iter().filter(|p| queries.contains(&p.query_id)) {
            let query = cases.get(&pool.query_id).expect("pools checked");
            outcomes.extend(engine.judge_query(
                query,
                pool,
                &cases,
                cfg.judge.top_n_candidates,
                &run_id,
                cfg.parallelism,
                &cache,
            )?);
        }
        let failed = outcomes.iter().filter(|o| o.record().is_none()).count();
        let path = args.out.join(format!("{run_id}.jsonl"));
        write_jsonl_atomic(&path, &outcomes)?;
        summary.push(json!({"run": run_id, "file": path, "pairs": outcomes.len(), "failed": failed}));
    }
    print_json(&json!({"config_fingerprint": engine.config_fingerprint(), "runs": summary}));
    Ok(())
}

fn load_outcomes(path: &Path) -> Result<Vec<PairOutcome>> {
    Ok(read_jsonl::<PairOutcome>(path)?.into_iter().map(|(_, o)| o).collect())
}

/// Successful records of a judgments file; failures are logged and dropped.
fn load_records(path: &Path) -> Result<Vec<JudgmentRecord>> {
    let outcomes = load_outcomes(path)?;
    let total = outcomes.len();
    let records: Vec<JudgmentRecord> = outcomes
        .into_iter()
        .filter_map(|o| match o {
            PairOutcome::Ok(r) => Some(r),
            PairOutcome::Failed(_) => None,
        })
        .collect();
    if records.len() < total {
        log::warn!("{}: skipping {} failed pair(s)", path.display(), total - records.len());
    }
    Ok(records)
}

/// Adds `section` to `<dir>/report.json`, keeping other sections.
fn merge_report(dir: &Path, section: &str, value: Value) -> Result<()> {
    let path = dir.join("report.json");
    let mut report = if path.exists() {
        read_json::<Value>(&path)?
    } else {
        json!({})
    };
    let obj = report
        .as_object_mut()
        .ok_or_else(|| anyhow!("{} is not a JSON object", path.display()))?;
    obj.insert(section.to_owned(), value);
    write_json_atomic(&path, &report)?;
    Ok(())
}

fn cmd_reliability(inputs: &[PathBuf], report_dir: &Path) -> Result<()> {
    let runs: Vec<Vec<JudgmentRecord>> = inputs.iter().map(|p| load_records(p)).collect::<Result<_>>()?;
    // only pairs every run judged successfully
    let key = |r: &JudgmentRecord| (r.query_id.clone(), r.candidate_id.clone());
    let mut common: BTreeSet<(String, String)> = runs[0].iter().map(key).collect();
    for run in &runs[1..] {
        let keys: BTreeSet<_> = run.iter().map(key).collect();
        common = common.intersection(&keys).cloned().collect();
    }
    if common.is_empty() {
        bail!("the runs share no successfully judged pairs");
    }
    let series = |f: &dyn Fn(&JudgmentRecord) -> i32| -> Result<Vec<LabelSeries>> {
        runs.iter()
            .map(|run| {
                let kept: BTreeMap<_, _> = run
                    .iter()
                    .filter(|r| common.contains(&key(r)))
                    .map(|r| (key(r), f(r)))
                    .collect();
                Ok(LabelSeries::new(kept.keys().cloned().collect(), kept.values().copied().collect())?)
            })
            .collect()
    };
    let mf = reliability_kappa(&series(&|r| i32::from(r.mf_verdict.relevant))?)?;
    let lf = reliability_kappa(&series(&|r| i32::from(r.lf_verdict.relevant))?)?;
    let four = reliability_kappa(&series(&|r| i32::from(r.label))?)?;
    let value = json!({"pairs": common.len(), "runs": inputs.len(), "mf": mf, "lf": lf, "four_level": four});
    merge_report(report_dir, "reliability", value.clone())?;
    print_json(&value);
    Ok(())
}

fn write_heatmaps(records: &[JudgmentRecord], qrels: &Qrels, out_dir: &Path) -> Result<()> {
    let [mf, lf, four] = judged_and_gold_series(records, qrels)?;
    for (name, (judged, gold), classes) in [
        ("heatmap_4x4.csv", four, &[0, 1, 2, 3][..]),
        ("heatmap_mf.csv", mf, &[0, 1][..]),
        ("heatmap_lf.csv", lf, &[0, 1][..]),
    ] {
        let m = confusion_matrix(&judged, &gold, classes)?;
        write_atomic(&out_dir.join(name), m.to_csv().as_bytes())?;
    }
    Ok(())
}

fn cmd_validity(input: &Path, qrels: &Path, report_dir: &Path) -> Result<()> {
    let records = load_records(input)?;
    let qrels = Qrels::load(qrels)?;
    let v = validity_kappa(&records, &qrels)?;
    write_heatmaps(&records, &qrels, report_dir)?;
    let value = serde_json::to_value(&v)?;
    merge_report(report_dir, "validity", value.clone())?;
    print_json(&value);
    Ok(())
}

fn cmd_ndcg(args: &NdcgArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.run).with_context(|| format!("reading {}", args.run.display()))?;
    let run = RunFile::parse(&text)?;
    let qrels = Qrels::load(&args.qrels)?;
    let report = ndcg_at_k(&run, &qrels, args.k)?;
    let value = json!({
        "k": report.k,
        "mean": report.mean,
        "evaluated": report.per_query.len(),
        "skipped": report.skipped.len(),
        "skipped_queries": report.skipped,
        "per_query": report.per_query,
    });
    if let Some(dir) = &args.report_dir {
        merge_report(dir, &format!("ndcg@{}", args.k), value.clone())?;
    }
    print_json(&value);
    Ok(())
}

fn cmd_rank(cfg: &Config, args: &RankArgs) -> Result<()> {
    let paths: Vec<&Path> = args.corpus.cases.iter().map(PathBuf::as_path).collect();
    let corpus = ingest_corpus(&paths, &args.corpus.pools, None)?;
    let tokenizer = tokenizer_of(cfg)?;
    let mut run = RunFile::new();
    for pool in &corpus.pools {
        if pool.candidate_ids.is_empty() {
            continue;
        }
        let docs = pool
            .candidate_ids
            .iter()
            .map(|id| Ok((id.clone(), tokenizer.tokenize(&corpus.cases.get(id).expect("checked").fact_text)?)))
            .collect::<Result<Vec<_>>>()?;
        let index = Bm25Index::build(docs, bm25_of(cfg))?;
        let query = tokenizer.tokenize(&corpus.cases.get(&pool.query_id).expect("checked").fact_text)?;
        run.add_scored(pool.query_id.clone(), index.score_all(&query));
    }
    write_atomic(&args.out, run.to_trec(&args.tag).as_bytes())?;
    print_json(&json!({"queries": run.len(), "out": args.out}));
    Ok(())
}

fn read_pairs(path: &Path) -> Result<Vec<CasePair>> {
    read_jsonl::<CasePair>(path)?
        .into_iter()
        .map(|(line, p)| {
            CasePair::new(p.left_id, p.right_id)
                .ok_or_else(|| anyhow!("{}:{line}: pair of a case with itself", path.display()))
        })
        .collect()
}

fn cmd_augment(cfg: &Config, cmd: AugmentCmd) -> Result<()> {
    match cmd {
        AugmentCmd::Sample { cases, n, seed, out } => {
            let store = load_cases(&cases)?;
            let pairs = sample_pairs(&store, n.unwrap_or(cfg.augment.pairs), seed.unwrap_or(cfg.augment.seed))?;
            write_jsonl_atomic(&out, &pairs)?;
            print_json(&json!({"pairs": pairs.len(), "out": out}));
        }
        AugmentCmd::Prerank { cases, pairs, top, out } => {
            let store = load_cases(&cases)?;
            let pairs = read_pairs(&pairs)?;
            let scorer = Bm25PairScorer {
                tokenizer: tokenizer_of(cfg)?,
                params: bm25_of(cfg),
            };
            let ranked = prerank_pairs(&pairs, &store, &scorer, top.unwrap_or(cfg.augment.prerank_top))?;
            write_jsonl_atomic(&out, ranked.iter().map(|(p, _)| p))?;
            print_json(&json!({"kept": ranked.len(), "of": pairs.len(), "out": out}));
        }
        AugmentCmd::Annotate {
            cases,
            pairs,
            out,
            mock,
            limit,
        } => {
            let store = load_cases(&cases)?;
            let pairs = read_pairs(&pairs)?;
            let transcript = (!mock).then(|| out.with_extension("transcript.jsonl"));
            let judge = backend(cfg, mock, transcript)?;
            let engine = engine(cfg, judge, cfg.augment.temperature)?;
            let run = annotate_pairs(
                &engine,
                &store,
                &pairs,
                &AnnotateOptions {
                    run_id: "augment".into(),
                    parallelism: cfg.parallelism,
                    checkpoint: Some(out.clone()),
                    limit,
                    ..AnnotateOptions::default()
                },
            )?;
            print_json(&json!({
                "judged": run.newly_judged,
                "resumed": run.resumed,
                "pending": run.pending,
                "failed": run.failures(),
                "out": out,
            }));
        }
        AugmentCmd::Build {
            input,
            spec,
            name,
            size,
            mode,
            seed,
            distribution_from,
            out,
        } => {
            let annotated: Vec<AnnotatedPair> = load_records(&input)?
                .into_iter()
                .map(|r| AnnotatedPair {
                    pair: CasePair {
                        left_id: r.query_id.clone(),
                        right_id: r.candidate_id.clone(),
                    },
                    record: r,
                })
                .collect();
            let mut spec: DatasetSpec = match spec {
                Some(p) => read_json(&p)?,
                None => DatasetSpec {
                    name: "dataset".into(),
                    size: annotated.len(),
                    mode: DatasetMode::Random,
                    target_distribution: None,
                    seed: cfg.augment.seed,
                },
            };
            if let Some(n) = name {
                spec.name = n;
            }
            if let Some(s) = size {
                spec.size = s;
            }
            if let Some(m) = mode {
                spec.mode = match m {
                    ModeArg::DistributionMatched => DatasetMode::DistributionMatched,
                    ModeArg::Random => DatasetMode::Random,
                };
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(q) = distribution_from {
                let qrels = Qrels::load(&q)?;
                let labels = qrels.queries().flat_map(|(_, m)| m.values().copied().collect::<Vec<_>>());
                spec.target_distribution = Some(label_distribution(labels));
            }
            if spec.mode == DatasetMode::DistributionMatched && spec.target_distribution.is_none() {
                return Err(usage("distribution_matched needs a spec with target_distribution or --distribution-from"));
            }
            let ds = build_dataset(&annotated, &spec)?;
            write_jsonl_atomic(&out, &ds)?;
            write_json_atomic(&spec_path(&out), &spec)?;
            let mut hist: BTreeMap<u8, usize> = BTreeMap::new();
            for a in &ds {
                *hist.entry(a.label()).or_default() += 1;
            }
            print_json(&json!({"size": ds.len(), "histogram": hist, "out": out}));
        }
        AugmentCmd::Export {
            input,
            cases,
            format,
            spec,
            out_dir,
        } => {
            let store = load_cases(&cases)?;
            let ds: Vec<AnnotatedPair> = read_jsonl(&input)?.into_iter().map(|(_, a)| a).collect();
            let spec: DatasetSpec = read_json(&spec.unwrap_or_else(|| spec_path(&input)))?;
            let format = match format {
                FormatArg::LabelOnly => ExportFormat::LabelOnly,
                FormatArg::Rationale => ExportFormat::Rationale,
            };
            let manifest = export_dataset(&ds, &store, format, &spec, &out_dir)?;
            print_json(&serde_json::to_value(&manifest)?);
        }
    }
    Ok(())
}

fn spec_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".spec.json");
    PathBuf::from(s)
}
