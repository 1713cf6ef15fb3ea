//! Subcommand arguments and implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use intent_core::curation::{
    assemble_augmented, select_high_confidence, split_train_val, truncate_tokens, AugmentedSet, HighConfidenceSet,
    LabeledQuery, StratifiedSample, StratifiedSampler, WhitespaceTokenizer, MAX_TOKENS, THRESHOLDS, TRAIN_RATIO,
};
use intent_core::eval::{
    compare, gold_labels, ComparisonConfig, ComparisonTable, PredictionSet, System, DEFAULT_ALPHA, DEFAULT_ITERATIONS,
};
use intent_core::hybrid::{hybrid_classify, HybridPolicy, WsEvidence};
use intent_core::labeling::{FunctionSet, Labeler};
use intent_core::pos::Tagger;
use intent_core::prompt::{FewShotBank, PromptAssets, Scenario};
use intent_core::{GoldRecord, GoldSet, IntentLabel, Provenance, Vote};
use serde::{Deserialize, Serialize};

use crate::corpus::{label_corpus, Parallel};
use crate::error::{Error, Result};
use crate::llm::{classify_batch, LlmClient, LlmError, ModelEndpoint};
use crate::manifest::{sibling_path, ManifestBuilder};
use crate::records::{
    create, open_records, read_json, read_records, write_json, write_jsonl, ExportRecord, Format, Record, RecordReader,
    TsvLayout,
};
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "intent", version, about = "Query intent labeling, curation and evaluation")]
pub struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weak-label a query file with a labeling-function set.
    Label(LabelArgs),
    /// Classify queries with a hosted chat model under a prompt scenario.
    ClassifyLlm(ClassifyArgs),
    /// Draw a class-balanced random sample from a labeled file.
    Sample(SampleArgs),
    /// Split a sample into train and validation exports.
    Split(SplitArgs),
    /// Select high-confidence predictions per class.
    SelectHc(SelectHcArgs),
    /// Join a random sample and a high-confidence selection.
    Assemble(AssembleArgs),
    /// Score systems against gold labels with significance tests.
    Eval(EvalArgs),
    /// Combine LLM and weak-label predictions.
    Hybrid(HybridArgs),
    /// Measure labeling throughput on synthetic queries.
    Bench(BenchArgs),
    /// Execute a multi-stage pipeline from a config file.
    Run(RunArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TsvArgs {
    /// TSV column holding the query text.
    #[arg(long, default_value_t = 1)]
    pub query_column: usize,
    /// TSV column holding the query id.
    #[arg(long, default_value_t = 0, conflicts_with = "no_id")]
    pub id_column: usize,
    /// TSV input has no id column; ids become content hashes.
    #[arg(long)]
    pub no_id: bool,
    /// TSV column holding a gold or weak label.
    #[arg(long)]
    pub label_column: Option<usize>,
}

impl TsvArgs {
    pub fn layout(&self) -> TsvLayout {
        TsvLayout {
            query_column: self.query_column,
            id_column: if self.no_id { None } else { Some(self.id_column) },
            label_column: self.label_column,
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LabelArgs {
    /// Query file (.tsv or JSONL).
    #[arg(long)]
    pub input: PathBuf,
    /// Labeling-function set (JSON); the shipped set when omitted.
    #[arg(long)]
    pub functions: Option<PathBuf>,
    /// Weak-label records (JSONL).
    #[arg(long)]
    pub output: PathBuf,
    /// Labeling threads; output is identical for any value.
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    #[command(flatten)]
    pub tsv: TsvArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClassifyArgs {
    /// definitions_only | definitions_keywords | definitions_keywords_few_shot | clue_and_reasoning
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Scenario,
    /// Endpoint config (JSON).
    #[arg(long)]
    pub endpoint: PathBuf,
    /// Query file (.tsv or JSONL).
    #[arg(long)]
    pub input: PathBuf,
    /// Prediction records (JSONL); unparseable answers have no label.
    #[arg(long)]
    pub output: PathBuf,
    /// Few-shot bank (JSONL); the shipped bank when omitted.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Prompt wording file; the shipped wording when omitted.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    /// Run report path; defaults to `<output>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub tsv: TsvArgs,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: intent_core::Error| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    /// Labeled query file.
    #[arg(long)]
    pub input: PathBuf,
    /// Records drawn from every class.
    #[arg(long)]
    pub per_class: usize,
    /// Sampling seed; generated and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: PathBuf,
    /// Corpus identifier recorded in the manifest; defaults to the input path.
    #[arg(long)]
    pub source: Option<String>,
    #[command(flatten)]
    pub tsv: TsvArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    /// Sample file written by `sample`.
    #[arg(long)]
    pub input: PathBuf,
    /// Share of each class kept for training.
    #[arg(long, default_value_t = TRAIN_RATIO)]
    pub ratio: f64,
    /// Shuffle seed; generated and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Queries are cut to this many whitespace tokens.
    #[arg(long, default_value_t = MAX_TOKENS)]
    pub max_tokens: usize,
    /// Output directory for train.jsonl, validation.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectHcArgs {
    /// Predictions with confidences (JSONL).
    #[arg(long)]
    pub input: PathBuf,
    /// Minimum confidence, inclusive (0.88, 0.90, 0.95 or 0.97 by convention).
    #[arg(long)]
    pub threshold: f64,
    /// Records selected from every class.
    #[arg(long)]
    pub per_class: usize,
    /// Sampling seed; generated and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Files whose query ids are excluded (repeatable).
    #[arg(long)]
    pub exclude: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    /// `{"query", "label"}` lines for fine-tuning.
    Export,
    /// Full records with ids.
    Records,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AssembleArgs {
    /// Random sample written by `sample`.
    #[arg(long)]
    pub random: PathBuf,
    /// Selection written by `select-hc`.
    #[arg(long)]
    pub high_conf: PathBuf,
    /// Threshold the selection was made with; every selected confidence is checked against it.
    #[arg(long)]
    pub threshold: f64,
    /// Shuffle seed; generated and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportFormat::Export)]
    pub format: ExportFormat,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Gold-labeled queries.
    #[arg(long)]
    pub gold: PathBuf,
    /// Prediction files as `name=path` or `path` (name = file stem). The
    /// first is the baseline unless `--baseline` is given.
    #[arg(long, required = true, num_args = 1..)]
    pub preds: Vec<String>,
    /// Name of the baseline system.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Permutation test iterations.
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: usize,
    /// Family-wise significance level before Bonferroni correction.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Permutation seed; generated and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bonferroni family size; defaults to challengers × 3.
    #[arg(long)]
    pub family_size: Option<usize>,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a markdown table here.
    #[arg(long)]
    pub markdown: Option<PathBuf>,
    /// Threads for permutation iterations; results are identical for any value.
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HybridArgs {
    /// Output of `classify-llm`.
    #[arg(long)]
    pub llm_preds: PathBuf,
    /// Output of `label` over the same queries.
    #[arg(long)]
    pub ws_preds: PathBuf,
    /// Policy config (JSON), e.g. `{"mode": "filter_agree", "ws_min_confidence": 0.9}`.
    #[arg(long)]
    pub policy: PathBuf,
    /// Combined predictions (JSONL), in LLM file order.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// Number of synthetic queries.
    #[arg(long, default_value_t = 60_000)]
    pub n: usize,
    /// Generator seed; generated and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threads for the parallel pass.
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    /// Labeling-function set (JSON); the shipped set when omitted.
    #[arg(long)]
    pub functions: Option<PathBuf>,
    /// Write the benchmark report here as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    /// Pipeline config (JSON).
    pub config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Label(a) => label(&a).map(drop),
        Command::ClassifyLlm(a) => classify_llm(&a),
        Command::Sample(a) => sample(&a).map(drop),
        Command::Split(a) => split(&a),
        Command::SelectHc(a) => select_hc(&a).map(drop),
        Command::Assemble(a) => assemble(&a).map(drop),
        Command::Eval(a) => eval(&a).map(drop),
        Command::Hybrid(a) => hybrid(&a),
        Command::Bench(a) => bench(&a).map(drop),
        Command::Run(a) => run(&a),
    }
}

/// The given seed, or a fresh one announced on stderr.
pub fn resolve_seed(seed: Option<u64>, what: &str) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("{what}: no --seed given, using seed {s}");
        s
    })
}

pub fn load_labeler(functions: Option<&Path>) -> Result<Labeler> {
    let set = match functions {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            FunctionSet::from_json(&text)?
        }
        None => FunctionSet::builtin(),
    };
    Ok(Labeler::new(&set, Tagger::builtin())?)
}

pub fn label(a: &LabelArgs) -> Result<crate::corpus::LabelStats> {
    let labeler = load_labeler(a.functions.as_deref())?;
    let mut manifest = ManifestBuilder::new("label", a);
    manifest.input(&a.input)?;
    if let Some(f) = &a.functions {
        manifest.input(f)?;
    }
    let reader = open_records(&a.input, a.tsv.layout())?;
    let out = create(&a.output)?;
    let stats = label_corpus(&labeler, reader, out, a.workers)?;
    log::info!(
        "labeled {} queries ({} malformed) in {:.0} ms, {:.0} q/s on {} workers",
        stats.labeled,
        stats.malformed,
        stats.elapsed_ms,
        stats.queries_per_sec,
        stats.workers
    );
    manifest.output(&a.output).count("stats", &stats);
    manifest.write(&sibling_path(&a.output))?;
    Ok(stats)
}

fn load_bank(path: Option<&Path>) -> Result<FewShotBank> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            Ok(FewShotBank::from_jsonl(&text)?)
        }
        None => Ok(FewShotBank::builtin()),
    }
}

fn load_assets(path: Option<&Path>) -> Result<PromptAssets> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            Ok(PromptAssets::parse(&text)?)
        }
        None => Ok(PromptAssets::builtin()),
    }
}

pub fn classify_llm(a: &ClassifyArgs) -> Result<()> {
    let endpoint: ModelEndpoint = read_json(&a.endpoint)?;
    let client = LlmClient::from_env(endpoint)?;
    let bank = if a.scenario.needs_bank() { Some(load_bank(a.bank.as_deref())?) } else { None };
    let assets = load_assets(a.assets.as_deref())?;
    let queries = read_records(&a.input, a.tsv.layout())?
        .iter()
        .map(Record::to_query)
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = ManifestBuilder::new("classify-llm", a);
    manifest.input(&a.input)?.input(&a.endpoint)?;
    let (items, report) = classify_batch(&client, a.scenario, &queries, bank.as_ref(), &assets)?;
    write_jsonl(
        &a.output,
        items.iter().map(|it| Record {
            id: Some(it.query.key()),
            query: it.query.text().to_string(),
            label: it.label,
            provenance: Some(Provenance::LlmIcl),
            ..Default::default()
        }),
    )?;
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.output, ".report.json"));
    write_json(&report_path, &report)?;
    log::info!(
        "{} queries: {} parsed, {} out-of-vocabulary, {} errors",
        report.queries,
        report.parsed,
        report.oov_count,
        report.error_count
    );
    manifest.output(&a.output).output(&report_path).count("report", &report);
    manifest.write(&sibling_path(&a.output))?;
    if report.queries > 0 && report.error_count == report.queries {
        let first = items.iter().find_map(|it| it.error.clone()).unwrap_or_default();
        return Err(LlmError::AllFailed { count: report.queries, first }.into());
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn class_counts(sample: &StratifiedSample) -> [usize; 3] {
    IntentLabel::ALL.map(|l| sample.class(l).len())
}

pub fn sample(a: &SampleArgs) -> Result<StratifiedSample> {
    let seed = resolve_seed(a.seed, "sample");
    let mut manifest = ManifestBuilder::new("sample", a);
    manifest.seed("sample", seed).input(&a.input)?;
    let mut sampler = StratifiedSampler::new(a.per_class, seed)?;
    for (n, r) in open_records(&a.input, a.tsv.layout())? {
        let r = r.map_err(|e| Error::Data(format!("{}:{n}: {e}", a.input.display())))?;
        sampler.push(r.to_labeled()?);
    }
    let duplicates = sampler.duplicates();
    let source = a.source.clone().unwrap_or_else(|| a.input.display().to_string());
    let sample = sampler.finish(&source)?;
    write_jsonl(&a.output, sample.iter().map(Record::from_labeled))?;
    manifest.output(&a.output).count("per_class", class_counts(&sample)).count("duplicates_skipped", duplicates);
    manifest.write(&sibling_path(&a.output))?;
    Ok(sample)
}

/// Rebuild a sample from its JSONL form.
pub fn read_sample(path: &Path, seed: u64) -> Result<StratifiedSample> {
    let mut per_class: [Vec<LabeledQuery>; 3] = Default::default();
    for r in read_records(path, TsvLayout::default())? {
        let lq = r.to_labeled()?;
        per_class[lq.label.index()].push(lq);
    }
    Ok(StratifiedSample { per_class, seed, source: path.display().to_string() })
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, "split");
    let mut manifest = ManifestBuilder::new("split", a);
    manifest.seed("split", seed).input(&a.input)?;
    let sample = read_sample(&a.input, seed)?;
    let parts = split_train_val(&sample, a.ratio, seed)?;
    std::fs::create_dir_all(&a.out)?;
    let mut truncated = 0usize;
    let mut export = |records: &[LabeledQuery], name: &str| -> Result<usize> {
        let rows = records
            .iter()
            .map(|r| {
                let t = truncate_tokens(&r.query, a.max_tokens, &WhitespaceTokenizer)?;
                truncated += t.truncated as usize;
                Ok(ExportRecord { query: t.query.text().to_string(), label: r.label })
            })
            .collect::<Result<Vec<_>>>()?;
        write_jsonl(&a.out.join(name), rows)
    };
    let n_train = export(&parts.train, "train.jsonl")?;
    let n_val = export(&parts.validation, "validation.jsonl")?;
    let per_class = |rs: &[LabeledQuery]| IntentLabel::ALL.map(|l| rs.iter().filter(|r| r.label == l).count());
    manifest
        .output(&a.out.join("train.jsonl"))
        .output(&a.out.join("validation.jsonl"))
        .count("train", n_train)
        .count("validation", n_val)
        .count("train_per_class", per_class(&parts.train))
        .count("validation_per_class", per_class(&parts.validation))
        .count("truncated", truncated);
    manifest.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn read_ids(paths: &[PathBuf]) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for p in paths {
        for r in read_records(p, TsvLayout::default())? {
            ids.insert(r.key()?);
        }
    }
    Ok(ids)
}

pub fn select_hc(a: &SelectHcArgs) -> Result<HighConfidenceSet> {
    let seed = resolve_seed(a.seed, "select-hc");
    if !THRESHOLDS.contains(&a.threshold) {
        log::warn!("threshold {} is not one of the standard values {THRESHOLDS:?}", a.threshold);
    }
    let mut manifest = ManifestBuilder::new("select-hc", a);
    manifest.seed("select_hc", seed).input(&a.input)?;
    for p in &a.exclude {
        manifest.input(p)?;
    }
    let exclude = read_ids(&a.exclude)?;
    let preds = read_records(&a.input, TsvLayout::default())?
        .iter()
        .map(Record::to_scored)
        .collect::<Result<Vec<_>>>()?;
    let selected = select_high_confidence(preds, a.threshold, a.per_class, seed, &exclude)?;
    write_jsonl(&a.output, selected.iter().map(|s| Record::from_scored(s, None)))?;
    manifest
        .output(&a.output)
        .count("selected", selected.len())
        .count("excluded_ids", exclude.len())
        .count("min_confidence", selected.min_confidence());
    manifest.write(&sibling_path(&a.output))?;
    Ok(selected)
}

pub fn assemble(a: &AssembleArgs) -> Result<AugmentedSet> {
    let seed = resolve_seed(a.seed, "assemble");
    let mut manifest = ManifestBuilder::new("assemble", a);
    manifest.seed("assemble", seed).input(&a.random)?.input(&a.high_conf)?;
    let random = read_sample(&a.random, seed)?;
    let mut per_class: [Vec<_>; 3] = Default::default();
    for r in read_records(&a.high_conf, TsvLayout::default())? {
        let s = r.to_scored()?;
        per_class[s.label.index()].push(s);
    }
    let hc = HighConfidenceSet { threshold: a.threshold, per_class };
    let set = assemble_augmented(random, hc, seed)?;
    write_augmented(&a.output, &set, a.format)?;
    manifest.output(&a.output).count("records", set.records.len()).count("per_class", set.class_counts());
    manifest.write(&sibling_path(&a.output))?;
    Ok(set)
}

fn write_augmented(path: &Path, set: &AugmentedSet, format: ExportFormat) -> Result<usize> {
    match format {
        ExportFormat::Export => write_jsonl(path, set.records.iter().map(ExportRecord::from)),
        ExportFormat::Records => write_jsonl(path, set.records.iter().map(Record::from_labeled)),
    }
}

fn read_gold(path: &Path) -> Result<GoldSet> {
    let records = read_records(path, TsvLayout::default())?
        .iter()
        .map(|r| r.to_labeled().map(|l| GoldRecord { query: l.query, label: l.label }))
        .collect::<Result<Vec<_>>>()?;
    Ok(GoldSet::new(records)?)
}

fn read_prediction_set(path: &Path) -> Result<PredictionSet> {
    let mut set = PredictionSet::new();
    for r in read_records(path, TsvLayout::default())? {
        set.insert(r.key()?, r.label)?;
    }
    Ok(set)
}

fn parse_system_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| arg.to_string());
            (name, path)
        }
    }
}

/// Score named prediction files against a gold file.
pub fn evaluate_files(
    gold_path: &Path,
    systems: &[(String, PathBuf)],
    baseline: Option<&str>,
    config: &ComparisonConfig,
    workers: usize,
) -> Result<ComparisonTable> {
    let gold = read_gold(gold_path)?;
    let labels = gold_labels(&gold);
    let mut aligned = Vec::new();
    let mut unmatched = BTreeMap::new();
    for (name, path) in systems {
        if aligned.iter().any(|s: &System| &s.name == name) {
            return Err(Error::Usage(format!("system name {name:?} given twice")));
        }
        let (outcomes, extra) = read_prediction_set(path)?.align(&gold);
        if extra > 0 {
            log::warn!("{name}: {extra} predictions have no gold query");
        }
        unmatched.insert(name.clone(), extra);
        aligned.push(System { name: name.clone(), outcomes });
    }
    let base_idx = match baseline {
        Some(b) => aligned
            .iter()
            .position(|s| s.name == b)
            .ok_or_else(|| Error::Usage(format!("baseline {b:?} is not among the prediction files")))?,
        None => 0,
    };
    let base = aligned.remove(base_idx);
    let run = |runner: &dyn intent_core::eval::PermutationRunner| compare(&labels, &base, &aligned, config, runner);
    let mut table = match crate::corpus::pool(workers)? {
        Some(pool) => pool.install(|| run(&Parallel::default()))?,
        None => run(&intent_core::eval::Serial)?,
    };
    for row in &mut table.rows {
        row.report.unmatched_predictions = unmatched[&row.system];
    }
    Ok(table)
}

pub fn eval(a: &EvalArgs) -> Result<ComparisonTable> {
    let seed = resolve_seed(a.seed, "eval");
    let systems: Vec<_> = a.preds.iter().map(|p| parse_system_arg(p)).collect();
    let mut manifest = ManifestBuilder::new("eval", a);
    manifest.seed("permutation", seed).input(&a.gold)?;
    for (_, p) in &systems {
        manifest.input(p)?;
    }
    let config = ComparisonConfig { iterations: a.iterations, alpha: a.alpha, seed, family_size: a.family_size };
    let table = evaluate_files(&a.gold, &systems, a.baseline.as_deref(), &config, a.workers)?;
    write_json(&a.out, &table)?;
    manifest.output(&a.out);
    if let Some(md) = &a.markdown {
        let mut f = create(md)?;
        f.write_all(table.to_markdown().as_bytes())?;
        f.flush()?;
        manifest.output(md);
    }
    manifest.write(&sibling_path(&a.out))?;
    Ok(table)
}

/// Weak-label evidence from a weak-label record, using its votes when present.
pub fn ws_evidence(r: &Record) -> Result<WsEvidence> {
    let label = r.label.ok_or_else(|| Error::Data(format!("weak record {:?} has no label", r.query)))?;
    let confidence = r.confidence.unwrap_or(1.0);
    let defaulted = r.defaulted.unwrap_or(false);
    let mut ev = WsEvidence::from_label(label, confidence, defaulted);
    if let (Some(votes), false) = (&r.votes, defaulted) {
        let mut counts = [0usize; 3];
        for v in votes.values() {
            if let Vote::Label(l) = v {
                counts[l.index()] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        if total > 0 {
            ev.fractions = counts.map(|c| c as f64 / total as f64);
        }
    }
    Ok(ev)
}

/// Combine LLM and weak-label records (joined by query key) in LLM order.
pub fn combine(llm: &[Record], ws: &[Record], policy: &HybridPolicy) -> Result<Vec<Record>> {
    policy.validate()?;
    let mut by_key = BTreeMap::new();
    for r in ws {
        by_key.insert(r.key()?, r);
    }
    llm.iter()
        .map(|r| {
            let query = r.to_query()?;
            let key = query.key();
            let w = by_key.get(&key).ok_or_else(|| Error::Data(format!("no weak label for query {key}")))?;
            let pred = r.to_prediction(Provenance::LlmIcl)?;
            let out = hybrid_classify(&query, pred.as_ref(), &ws_evidence(w)?, policy)?;
            let mut rec = Record::from_prediction(&query, &out.prediction);
            rec.defaulted = Some(out.defaulted);
            Ok(rec)
        })
        .collect()
}

pub fn hybrid(a: &HybridArgs) -> Result<()> {
    let policy: HybridPolicy = read_json(&a.policy)?;
    let mut manifest = ManifestBuilder::new("hybrid", a);
    manifest.input(&a.llm_preds)?.input(&a.ws_preds)?.input(&a.policy)?;
    let llm = read_records(&a.llm_preds, TsvLayout::default())?;
    let ws = read_records(&a.ws_preds, TsvLayout::default())?;
    let out = combine(&llm, &ws, &policy)?;
    let n = write_jsonl(&a.out, &out)?;
    manifest.output(&a.out).count("records", n);
    manifest.write(&sibling_path(&a.out))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub seed: u64,
    pub serial_ms: f64,
    pub serial_qps: f64,
    pub workers: usize,
    pub parallel_ms: f64,
    pub parallel_qps: f64,
    pub identical: bool,
}

pub fn bench(a: &BenchArgs) -> Result<BenchReport> {
    let seed = resolve_seed(a.seed, "bench");
    let labeler = load_labeler(a.functions.as_deref())?;
    let mut input = Vec::new();
    for (i, (q, _)) in synth::queries(a.n, seed).into_iter().enumerate() {
        let rec = Record { id: Some(format!("b{i}")), query: q, ..Default::default() };
        input.extend_from_slice(rec.to_line().as_bytes());
        input.push(b'\n');
    }
    let run = |workers| -> Result<(Vec<u8>, crate::corpus::LabelStats)> {
        let mut out = Vec::with_capacity(input.len() * 4);
        let reader = RecordReader::new(input.as_slice(), Format::Jsonl, TsvLayout::default());
        let stats = label_corpus(&labeler, reader, &mut out, workers)?;
        Ok((out, stats))
    };
    let (serial, s) = run(1)?;
    let (parallel, p) = run(a.workers)?;
    let report = BenchReport {
        n: a.n,
        seed,
        serial_ms: s.elapsed_ms,
        serial_qps: s.queries_per_sec,
        workers: p.workers,
        parallel_ms: p.elapsed_ms,
        parallel_qps: p.queries_per_sec,
        identical: serial == parallel,
    };
    eprintln!(
        "{} queries: serial {:.0} ms ({:.0} q/s), {} workers {:.0} ms ({:.0} q/s), identical output: {}",
        report.n, report.serial_ms, report.serial_qps, report.workers, report.parallel_ms, report.parallel_qps, report.identical
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if !report.identical {
        return Err(Error::Data("parallel labeling output differs from serial output".into()));
    }
    Ok(report)
}

fn default_per_class() -> usize {
    15_000
}
fn default_hc_per_class() -> usize {
    5_000
}
fn default_thresholds() -> Vec<f64> {
    THRESHOLDS.to_vec()
}
fn default_ratio() -> f64 {
    TRAIN_RATIO
}
fn default_max_tokens() -> usize {
    MAX_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalStage {
    pub gold: PathBuf,
    /// System name → prediction file. `weak` is added automatically when
    /// the gold file can be labeled.
    #[serde(default)]
    pub systems: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub family_size: Option<usize>,
    /// Weak-label the gold queries and include them as system `weak`.
    #[serde(default)]
    pub include_weak: bool,
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Declarative pipeline: label → sample → split → (select-hc → assemble per
/// threshold) → eval. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    /// Unlabeled query corpus (TSV or JSONL).
    pub corpus: PathBuf,
    #[serde(default)]
    pub tsv: Option<TsvLayout>,
    #[serde(default)]
    pub functions: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_ratio")]
    pub train_ratio: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Model predictions with confidences for high-confidence selection.
    #[serde(default)]
    pub predictions: Option<PathBuf>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_hc_per_class")]
    pub hc_per_class: usize,
    #[serde(default)]
    pub eval: Option<EvalStage>,
}

impl RunConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.out);
        if let Some(f) = &mut self.functions {
            fix(f);
        }
        if let Some(p) = &mut self.predictions {
            fix(p);
        }
        if let Some(e) = &mut self.eval {
            fix(&mut e.gold);
            e.systems.values_mut().for_each(fix);
        }
    }
}

pub fn run(a: &RunArgs) -> Result<()> {
    let mut cfg: RunConfig = read_json(&a.config)?;
    cfg.resolve(a.config.parent().unwrap_or(Path::new(".")));
    if let Some(out) = &a.out {
        cfg.out = out.clone();
    }
    run_pipeline(&cfg, &a.config)
}

fn threshold_name(t: f64) -> String {
    format!("augmented_{t:.2}.jsonl")
}

pub fn run_pipeline(cfg: &RunConfig, config_path: &Path) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    let out = |name: &str| cfg.out.join(name);
    let mut manifest = ManifestBuilder::new("run", cfg);
    manifest.seed("pipeline", cfg.seed).input(config_path)?.input(&cfg.corpus)?;

    // label
    let labeler = load_labeler(cfg.functions.as_deref())?;
    let reader = open_records(&cfg.corpus, cfg.tsv.unwrap_or_default())?;
    let stats = label_corpus(&labeler, reader, create(&out("weak_labels.jsonl"))?, cfg.workers)?;
    log::info!("labeled {} queries", stats.labeled);
    manifest.output(&out("weak_labels.jsonl")).count("label", &stats);

    // sample
    let mut sampler = StratifiedSampler::new(cfg.per_class, cfg.seed)?;
    for (n, r) in open_records(&out("weak_labels.jsonl"), TsvLayout::default())? {
        let r = r.map_err(|e| Error::Data(format!("weak_labels.jsonl:{n}: {e}")))?;
        sampler.push(r.to_labeled()?);
    }
    let sample = sampler.finish(&cfg.corpus.display().to_string())?;
    write_jsonl(&out("sample.jsonl"), sample.iter().map(Record::from_labeled))?;
    manifest.output(&out("sample.jsonl")).count("sample_per_class", class_counts(&sample));

    // split
    let parts = split_train_val(&sample, cfg.train_ratio, cfg.seed)?;
    let export = |records: &[LabeledQuery]| -> Result<Vec<ExportRecord>> {
        records
            .iter()
            .map(|r| {
                let t = truncate_tokens(&r.query, cfg.max_tokens, &WhitespaceTokenizer)?;
                Ok(ExportRecord { query: t.query.text().to_string(), label: r.label })
            })
            .collect()
    };
    write_jsonl(&out("train.jsonl"), export(&parts.train)?)?;
    write_jsonl(&out("validation.jsonl"), export(&parts.validation)?)?;
    manifest
        .output(&out("train.jsonl"))
        .output(&out("validation.jsonl"))
        .count("train", parts.train.len())
        .count("validation", parts.validation.len());

    // high-confidence augmentation
    if let Some(pred_path) = &cfg.predictions {
        manifest.input(pred_path)?;
        let preds = read_records(pred_path, TsvLayout::default())?
            .iter()
            .map(Record::to_scored)
            .collect::<Result<Vec<_>>>()?;
        let exclude = sample.ids();
        let mut sizes = BTreeMap::new();
        for &t in &cfg.thresholds {
            let hc = select_high_confidence(preds.iter().cloned(), t, cfg.hc_per_class, cfg.seed, &exclude)?;
            let set = assemble_augmented(sample.clone(), hc, cfg.seed)?;
            let path = out(&threshold_name(t));
            write_augmented(&path, &set, ExportFormat::Export)?;
            manifest.output(&path);
            sizes.insert(format!("{t:.2}"), set.records.len());
        }
        manifest.count("augmented", sizes);
    }

    // evaluation
    if let Some(e) = &cfg.eval {
        let mut systems: Vec<(String, PathBuf)> = e.systems.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        if e.include_weak {
            let reader = open_records(&e.gold, TsvLayout::default())?;
            label_corpus(&labeler, reader, create(&out("gold_weak.jsonl"))?, cfg.workers)?;
            manifest.output(&out("gold_weak.jsonl"));
            systems.insert(0, ("weak".to_string(), out("gold_weak.jsonl")));
        }
        manifest.input(&e.gold)?;
        for p in e.systems.values() {
            manifest.input(p)?;
        }
        let config =
            ComparisonConfig { iterations: e.iterations, alpha: e.alpha, seed: cfg.seed, family_size: e.family_size };
        let table = evaluate_files(&e.gold, &systems, e.baseline.as_deref(), &config, cfg.workers)?;
        write_json(&out("eval_report.json"), &table)?;
        std::fs::write(out("eval_report.md"), table.to_markdown())?;
        manifest.output(&out("eval_report.json")).output(&out("eval_report.md"));
    }
    manifest.write(&out("manifest.json"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_args() {
        assert_eq!(parse_system_arg("icl=out/p.jsonl"), ("icl".into(), PathBuf::from("out/p.jsonl")));
        assert_eq!(parse_system_arg("out/weak.jsonl"), ("weak".into(), PathBuf::from("out/weak.jsonl")));
    }

    #[test]
    fn evidence_from_votes() {
        let r = Record::parse(
            r#"{"query":"q","label":"transactional","confidence":0.667,"defaulted":false,"votes":{"a":"transactional","b":"transactional","c":"informational","d":"abstain"}}"#,
        )
        .unwrap();
        let ev = ws_evidence(&r).unwrap();
        assert_eq!(ev.fractions, [1.0 / 3.0, 0.0, 2.0 / 3.0]);
        let bare = Record::parse(r#"{"query":"q","label":"navigational","confidence":0.5}"#).unwrap();
        assert_eq!(ws_evidence(&bare).unwrap().fractions, [0.25, 0.5, 0.25]);
    }

    #[test]
    fn run_config_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"out":"o","seed":1,"corpus":"c.tsv"}"#).unwrap();
        assert_eq!((cfg.per_class, cfg.hc_per_class, cfg.max_tokens), (15_000, 5_000, 32));
        assert_eq!(cfg.thresholds, vec![0.88, 0.90, 0.95, 0.97]);
        assert_eq!(threshold_name(0.9), "augmented_0.90.jsonl");
        assert!(serde_json::from_str::<RunConfig>(r#"{"out":"o","seed":1,"corpus":"c","bogus":1}"#).is_err());
    }
}
