//! Command-line driver.
//!
//! Every command writes its artifacts plus a `manifest.json` (config hash,
//! seed, version). Exit codes: 0 success, 1 runtime failure, 2 usage or
//! configuration error (the message names the key), 3 data error (the
//! message names the file and, where known, the line).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lexmine::config::{sha256_hex, KvConfig};
use lexmine::corpus::{load_qrels, load_queries, synth_benchmark, Dataset, SynthSpec};
use lexmine::eval::{language_table, mrr_at_k, paired_t_test, recall_at_k_with, MetricsReport, RecallMode, RunFile, TTest};
use lexmine::pipeline::{GeneratedData, Pipeline, PipelineConfig, RunStore};
use lexmine::querygen::GeneratorModel;
use lexmine::sparse::InvertedIndex;
use lexmine::Error;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "LEXMINE_DATA_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lexmine", version, about = "Lexicon-enhanced self-supervised dense retrieval training")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic multilingual benchmark.
    Synth(SynthArgs),
    /// Build the BM25 index of a dataset.
    Index(IndexArgs),
    /// Warm up the retriever and the generator on labeled data.
    Warmup(StageArgs),
    /// Mine training samples for one iteration.
    Mine(IterArgs),
    /// Train the generator and generate filtered queries for one iteration.
    Generate(IterArgs),
    /// Fine-tune on the mined and generated samples of one iteration.
    Train(IterArgs),
    /// Score a TREC run against qrels.
    Eval(EvalArgs),
    /// Warm-up plus all iterations, resuming completed stages.
    Pipeline(StageArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> lexmine::Result<KvConfig> {
        let mut kv = match &self.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::default(),
        };
        for o in &self.overrides {
            kv.set_override(o)?;
        }
        Ok(kv)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    /// Output directory (default: the data directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory (default: $LEXMINE_DATA_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct StageArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
    /// Dataset directory (default: $LEXMINE_DATA_DIR).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct IterArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Iteration to run (default: the first one without a report).
    #[arg(long)]
    iteration: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TestUnit {
    /// Pair per-query reciprocal ranks.
    Query,
    /// Pair per-language MRR means.
    Language,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// TREC run file.
    #[arg(long)]
    run: PathBuf,
    /// TREC qrels file.
    #[arg(long)]
    qrels: PathBuf,
    /// Cutoff (repeatable).
    #[arg(long = "k", default_values_t = [10usize])]
    k: Vec<usize>,
    /// Query JSONL used to aggregate by language.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Report relevant-set coverage instead of the query-level hit rate.
    #[arg(long)]
    coverage: bool,
    /// Second run for a paired t-test on MRR at the first cutoff.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TestUnit::Query)]
    test_unit: TestUnit,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Directory for `eval.json` and a manifest (default: stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage { key: String, message: String },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(key: &str, message: impl Into<String>) -> CliError {
    CliError::Usage {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Per-run record written next to every command's artifacts.
#[derive(Debug, Serialize)]
struct CommandManifest {
    command: &'static str,
    config_hash: String,
    seed: Option<u64>,
    version: &'static str,
    config: BTreeMap<String, String>,
}

impl CommandManifest {
    fn new(command: &'static str, seed: Option<u64>, config: BTreeMap<String, String>) -> Self {
        let config_hash = sha256_hex(lexmine::config::render(&config).as_bytes());
        CommandManifest {
            command,
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            config,
        }
    }

    fn write(&self, dir: &Path) -> CliResult {
        write_json(&dir.join("manifest.json"), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.workers {
        Some(0) => Err(usage("workers", "must be >= 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(usage("workers", e.to_string())),
        },
        None => run(cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage { key, message }) => {
            eprintln!("error: config key `{key}`: {message}");
            EXIT_CONFIG
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else if e.is_data() {
                EXIT_DATA
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Synth(a) => synth(a),
        Command::Index(a) => index(a),
        Command::Warmup(a) => warmup(a),
        Command::Mine(a) => mine(a),
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn data_dir(flag: Option<&PathBuf>) -> CliResult<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(usage("data", format!("pass --data or set {DATA_DIR_ENV}"))),
    }
}

/// Makes sure `dir` can receive fresh output: it must be absent or empty
/// unless `overwrite` is set, in which case it is cleared.
fn prepare_out(dir: &Path, overwrite: bool) -> CliResult {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty {
            if !overwrite {
                return Err(usage("out", format!("{} is not empty; pass --overwrite", dir.display())));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    let spec = SynthSpec::from_kv(a.config.load()?)?;
    let out = data_dir(a.out.as_ref())?;
    let bench = synth_benchmark(&spec, a.seed)?;
    prepare_out(&out, a.overwrite)?;
    bench.data.write_dir(&out)?;
    write_json(&out.join("truth.json"), &bench.truth)?;
    CommandManifest::new("synth", Some(a.seed), spec.to_kv()).write(&out)
}

fn index(a: IndexArgs) -> CliResult {
    let cfg = PipelineConfig::from_kv(a.config.load()?)?;
    let data = Dataset::load_dir(&data_dir(a.data.as_ref())?)?;
    let idx = InvertedIndex::build(&data.corpus, &cfg.tokenizer, cfg.bm25)?;
    prepare_out(&a.out, a.overwrite)?;
    idx.save(&a.out.join("bm25.json"))?;
    let config: BTreeMap<String, String> = cfg
        .to_kv()
        .into_iter()
        .filter(|(k, _)| k.starts_with("bm25.") || k.starts_with("tokenizer."))
        .collect();
    CommandManifest::new("index", None, config).write(&a.out)
}

struct Loaded {
    cfg: PipelineConfig,
    data: Dataset,
}

fn load_stage(a: &StageArgs) -> CliResult<Loaded> {
    let mut kv = a.config.load()?;
    kv.set("seed", a.seed);
    let cfg = PipelineConfig::from_kv(kv)?;
    let data = Dataset::load_dir(&data_dir(a.data.as_ref())?)?;
    Ok(Loaded { cfg, data })
}

fn pipeline(a: StageArgs) -> CliResult {
    let l = load_stage(&a)?;
    if a.overwrite && a.out.exists() {
        fs::remove_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    }
    let p = Pipeline::new(l.cfg, &l.data)?;
    let outcome = p.run(Some(&a.out))?;
    let summary: Vec<_> = outcome
        .reports
        .iter()
        .map(|r| {
            let mut m = BTreeMap::new();
            m.insert("iteration".to_string(), serde_json::json!(r.iteration));
            for metric in r.metrics.values().flat_map(|m| m.keys()).collect::<std::collections::BTreeSet<_>>() {
                if let Some(v) = r.mean_metric(p.target_languages(), metric) {
                    m.insert(format!("target_{metric}"), serde_json::json!(v));
                }
            }
            m
        })
        .collect();
    write_json(
        &a.out.join("summary.json"),
        &serde_json::json!({ "plateaued": outcome.plateaued, "iterations": summary }),
    )?;
    if let Some(last) = outcome.reports.last() {
        print!("{}", language_table(&last.metrics));
    }
    Ok(())
}

fn warmup(a: StageArgs) -> CliResult {
    let l = load_stage(&a)?;
    let p = Pipeline::new(l.cfg.clone(), &l.data)?;
    let store = RunStore::open(&a.out, &l.cfg)?;
    if store.load_report(0)?.is_some() && !a.overwrite {
        return Err(usage("out", format!("{} already holds a warm-up; pass --overwrite", a.out.display())));
    }
    let (state, report, run) = p.warmup()?;
    store.save_warmup(&state, &report, &run)?;
    print!("{}", language_table(&report.metrics));
    Ok(())
}

/// Resolves the iteration a stage command works on.
fn iteration_of(store: &RunStore, requested: Option<usize>) -> CliResult<usize> {
    if let Some(t) = requested {
        if t == 0 {
            return Err(usage("iteration", "iterations are numbered from 1"));
        }
        return Ok(t);
    }
    let mut t = 1;
    while store.load_report(t)?.is_some() {
        t += 1;
    }
    Ok(t)
}

fn guard(path: &Path, overwrite: bool) -> CliResult {
    if path.exists() && !overwrite {
        return Err(usage("out", format!("{} exists; pass --overwrite", path.display())));
    }
    Ok(())
}

fn mine(a: IterArgs) -> CliResult {
    let l = load_stage(&a.stage)?;
    let p = Pipeline::new(l.cfg.clone(), &l.data)?;
    let store = RunStore::open(&a.stage.out, &l.cfg)?;
    let t = iteration_of(&store, a.iteration)?;
    guard(&store.stage_dir(t).join("mined.jsonl"), a.stage.overwrite)?;
    let state = store.load_state(&p, t - 1)?;
    let mined = p.mine(&state, t)?;
    if mined.samples.is_empty() {
        return Err(Error::NoMinedSamples(format!("iteration {t}: no unlabeled query yielded a positive")).into());
    }
    store.save_mined(t, &mined)?;
    println!(
        "iteration {t}: {} samples from {} queries ({} dropped)",
        mined.samples.len(),
        mined.mined_queries,
        mined.dropped_queries
    );
    Ok(())
}

fn generate(a: IterArgs) -> CliResult {
    let l = load_stage(&a.stage)?;
    let p = Pipeline::new(l.cfg.clone(), &l.data)?;
    let store = RunStore::open(&a.stage.out, &l.cfg)?;
    let t = iteration_of(&store, a.iteration)?;
    guard(&store.stage_dir(t).join("generation.json"), a.stage.overwrite)?;
    let mut state = store.load_state(&p, t - 1)?;
    let generated = if p.generation_enabled(t) {
        p.generate(&mut state, t)?
    } else {
        GeneratedData::default()
    };
    store.save_generated(t, &generated, &state.generator)?;
    println!(
        "iteration {t}: {} of {} generated queries accepted",
        generated.pairs.iter().filter(|g| g.0.accepted).count(),
        generated.pairs.len()
    );
    Ok(())
}

fn train(a: IterArgs) -> CliResult {
    let l = load_stage(&a.stage)?;
    let p = Pipeline::new(l.cfg.clone(), &l.data)?;
    let store = RunStore::open(&a.stage.out, &l.cfg)?;
    let t = iteration_of(&store, a.iteration)?;
    guard(&store.stage_dir(t).join("report.json"), a.stage.overwrite)?;
    let mut state = store.load_state(&p, t - 1)?;
    let mined = store.load_mined(t, l.data.unlabeled_queries.len())?;
    let generated = match store.load_generated(t)? {
        Some(g) => {
            state.generator = GeneratorModel::load(&store.generator_path(t))?;
            g
        }
        None if p.generation_enabled(t) => {
            return Err(Error::io(
                store.stage_dir(t).join("generation.json"),
                std::io::Error::new(std::io::ErrorKind::NotFound, "run `generate` for this iteration first"),
            )
            .into());
        }
        None => GeneratedData::default(),
    };
    let out = p.train_iteration(&mut state, mined, generated)?;
    store.save_trained(&state, &out.report, &out.run)?;
    print!("{}", language_table(&out.report.metrics));
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    run: String,
    qrels: String,
    metrics: BTreeMap<String, f64>,
    by_language: BTreeMap<String, BTreeMap<String, f64>>,
    unjudged_run_queries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_test: Option<TTestReport>,
}

#[derive(Debug, Serialize)]
struct TTestReport {
    baseline: String,
    metric: String,
    unit: &'static str,
    #[serde(flatten)]
    result: TTest,
}

fn metric_reports(run: &RunFile, qrels: &lexmine::corpus::JudgmentSet, ks: &[usize], mode: RecallMode) -> CliResult<Vec<MetricsReport>> {
    let mut out = Vec::new();
    for &k in ks {
        out.push(mrr_at_k(run, qrels, k)?);
        out.push(recall_at_k_with(run, qrels, k, mode)?);
    }
    Ok(out)
}

fn eval(a: EvalArgs) -> CliResult {
    if a.k.contains(&0) {
        return Err(usage("k", "must be >= 1"));
    }
    let run = RunFile::read_trec(&a.run)?;
    let qrels = load_qrels(&a.qrels)?;
    let queries = a.queries.as_deref().map(load_queries).transpose()?;
    let mode = if a.coverage { RecallMode::Coverage } else { RecallMode::Hit };
    let reports = metric_reports(&run, &qrels, &a.k, mode)?;

    let mut metrics = BTreeMap::new();
    let mut by_language: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in &reports {
        metrics.insert(r.metric.clone(), r.mean);
        if let Some(q) = &queries {
            for (lang, v) in r.by_language(q) {
                by_language.entry(lang).or_default().insert(r.metric.clone(), v);
            }
        }
    }

    let t_test = match &a.baseline {
        None => None,
        Some(path) => {
            let base = RunFile::read_trec(path)?;
            let k = a.k[0];
            let ours = mrr_at_k(&run, &qrels, k)?;
            let theirs = mrr_at_k(&base, &qrels, k)?;
            let (xs, ys, unit) = match a.test_unit {
                TestUnit::Query => {
                    let xs: Vec<f64> = ours.per_query.values().copied().collect();
                    let ys: Vec<f64> = theirs.per_query.values().copied().collect();
                    (xs, ys, "query")
                }
                TestUnit::Language => {
                    let q = queries
                        .as_ref()
                        .ok_or_else(|| usage("test_unit", "language pairing needs --queries"))?;
                    let xs = ours.by_language(q);
                    let ys = theirs.by_language(q);
                    (xs.values().copied().collect(), ys.values().copied().collect(), "language")
                }
            };
            Some(TTestReport {
                baseline: path.display().to_string(),
                metric: ours.metric.clone(),
                unit,
                result: paired_t_test(&xs, &ys)?,
            })
        }
    };

    let report = EvalReport {
        run: a.run.display().to_string(),
        qrels: a.qrels.display().to_string(),
        metrics,
        by_language,
        unjudged_run_queries: reports.first().map_or(0, |r| r.unjudged_run_queries.len()),
        t_test,
    };
    if let Some(dir) = &a.out {
        prepare_out(dir, a.overwrite)?;
        write_json(&dir.join("eval.json"), &report)?;
        let mut config = BTreeMap::new();
        config.insert("run".to_string(), report.run.clone());
        config.insert("qrels".to_string(), report.qrels.clone());
        config.insert("k".to_string(), a.k.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
        config.insert("recall".to_string(), if a.coverage { "coverage" } else { "hit" }.to_string());
        CommandManifest::new("eval", None, config).write(dir)?;
    }
    match a.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
        Format::Table => {
            let mut table = report.by_language.clone();
            table.insert("all".to_string(), report.metrics.clone());
            print!("{}", language_table(&table));
        }
    }
    Ok(())
}
