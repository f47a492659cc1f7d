//! Command-line front end.
//!
//! Settings resolve as flag, then `--config` TOML file, then built-in
//! default. The effective settings are echoed to stderr as one JSON line.
//! Failures print `{"error": {"kind": ..., "message": ...}}` on stderr and
//! exit nonzero.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datastore::Datastore;
use crate::error::{Error, Result};
use crate::eval::{
    bench_csv, default_lambda_grid, generate_synthetic, run_bench, run_eval, sweep, BenchSpec,
    Dataset, EpisodeSpec, EvalOptions, Retriever, SyntheticSpec, TfidfMode, DEFAULT_K_GRID,
    DEFAULT_SEEDS,
};
use crate::inference::{interpolate, knn_distribution, Query};
use crate::ingest::{self, BASE_DIST_SLACK};
use crate::kernels::argmax_label;
use crate::types::{Embedding, EntryId, InferenceConfig, LabelDistribution, Metric};

pub const THREADS_ENV: &str = "OBKNN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "obknn",
    version,
    about = "Open-book kNN inference over an embedding datastore"
)]
pub struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a datastore file from a JSONL instance file.
    Build(BuildArgs),
    /// Predict one query, optionally with neighbor evidence.
    Query(QueryArgs),
    /// Add, relabel or delete datastore entries.
    Mutate(MutateArgs),
    /// Micro-F1 evaluation on a train/test pair.
    Eval(EvalArgs),
    /// F1 over a λ × k grid.
    Sweep(SweepArgs),
    /// Per-query latency against datastore size.
    Bench(BenchArgs),
    /// Write a synthetic train/test pair.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub na_label: Option<String>,
    /// Ordered label list, one per line. Defaults to the sorted label names in the input.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct InferenceFlags {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Comma-separated values, a JSON array, or a file holding either.
    #[arg(long, allow_hyphen_values = true)]
    pub embedding: String,
    /// Base distribution over the store's labels, same forms as --embedding.
    #[arg(long, allow_hyphen_values = true)]
    pub base_dist: String,
    #[command(flatten)]
    pub inference: InferenceFlags,
    /// Print neighbor evidence as JSON.
    #[arg(long)]
    pub explain: bool,
}

#[derive(Debug, Args)]
pub struct MutateArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Write here instead of overwriting --store.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub action: MutateAction,
}

#[derive(Debug, Subcommand)]
pub enum MutateAction {
    Add {
        #[arg(long, allow_hyphen_values = true)]
        embedding: String,
        #[arg(long)]
        label: String,
    },
    Edit {
        #[arg(long)]
        id: u64,
        #[arg(long)]
        label: String,
    },
    Delete {
        #[arg(long)]
        id: u64,
    },
}

#[derive(Debug, Args)]
pub struct DataFlags {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub na_label: Option<String>,
    /// Instances per label per episode; omit to use the whole train set.
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_parser = parse_retriever)]
    pub retriever: Option<Retriever>,
    #[arg(long, value_parser = parse_tfidf_mode)]
    pub tfidf_mode: Option<TfidfMode>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub inference: InferenceFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,70000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    #[arg(long, default_value_t = 16)]
    pub num_labels: usize,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub num_labels: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 50)]
    pub per_label: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.4)]
    pub base_quality: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_retriever(s: &str) -> std::result::Result<Retriever, String> {
    match s {
        "embedding" => Ok(Retriever::Embedding),
        "tfidf" => Ok(Retriever::Tfidf),
        "none" => Ok(Retriever::None),
        _ => Err(format!("unknown retriever {s:?} (embedding, tfidf, none)")),
    }
}

fn parse_tfidf_mode(s: &str) -> std::result::Result<TfidfMode, String> {
    match s {
        "replace" => Ok(TfidfMode::Replace),
        "interpolate" => Ok(TfidfMode::Interpolate),
        _ => Err(format!("unknown tfidf mode {s:?} (replace, interpolate)")),
    }
}

/// Settings readable from `--config`, keyed like the flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub metric: Option<Metric>,
    pub temperature: Option<f64>,
    pub shots: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub seed: Option<u64>,
    pub retriever: Option<Retriever>,
    pub tfidf_mode: Option<TfidfMode>,
    pub na_label: Option<String>,
    pub labels: Option<PathBuf>,
    pub lambda_grid: Option<Vec<f64>>,
    pub k_grid: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    fn inference(&self, flags: &InferenceFlags) -> Result<InferenceConfig> {
        let d = InferenceConfig::default();
        InferenceConfig::new(
            flags.k.or(self.k).unwrap_or(d.k),
            flags.lambda.or(self.lambda).unwrap_or(d.lambda),
            flags.metric.or(self.metric).unwrap_or(d.metric),
            flags
                .temperature
                .or(self.temperature)
                .unwrap_or(d.temperature),
        )
    }
}

/// Parses a vector given inline (`1,2,3` or `[1,2,3]`) or as a file path.
pub fn parse_vector(arg: &str) -> Result<Vec<f64>> {
    if let Some(v) = parse_numbers(arg) {
        return Ok(v);
    }
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        return parse_numbers(&text).ok_or_else(|| {
            Error::InvalidConfig(format!("{}: expected a list of numbers", path.display()))
        });
    }
    Err(Error::InvalidConfig(format!(
        "{arg:?} is neither a list of numbers nor a file"
    )))
}

fn parse_numbers(text: &str) -> Option<Vec<f64>> {
    let t = text.trim();
    if t.starts_with('[') {
        return serde_json::from_str(t).ok();
    }
    let v: std::result::Result<Vec<f64>, _> = t
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    v.ok().filter(|v| !v.is_empty())
}

fn echo(command: &str, settings: serde_json::Value) {
    eprintln!(
        "{}",
        json!({ "command": command, "effective_config": settings })
    );
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    // Fails only if a pool already exists, e.g. when called twice in-process.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn error_line(e: &Error) -> String {
    json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let line = json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{line}");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Build(a) => build(a, &file),
        Command::Query(a) => query(a, &file),
        Command::Mutate(a) => mutate(a),
        Command::Eval(a) => eval(a, &file),
        Command::Sweep(a) => run_sweep(a, &file),
        Command::Bench(a) => bench(a, &file),
        Command::Synth(a) => synth(a, &file),
    }
}

fn build(a: BuildArgs, file: &FileConfig) -> Result<()> {
    let na = a.na_label.or_else(|| file.na_label.clone());
    let labels_path = a.labels.or_else(|| file.labels.clone());
    echo(
        "build",
        json!({ "input": a.input, "output": a.output, "na_label": na, "labels": labels_path }),
    );
    let records = ingest::read_jsonl(&a.input)?;
    let explicit = labels_path.map(ingest::read_label_list).transpose()?;
    let labels = ingest::resolve_labels(explicit, na.as_deref(), &records)?;
    let store = ingest::datastore_from_records(&records, labels)?;
    store.save(&a.output)?;
    eprintln!(
        "wrote {} entries, dim {}, {} labels to {}",
        store.len(),
        store.dim(),
        store.labels().len(),
        a.output.display()
    );
    Ok(())
}

/// Evidence behind one prediction. `final_dist` is
/// `lambda · p_knn + (1 − lambda) · p_base`, and `p_knn` aggregates the
/// neighbor weights per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub prediction: String,
    pub labels: Vec<String>,
    pub k: usize,
    pub lambda: f64,
    pub metric: Metric,
    pub temperature: f64,
    pub neighbors: Vec<NeighborEvidence>,
    pub p_knn: Vec<f64>,
    pub p_base: Vec<f64>,
    #[serde(rename = "final")]
    pub final_dist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEvidence {
    pub id: u64,
    pub label: String,
    pub distance: f64,
    /// Softmax share of this neighbor among the retrieved set.
    pub weight: f64,
}

pub fn explain(
    store: &Datastore<f32>,
    q: &Query<f32>,
    cfg: &InferenceConfig,
) -> Result<Explanation> {
    let labels = store.labels();
    let neighbors = store.knn_query(&q.embedding, cfg.k, cfg.metric)?;
    let p_knn = knn_distribution(&neighbors, labels.len(), cfg.temperature)?;
    let final_dist = interpolate(&p_knn, &q.base, cfg.lambda)?;
    let scores: Vec<f64> = neighbors.iter().map(|n| -n.distance).collect();
    let weights = crate::kernels::softmax(&scores, cfg.temperature)?;
    let neighbors = neighbors
        .iter()
        .zip(weights)
        .map(|(n, weight)| {
            Ok(NeighborEvidence {
                id: n.id.0,
                label: labels.name(n.label)?.to_string(),
                distance: n.distance,
                weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Explanation {
        prediction: labels.name(argmax_label(&final_dist))?.to_string(),
        labels: labels.names().to_vec(),
        k: cfg.k,
        lambda: cfg.lambda,
        metric: cfg.metric,
        temperature: cfg.temperature,
        neighbors,
        p_knn: p_knn.into_vec(),
        p_base: q.base.as_slice().to_vec(),
        final_dist: final_dist.into_vec(),
    })
}

fn query(a: QueryArgs, file: &FileConfig) -> Result<()> {
    let cfg = file.inference(&a.inference)?;
    echo(
        "query",
        json!({ "store": a.store, "inference": cfg, "explain": a.explain }),
    );
    let store = Datastore::<f32>::load(&a.store)?;
    let embedding = Embedding::from_f64(&parse_vector(&a.embedding)?)?;
    let base = LabelDistribution::renormalized(&parse_vector(&a.base_dist)?, BASE_DIST_SLACK)?;
    if base.len() != store.labels().len() {
        return Err(Error::LengthMismatch {
            left: base.len(),
            right: store.labels().len(),
        });
    }
    let ex = explain(&store, &Query::new(embedding, base), &cfg)?;
    if a.explain {
        let text = serde_json::to_string_pretty(&ex).map_err(std::io::Error::from)?;
        println!("{text}");
    } else {
        println!("{}", ex.prediction);
    }
    Ok(())
}

fn mutate(a: MutateArgs) -> Result<()> {
    let out = a.output.clone().unwrap_or_else(|| a.store.clone());
    echo("mutate", json!({ "store": a.store, "output": out }));
    let mut store = Datastore::<f32>::load(&a.store)?;
    match a.action {
        MutateAction::Add { embedding, label } => {
            let key = Embedding::from_f64(&parse_vector(&embedding)?)?;
            let label = store.labels().id(&label)?;
            let id = store.add(&key, label)?;
            println!("{}", id.0);
        }
        MutateAction::Edit { id, label } => {
            let label = store.labels().id(&label)?;
            store.edit(EntryId(id), label)?;
        }
        MutateAction::Delete { id } => store.delete(EntryId(id))?,
    }
    store.save(&out)
}

fn eval_options(
    data: &DataFlags,
    file: &FileConfig,
    config: InferenceConfig,
) -> Result<EvalOptions> {
    let shots = data.shots.or(file.shots);
    let seeds = data.seeds.clone().or_else(|| file.seeds.clone());
    let mut opts = EvalOptions::new(config)
        .with_retriever(data.retriever.or(file.retriever).unwrap_or_default())
        .with_tfidf_mode(data.tfidf_mode.or(file.tfidf_mode).unwrap_or_default());
    match (shots, seeds) {
        (Some(shots), seeds) => {
            let seeds = seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
            opts = opts.with_episodes(EpisodeSpec::new(shots, seeds)?);
        }
        (None, Some(_)) => return Err(Error::InvalidConfig("--seeds requires --shots".into())),
        (None, None) => {}
    }
    Ok(opts)
}

fn load_data(data: &DataFlags, file: &FileConfig) -> Result<Dataset> {
    let labels = data.labels.clone().or_else(|| file.labels.clone());
    let explicit = labels.map(ingest::read_label_list).transpose()?;
    let na = data.na_label.clone().or_else(|| file.na_label.clone());
    Dataset::load(&data.train, &data.test, explicit, na.as_deref())
}

fn eval(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let opts = eval_options(&a.data, file, file.inference(&a.inference)?)?;
    echo(
        "eval",
        json!({ "train": a.data.train, "test": a.data.test, "options": opts }),
    );
    let data = load_data(&a.data, file)?;
    let report = run_eval(&data, &opts)?;
    eprint!("{}", report.summary());
    let text = serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?;
    println!("{text}");
    Ok(())
}

fn run_sweep(a: SweepArgs, file: &FileConfig) -> Result<()> {
    let flags = InferenceFlags {
        metric: a.metric,
        temperature: a.temperature,
        ..Default::default()
    };
    let opts = eval_options(&a.data, file, file.inference(&flags)?)?;
    let lambdas = a
        .lambda_grid
        .clone()
        .or_else(|| file.lambda_grid.clone())
        .unwrap_or_else(default_lambda_grid);
    let ks = a
        .k_grid
        .clone()
        .or_else(|| file.k_grid.clone())
        .unwrap_or_else(|| DEFAULT_K_GRID.to_vec());
    echo(
        "sweep",
        json!({ "train": a.data.train, "test": a.data.test, "options": opts,
                "lambda_grid": lambdas, "k_grid": ks, "out": a.out }),
    );
    let data = load_data(&a.data, file)?;
    let table = sweep(&data, &opts, &lambdas, &ks)?;
    write_output(a.out.as_deref(), &table.to_csv())
}

fn bench(a: BenchArgs, file: &FileConfig) -> Result<()> {
    let d = InferenceConfig::default();
    let spec = BenchSpec {
        sizes: a.sizes,
        dim: a.dim,
        queries: a.queries,
        num_labels: a.num_labels,
        config: d.with_k(a.k.or(file.k).unwrap_or(d.k)),
        seed: a.seed.or(file.seed).unwrap_or(0),
        rounds: a.rounds,
    };
    echo("bench", json!({ "spec": spec, "out": a.out }));
    let rows = run_bench(&spec)?;
    write_output(a.out.as_deref(), &bench_csv(&rows))
}

fn synth(a: SynthArgs, file: &FileConfig) -> Result<()> {
    let spec = SyntheticSpec {
        num_labels: a.num_labels,
        dim: a.dim,
        per_label: a.per_label,
        noise: a.noise,
        base_quality: a.base_quality,
        seed: a.seed.or(file.seed).unwrap_or(0),
    };
    echo("synth", json!({ "spec": spec, "out_dir": a.out_dir }));
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    ingest::write_jsonl(a.out_dir.join("train.jsonl"), &data.train)?;
    ingest::write_jsonl(a.out_dir.join("test.jsonl"), &data.test)?;
    fs::write(a.out_dir.join("labels.txt"), data.labels.join("\n") + "\n")?;
    Ok(())
}
