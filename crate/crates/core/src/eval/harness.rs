//! Evaluation runs and parameter sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{sample_episode, EpisodeSpec, Shortfall};
use super::metrics::{mean_std, micro_f1, MicroF1};
use crate::datastore::{Datastore, NeighborSet};
use crate::error::{Error, Result};
use crate::inference::{interpolate, knn_distribution, predict_batch, Query};
use crate::ingest::{self, InstanceRecord, Located, TestItem, TrainItem};
use crate::kernels::argmax_label;
use crate::tfidf::TfIdfIndex;
use crate::types::{InferenceConfig, LabelDistribution, LabelId, LabelTable};

/// Where neighbors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retriever {
    #[default]
    Embedding,
    Tfidf,
    /// Base model only; the datastore is never consulted.
    None,
}

/// How lexical neighbors are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TfidfMode {
    /// Predict from the lexical neighbor distribution alone.
    Replace,
    /// Mix it with the base distribution like embedding neighbors.
    #[default]
    Interpolate,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub labels: LabelTable,
    pub train: Vec<TrainItem>,
    pub test: Vec<TestItem>,
}

impl Dataset {
    pub fn load(
        train: impl AsRef<Path>,
        test: impl AsRef<Path>,
        label_names: Option<Vec<String>>,
        na: Option<&str>,
    ) -> Result<Self> {
        let train = ingest::read_jsonl(train)?;
        let test = ingest::read_jsonl(test)?;
        Self::from_located(train, test, label_names, na)
    }

    /// In-memory records, e.g. from the synthetic generator.
    pub fn from_records(
        train: Vec<InstanceRecord>,
        test: Vec<InstanceRecord>,
        label_names: Option<Vec<String>>,
        na: Option<&str>,
    ) -> Result<Self> {
        let wrap = |name: &str, recs: Vec<InstanceRecord>| -> Vec<Located> {
            recs.into_iter()
                .enumerate()
                .map(|(i, record)| Located {
                    file: PathBuf::from(name),
                    line: i + 1,
                    record,
                })
                .collect()
        };
        Self::from_located(
            wrap("<train>", train),
            wrap("<test>", test),
            label_names,
            na,
        )
    }

    fn from_located(
        train: Vec<Located>,
        test: Vec<Located>,
        label_names: Option<Vec<String>>,
        na: Option<&str>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("train set"));
        }
        if test.is_empty() {
            return Err(Error::EmptyInput("test set"));
        }
        let labels = ingest::resolve_labels(label_names, na, train.iter().chain(&test))?;
        let mut dim = None;
        let train_items = ingest::train_items(&train, &labels, &mut dim)?;
        let test_items = ingest::test_items(&test, &labels, &mut dim)?;
        Ok(Self {
            labels,
            train: train_items,
            test: test_items,
        })
    }

    fn train_labels(&self) -> Vec<LabelId> {
        self.train.iter().map(|t| t.label).collect()
    }

    fn golds(&self) -> Vec<LabelId> {
        self.test.iter().map(|t| t.gold).collect()
    }

    fn datastore(&self, indices: &[usize]) -> Result<Datastore<f32>> {
        let mut records = Vec::with_capacity(indices.len());
        for &i in indices {
            let item = &self.train[i];
            let key = item.embedding.clone().ok_or_else(|| Error::Parse {
                file: PathBuf::from("<train>"),
                line: item.line,
                reason: "train instance has no embedding".into(),
            })?;
            records.push((key, item.label));
        }
        Datastore::build(records, self.labels.clone())
    }

    fn queries(&self) -> Result<Vec<Query<f32>>> {
        self.test
            .iter()
            .map(|t| {
                let e = t.embedding.clone().ok_or_else(|| Error::Parse {
                    file: PathBuf::from("<test>"),
                    line: t.line,
                    reason: "test instance has no embedding".into(),
                })?;
                Ok(Query::new(e, t.base.clone()).with_gold(t.gold))
            })
            .collect()
    }

    fn tfidf(&self, indices: &[usize]) -> Result<TfIdfIndex> {
        let mut texts = Vec::with_capacity(indices.len());
        for &i in indices {
            let item = &self.train[i];
            let text = item.text.as_deref().ok_or_else(|| Error::Parse {
                file: PathBuf::from("<train>"),
                line: item.line,
                reason: "train instance has no text".into(),
            })?;
            texts.push((text, item.label));
        }
        TfIdfIndex::fit(texts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOptions {
    pub config: InferenceConfig,
    pub episodes: Option<EpisodeSpec>,
    pub retriever: Retriever,
    pub tfidf_mode: TfidfMode,
}

impl EvalOptions {
    pub fn new(config: InferenceConfig) -> Self {
        Self {
            config,
            episodes: None,
            retriever: Retriever::Embedding,
            tfidf_mode: TfidfMode::Interpolate,
        }
    }

    pub fn with_episodes(mut self, spec: EpisodeSpec) -> Self {
        self.episodes = Some(spec);
        self
    }

    pub fn with_retriever(mut self, retriever: Retriever) -> Self {
        self.retriever = retriever;
        self
    }

    pub fn with_tfidf_mode(mut self, mode: TfidfMode) -> Self {
        self.tfidf_mode = mode;
        self
    }

    fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if let Some(spec) = &self.episodes {
            spec.validate()?;
        }
        Ok(())
    }
}

/// One episode (or the single full-data run).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: Option<u64>,
    pub datastore_size: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shortfall: Vec<Shortfall>,
    /// Lexical queries with no known token, scored from the base alone.
    pub degenerate_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub na_label: Option<String>,
    pub num_test: usize,
    pub runs: Vec<RunReport>,
    pub mean_f1: f64,
    pub std_f1: f64,
}

impl EvalReport {
    fn new(
        options: EvalOptions,
        labels: &LabelTable,
        num_test: usize,
        runs: Vec<RunReport>,
    ) -> Self {
        let f1s: Vec<f64> = runs.iter().map(|r| r.f1).collect();
        let (mean_f1, std_f1) = mean_std(&f1s);
        Self {
            options,
            na_label: labels.na_name().map(str::to_string),
            num_test,
            runs,
            mean_f1,
            std_f1,
        }
    }

    pub fn per_seed_f1(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.f1).collect()
    }

    /// Mean and std recomputed from the per-run values agree with the stored ones.
    pub fn is_consistent(&self) -> bool {
        let (m, s) = mean_std(&self.per_seed_f1());
        (m - self.mean_f1).abs() <= 1e-12 && (s - self.std_f1).abs() <= 1e-12
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let cfg = &self.options.config;
        let _ = writeln!(
            out,
            "retriever={} k={} lambda={} metric={} temperature={}",
            format!("{:?}", self.options.retriever).to_lowercase(),
            cfg.k,
            cfg.lambda,
            cfg.metric,
            cfg.temperature
        );
        for r in &self.runs {
            let seed = r.seed.map_or("full".to_string(), |s| format!("seed {s}"));
            let _ = writeln!(
                out,
                "  {seed:>8}: P={:.4} R={:.4} F1={:.4} (datastore {})",
                r.precision, r.recall, r.f1, r.datastore_size
            );
        }
        let _ = writeln!(
            out,
            "micro F1 = {:.2} ± {:.2} over {} run(s), {} test instances",
            100.0 * self.mean_f1,
            100.0 * self.std_f1,
            self.runs.len(),
            self.num_test
        );
        out
    }
}

/// Training subsets to evaluate: one per seed, or the full set once.
fn plan(
    data: &Dataset,
    episodes: Option<&EpisodeSpec>,
) -> Vec<(Option<u64>, Vec<usize>, Vec<Shortfall>)> {
    match episodes {
        Some(spec) => {
            let labels = data.train_labels();
            spec.seeds
                .iter()
                .map(|&seed| {
                    let ep = sample_episode(&labels, spec.shots, seed);
                    (Some(seed), ep.indices, ep.shortfall)
                })
                .collect()
        }
        None => vec![(None, (0..data.train.len()).collect(), Vec::new())],
    }
}

fn score(data: &Dataset, dists: &[LabelDistribution]) -> Result<MicroF1> {
    let preds: Vec<LabelId> = dists.iter().map(argmax_label).collect();
    micro_f1(&preds, &data.golds(), data.labels.na())
}

/// Per-query neighbors, `None` where retrieval is skipped.
struct Retrieved {
    neighbors: Vec<Option<NeighborSet>>,
    datastore_size: usize,
}

fn retrieve(
    data: &Dataset,
    indices: &[usize],
    retriever: Retriever,
    cfg: &InferenceConfig,
) -> Result<Retrieved> {
    match retriever {
        Retriever::None => Ok(Retrieved {
            neighbors: vec![None; data.test.len()],
            datastore_size: 0,
        }),
        Retriever::Embedding => {
            let store = data.datastore(indices)?;
            let queries = data.queries()?;
            let neighbors = queries
                .par_iter()
                .map(|q| store.knn_query(&q.embedding, cfg.k, cfg.metric).map(Some))
                .collect::<Result<Vec<_>>>()?;
            Ok(Retrieved {
                neighbors,
                datastore_size: store.len(),
            })
        }
        Retriever::Tfidf => {
            let index = data.tfidf(indices)?;
            let neighbors = data
                .test
                .par_iter()
                .map(|t| {
                    let text = t.text.as_deref().unwrap_or("");
                    match index.rank(text, cfg.k) {
                        Ok(n) => Ok(Some(n)),
                        Err(Error::DegenerateQuery) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Retrieved {
                neighbors,
                datastore_size: index.len(),
            })
        }
    }
}

/// Final distributions from cached neighbors, truncated to `k`.
fn combine(
    data: &Dataset,
    retrieved: &Retrieved,
    retriever: Retriever,
    mode: TfidfMode,
    lambda: f64,
    k: usize,
    temperature: f64,
) -> Result<Vec<LabelDistribution>> {
    let n_labels = data.labels.len();
    data.test
        .iter()
        .zip(&retrieved.neighbors)
        .map(|(t, n)| match n {
            None => Ok(t.base.clone()),
            Some(n) => {
                let knn = knn_distribution(&n.truncated(k), n_labels, temperature)?;
                if retriever == Retriever::Tfidf && mode == TfidfMode::Replace {
                    Ok(knn)
                } else {
                    interpolate(&knn, &t.base, lambda)
                }
            }
        })
        .collect()
}

pub fn run_eval(data: &Dataset, options: &EvalOptions) -> Result<EvalReport> {
    options.validate()?;
    let cfg = options.config;
    let runs = plan(data, options.episodes.as_ref())
        .into_par_iter()
        .map(|(seed, indices, shortfall)| {
            let (dists, datastore_size, degenerate) = match options.retriever {
                Retriever::Embedding => {
                    let store = data.datastore(&indices)?;
                    let queries = data.queries()?;
                    let out = predict_batch(&store, &queries, &cfg)?;
                    (
                        out.into_iter().map(|(_, d)| d).collect::<Vec<_>>(),
                        store.len(),
                        0,
                    )
                }
                retriever => {
                    let r = retrieve(data, &indices, retriever, &cfg)?;
                    let degenerate = match retriever {
                        Retriever::Tfidf => r.neighbors.iter().filter(|n| n.is_none()).count(),
                        _ => 0,
                    };
                    let dists = combine(
                        data,
                        &r,
                        retriever,
                        options.tfidf_mode,
                        cfg.lambda,
                        cfg.k,
                        cfg.temperature,
                    )?;
                    (dists, r.datastore_size, degenerate)
                }
            };
            let m = score(data, &dists)?;
            Ok(RunReport {
                seed,
                datastore_size,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                shortfall,
                degenerate_queries: degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(
        options.clone(),
        &data.labels,
        data.test.len(),
        runs,
    ))
}

pub fn run_eval_files(
    train: impl AsRef<Path>,
    test: impl AsRef<Path>,
    label_names: Option<Vec<String>>,
    na: Option<&str>,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let data = Dataset::load(train, test, label_names, na)?;
    run_eval(&data, options)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub k: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub per_seed_f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub seeds: Vec<Option<u64>>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,k,mean_f1,std_f1");
        for s in &self.seeds {
            match s {
                Some(s) => {
                    let _ = write!(out, ",f1_seed{s}");
                }
                None => out.push_str(",f1_full"),
            }
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{}", r.lambda, r.k, r.mean_f1, r.std_f1);
            for f in &r.per_seed_f1 {
                let _ = write!(out, ",{f}");
            }
            out.push('\n');
        }
        out
    }

    pub fn row(&self, lambda: f64, k: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.lambda == lambda && r.k == k)
    }
}

/// λ grid 0, 0.1, …, 1.0.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub const DEFAULT_K_GRID: [usize; 6] = [1, 2, 4, 8, 16, 32];

/// Every (λ, k) cell over the same episodes. Neighbors are retrieved once
/// per episode at the largest k and truncated per cell, which is identical
/// to querying at each k.
pub fn sweep(
    data: &Dataset,
    options: &EvalOptions,
    lambda_grid: &[f64],
    k_grid: &[usize],
) -> Result<SweepTable> {
    options.validate()?;
    if lambda_grid.is_empty() || k_grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grids must be non-empty".into()));
    }
    for &l in lambda_grid {
        options.config.with_lambda(l).validate()?;
    }
    for &k in k_grid {
        options.config.with_k(k).validate()?;
    }
    let k_max = *k_grid.iter().max().expect("non-empty");
    let cfg = options.config.with_k(k_max);
    let plan = plan(data, options.episodes.as_ref());
    let retrieved = plan
        .par_iter()
        .map(|(_, indices, _)| retrieve(data, indices, options.retriever, &cfg))
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(f64, usize)> = lambda_grid
        .iter()
        .flat_map(|&l| k_grid.iter().map(move |&k| (l, k)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(lambda, k)| {
            let per_seed_f1 = retrieved
                .iter()
                .map(|r| {
                    let dists = combine(
                        data,
                        r,
                        options.retriever,
                        options.tfidf_mode,
                        lambda,
                        k,
                        cfg.temperature,
                    )?;
                    Ok(score(data, &dists)?.f1)
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean_f1, std_f1) = mean_std(&per_seed_f1);
            Ok(SweepRow {
                lambda,
                k,
                mean_f1,
                std_f1,
                per_seed_f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        seeds: plan.iter().map(|p| p.0).collect(),
        rows,
    })
}
