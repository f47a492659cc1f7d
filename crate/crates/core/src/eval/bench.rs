//! Per-query latency of retrieval-augmented inference against base-only.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::datastore::{Datastore, SearchScratch};
use crate::error::{Error, Result};
use crate::inference::{predict_with, Query};
use crate::kernels::argmax_label;
use crate::types::{Embedding, InferenceConfig, LabelDistribution, LabelId, LabelTable};

/// Base-only inference is too fast to time singly; each sample is this many
/// calls divided out.
const BASE_REPS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub queries: usize,
    pub num_labels: usize,
    pub config: InferenceConfig,
    pub seed: u64,
    /// Passes over all sizes; each pass times every query once.
    pub rounds: usize,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.dim == 0 || self.queries == 0 || self.num_labels == 0 || self.rounds == 0 {
            return Err(Error::InvalidConfig(
                "dim, queries, num_labels and rounds must be positive".into(),
            ));
        }
        if self.sizes.iter().all(|&s| s == 0) {
            return Err(Error::InvalidConfig(
                "at least one non-zero size is required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub queries: usize,
    pub retrieval_mean_us: f64,
    pub retrieval_p95_us: f64,
    pub base_mean_us: f64,
    pub base_p95_us: f64,
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect()
}

fn random_base(rng: &mut ChaCha8Rng, n: usize) -> Result<LabelDistribution> {
    let scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    LabelDistribution::from_scores(&scores)
}

/// Mean and 95th percentile (nearest rank) in microseconds.
pub fn summarize(samples_us: &mut [f64]) -> (f64, f64) {
    if samples_us.is_empty() {
        return (0.0, 0.0);
    }
    samples_us.sort_by(f64::total_cmp);
    let mean = samples_us.iter().sum::<f64>() / samples_us.len() as f64;
    let rank = ((0.95 * samples_us.len() as f64).ceil() as usize).clamp(1, samples_us.len());
    (mean, samples_us[rank - 1])
}

struct Fixture {
    size: usize,
    store: Datastore<f32>,
    queries: Vec<Query<f32>>,
    retrieval: Vec<f64>,
    base: Vec<f64>,
}

/// Runs single-threaded so latencies are per query, not per batch. Sizes are
/// measured in interleaved rounds so slow drift in machine load spreads over
/// all of them; samples from every round are pooled. Sizes of zero are
/// skipped.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let labels = LabelTable::new((0..spec.num_labels).map(|i| format!("label_{i}")))?;
    let mut fixtures = Vec::new();
    for &size in spec.sizes.iter().filter(|&&s| s > 0) {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ size as u64);
        let mut store = Datastore::<f32>::new(spec.dim, labels.clone())?;
        for i in 0..size {
            let key = Embedding::new(random_vec(&mut rng, spec.dim))?;
            store.add(&key, LabelId((i % spec.num_labels) as u32))?;
        }
        let queries = (0..spec.queries)
            .map(|_| {
                let e = Embedding::new(random_vec(&mut rng, spec.dim))?;
                Ok(Query::new(e, random_base(&mut rng, spec.num_labels)?))
            })
            .collect::<Result<Vec<_>>>()?;
        fixtures.push(Fixture {
            size,
            store,
            queries,
            retrieval: Vec::new(),
            base: Vec::new(),
        });
    }

    let mut scratch = SearchScratch::default();
    for _ in 0..spec.rounds {
        for f in &mut fixtures {
            // Warm-up: touch the whole store once.
            predict_with(&f.store, &f.queries[0], &spec.config, &mut scratch)?;
            for q in &f.queries {
                let t = Instant::now();
                black_box(predict_with(
                    &f.store,
                    black_box(q),
                    &spec.config,
                    &mut scratch,
                )?);
                f.retrieval.push(t.elapsed().as_secs_f64() * 1e6);
            }
            for q in &f.queries {
                let t = Instant::now();
                for _ in 0..BASE_REPS {
                    black_box(argmax_label(black_box(&q.base)));
                }
                f.base
                    .push(t.elapsed().as_secs_f64() * 1e6 / f64::from(BASE_REPS));
            }
        }
    }

    Ok(fixtures
        .into_iter()
        .map(|mut f| {
            let (retrieval_mean_us, retrieval_p95_us) = summarize(&mut f.retrieval);
            let (base_mean_us, base_p95_us) = summarize(&mut f.base);
            BenchRow {
                size: f.size,
                queries: spec.queries,
                retrieval_mean_us,
                retrieval_p95_us,
                base_mean_us,
                base_p95_us,
            }
        })
        .collect())
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out =
        String::from("size,queries,retrieval_mean_us,retrieval_p95_us,base_mean_us,base_p95_us\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.size,
            r.queries,
            r.retrieval_mean_us,
            r.retrieval_p95_us,
            r.base_mean_us,
            r.base_p95_us
        );
    }
    out
}
