//! Few-shot evaluation, parameter sweeps, synthetic data and latency benchmarks.

pub mod bench;
pub mod episode;
pub mod harness;
pub mod metrics;
pub mod synthetic;

pub use bench::{bench_csv, run_bench, BenchRow, BenchSpec};
pub use episode::{sample_episode, Episode, EpisodeSpec, Shortfall, DEFAULT_SEEDS};
pub use harness::{
    default_lambda_grid, run_eval, run_eval_files, sweep, Dataset, EvalOptions, EvalReport,
    Retriever, RunReport, SweepRow, SweepTable, TfidfMode, DEFAULT_K_GRID,
};
pub use metrics::{mean_std, micro_f1, MicroF1};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};
