//! Synthetic relation data with a controllable base model.
//!
//! Each label gets a unit-norm mean direction. Instances are the mean plus
//! isotropic Gaussian noise of standard deviation `noise`. The simulated base
//! model sees its own, independent corruption: its logits are
//! `BASE_LOGIT_SCALE · (onehot(gold) + noise · ε)` with `ε ~ N(0, I)`, and its
//! softmax is then mixed toward uniform:
//!
//! ```text
//! p_base = base_quality · softmax(logits) + (1 − base_quality) · uniform
//! ```
//!
//! So `base_quality = 0` gives an exactly uniform base and `noise = 0,
//! base_quality = 1` a base that is always right. Texts are bags of
//! label-specific and shared words, for the lexical retriever.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::InstanceRecord;
use crate::kernels::softmax;

/// Logit gap of the simulated base model's gold label before corruption.
pub const BASE_LOGIT_SCALE: f64 = 4.0;

const TEXT_LEN: usize = 8;
const LABEL_WORDS: u64 = 10;
const SHARED_WORDS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_labels: usize,
    pub dim: usize,
    /// Instances per label, in each of train and test.
    pub per_label: usize,
    pub noise: f64,
    pub base_quality: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels == 0 || self.dim == 0 || self.per_label == 0 {
            return Err(Error::InvalidConfig(
                "num_labels, dim and per_label must be positive".into(),
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidConfig("noise must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.base_quality) {
            return Err(Error::InvalidConfig(
                "base_quality must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

pub fn label_name(i: usize) -> String {
    format!("rel_{i:02}")
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub labels: Vec<String>,
    pub train: Vec<InstanceRecord>,
    pub test: Vec<InstanceRecord>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.num_labels)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();

    let mut next_id = 0u64;
    let mut split = |rng: &mut ChaCha8Rng, with_base: bool| -> Result<Vec<InstanceRecord>> {
        let mut out = Vec::with_capacity(spec.num_labels * spec.per_label);
        for (label, mean) in means.iter().enumerate() {
            for _ in 0..spec.per_label {
                let embedding: Vec<f64> = mean
                    .iter()
                    .map(|m| {
                        let e: f64 = rng.sample(StandardNormal);
                        // Stored as f32 downstream; round here so files are exact.
                        (m + spec.noise * e) as f32 as f64
                    })
                    .collect();
                let text = text_for(rng, label, spec.noise);
                let base_dist = if with_base {
                    Some(base_for(rng, label, spec)?)
                } else {
                    None
                };
                out.push(InstanceRecord {
                    id: Some(next_id),
                    embedding: Some(embedding),
                    label: label_name(label),
                    text: Some(text),
                    base_dist,
                    base_scores: None,
                });
                next_id += 1;
            }
        }
        Ok(out)
    };
    let train = split(&mut rng, false)?;
    let test = split(&mut rng, true)?;
    Ok(SyntheticData {
        labels: (0..spec.num_labels).map(label_name).collect(),
        train,
        test,
    })
}

fn base_for(rng: &mut ChaCha8Rng, gold: usize, spec: &SyntheticSpec) -> Result<Vec<f64>> {
    let n = spec.num_labels;
    let logits: Vec<f64> = (0..n)
        .map(|r| {
            let e: f64 = rng.sample(StandardNormal);
            let hit = if r == gold { 1.0 } else { 0.0 };
            BASE_LOGIT_SCALE * (hit + spec.noise * e)
        })
        .collect();
    let p = softmax(&logits, 1.0)?;
    let uniform = 1.0 / n as f64;
    let q = spec.base_quality;
    let mixed: Vec<f64> = p.iter().map(|x| q * x + (1.0 - q) * uniform).collect();
    // Exact renormalization keeps the stored vector within tolerance.
    let sum: f64 = mixed.iter().sum();
    Ok(mixed.into_iter().map(|x| x / sum).collect())
}

fn text_for(rng: &mut ChaCha8Rng, label: usize, noise: f64) -> String {
    let p_label = 1.0 / (1.0 + noise);
    (0..TEXT_LEN)
        .map(|_| {
            if rng.random_bool(p_label) {
                format!("r{label}w{}", rng.random_range(0..LABEL_WORDS))
            } else {
                format!("c{}", rng.random_range(0..SHARED_WORDS))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}
