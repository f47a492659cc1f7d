//! Domain types shared by every module.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute tolerance on `Σ p = 1` for a valid [`LabelDistribution`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// Dense relation-label id, `0..labels.len()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u32);

impl LabelId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Datastore entry id. Never reused within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A finite, non-empty real vector used as a retrieval key or query.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<S = f32> {
    values: Vec<S>,
}

impl<S: Scalar> Embedding<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    /// Builds an embedding from `f64` input, narrowing to `S`.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| S::narrow(v)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<S> {
        self.values
    }
}

impl<S> AsRef<[S]> for Embedding<S> {
    fn as_ref(&self) -> &[S] {
        &self.values
    }
}

/// Bijection between relation-label names and dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    names: Vec<String>,
    index: HashMap<String, LabelId>,
    na: Option<LabelId>,
}

impl LabelTable {
    pub fn new<I, T>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() > u32::MAX as usize {
            return Err(Error::InvalidConfig("too many labels".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), LabelId(i as u32)).is_some() {
                return Err(Error::DuplicateLabelName(name.clone()));
            }
        }
        Ok(Self {
            names,
            index,
            na: None,
        })
    }

    /// Designates `name` as the "no relation" class.
    pub fn with_na(mut self, name: &str) -> Result<Self> {
        self.na = Some(self.id(name)?);
        Ok(self)
    }

    pub fn set_na_id(&mut self, na: Option<LabelId>) -> Result<()> {
        if let Some(id) = na {
            self.check(id)?;
        }
        self.na = na;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn na(&self) -> Option<LabelId> {
        self.na
    }

    pub fn na_name(&self) -> Option<&str> {
        self.na.map(|id| self.names[id.index()].as_str())
    }

    pub fn id(&self, name: &str) -> Result<LabelId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabelName(name.to_string()))
    }

    pub fn name(&self, id: LabelId) -> Result<&str> {
        self.check(id)?;
        Ok(&self.names[id.index()])
    }

    pub fn check(&self, id: LabelId) -> Result<()> {
        if id.index() < self.names.len() {
            Ok(())
        } else {
            Err(Error::InvalidLabel {
                label: id,
                num_labels: self.names.len(),
            })
        }
    }
}

/// Probability vector over label ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    /// Validates entries in `[0, 1]` summing to one within [`DISTRIBUTION_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("distribution"));
        }
        if let Some(i) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} = {} outside [0, 1]",
                probs[i]
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Softmax over raw per-label scores.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        Ok(Self {
            probs: crate::kernels::softmax(scores, 1.0)?,
        })
    }

    /// Rescales non-negative weights to sum to one. Rejects inputs whose sum
    /// is further than `slack` from one, so only rounding noise is absorbed.
    pub fn renormalized(weights: &[f64], slack: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("distribution"));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} = {} is not a probability",
                weights[i]
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > slack {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    /// Skips validation. Callers guarantee the invariants.
    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, id: LabelId) -> f64 {
        self.probs[id.index()]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// Distance function used for retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    SquaredEuclidean,
    OneMinusCosine,
}

impl Metric {
    pub const ALL: [Metric; 3] = [
        Metric::Euclidean,
        Metric::SquaredEuclidean,
        Metric::OneMinusCosine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::SquaredEuclidean => "squared_euclidean",
            Metric::OneMinusCosine => "one_minus_cosine",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "squared_euclidean" | "l2sq" => Ok(Metric::SquaredEuclidean),
            "one_minus_cosine" | "cosine" => Ok(Metric::OneMinusCosine),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

/// Retrieval and interpolation settings. Defaults: k = 16, λ = 0.2,
/// Euclidean distance, temperature 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub k: usize,
    pub lambda: f64,
    pub metric: Metric,
    pub temperature: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            k: 16,
            lambda: 0.2,
            metric: Metric::Euclidean,
            temperature: 1.0,
        }
    }
}

impl InferenceConfig {
    pub fn new(k: usize, lambda: f64, metric: Metric, temperature: f64) -> Result<Self> {
        let cfg = Self {
            k,
            lambda,
            metric,
            temperature,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn with_k(self, k: usize) -> Self {
        Self { k, ..self }
    }
}
