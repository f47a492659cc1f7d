//! Few-shot episode sampling.
//!
//! Generator: ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. Labels are visited in ascending id order; for each,
//! a partial Fisher–Yates shuffle over that label's training indices (in
//! file order) draws `min(shots, available)` of them, with each swap position
//! drawn from a `u64` range so the stream is platform independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::LabelId;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub shots: usize,
    pub seeds: Vec<u64>,
}

impl EpisodeSpec {
    pub fn new(shots: usize, seeds: Vec<u64>) -> Result<Self> {
        let spec = Self { shots, seeds };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_default_seeds(shots: usize) -> Result<Self> {
        Self::new(shots, DEFAULT_SEEDS.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::InvalidConfig("shots must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        Ok(())
    }
}

/// A label that had fewer than `shots` training instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shortfall {
    pub label: LabelId,
    pub available: usize,
    pub requested: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Episode {
    /// Selected training indices, ascending.
    pub indices: Vec<usize>,
    pub shortfall: Vec<Shortfall>,
}

/// Samples up to `shots` instances of every label in `train_labels`.
pub fn sample_episode(train_labels: &[LabelId], shots: usize, seed: u64) -> Episode {
    let num_labels = train_labels
        .iter()
        .map(|l| l.index() + 1)
        .max()
        .unwrap_or(0);
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (i, l) in train_labels.iter().enumerate() {
        by_label[l.index()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::new();
    let mut shortfall = Vec::new();
    for (label, mut pool) in by_label.into_iter().enumerate() {
        if pool.is_empty() {
            continue;
        }
        let take = shots.min(pool.len());
        if take < shots {
            shortfall.push(Shortfall {
                label: LabelId(label as u32),
                available: pool.len(),
                requested: shots,
            });
        }
        let n = pool.len() as u64;
        for i in 0..take {
            let j = rng.random_range(i as u64..n) as usize;
            pool.swap(i, j);
        }
        indices.extend_from_slice(&pool[..take]);
    }
    indices.sort_unstable();
    Episode { indices, shortfall }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[u32]) -> Vec<LabelId> {
        v.iter().map(|&l| LabelId(l)).collect()
    }

    #[test]
    fn one_shot_per_label() {
        let train = labels(&[0, 1, 2, 0, 1, 2, 2, 2]);
        let ep = sample_episode(&train, 1, 0);
        assert_eq!(ep.indices.len(), 3);
        let mut got: Vec<u32> = ep.indices.iter().map(|&i| train[i].0).collect();
        got.sort();
        assert_eq!(got, vec![0, 1, 2]);
        assert!(ep.shortfall.is_empty());
        assert!(ep.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn deterministic_per_seed() {
        let train = labels(&(0..200).map(|i| (i * 7 % 5) as u32).collect::<Vec<_>>());
        let a = sample_episode(&train, 5, 42);
        assert_eq!(a, sample_episode(&train, 5, 42));
        let others: Vec<Episode> = (0..4).map(|s| sample_episode(&train, 5, s)).collect();
        assert!(others.iter().any(|e| e.indices != a.indices));
    }

    #[test]
    fn frozen_stream() {
        // Pins the generator and draw order; changing either breaks seeds.
        let train = labels(&(0..20).map(|i| (i % 2) as u32).collect::<Vec<_>>());
        let ep = sample_episode(&train, 3, 0);
        assert_eq!(ep.indices, FROZEN_SEED0);
    }

    const FROZEN_SEED0: [usize; 6] = [0, 1, 10, 13, 14, 17];

    #[test]
    fn scarce_label() {
        let train = labels(&[0, 0, 0, 0, 0, 0, 1, 1]);
        let ep = sample_episode(&train, 5, 3);
        assert_eq!(ep.indices.len(), 7);
        assert!(ep.indices.contains(&6) && ep.indices.contains(&7));
        assert_eq!(
            ep.shortfall,
            vec![Shortfall {
                label: LabelId(1),
                available: 2,
                requested: 5
            }]
        );
    }

    #[test]
    fn spec_validation() {
        assert!(EpisodeSpec::new(0, vec![0]).is_err());
        assert!(EpisodeSpec::new(1, vec![]).is_err());
        assert!(EpisodeSpec::new(1, vec![3, 3]).is_err());
        assert_eq!(
            EpisodeSpec::with_default_seeds(16).unwrap().seeds,
            vec![0, 1, 2, 3, 4]
        );
    }
}
