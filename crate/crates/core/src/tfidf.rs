//! Lexical retriever: TF-IDF cosine ranking over instance texts.
//!
//! Tokens are lowercased alphanumeric runs. Term weight is raw count times
//! `ln((1 + N) / (1 + df)) + 1`. Results come back as a [`NeighborSet`] with
//! `distance = 1 − cosine` and document positions as entry ids, so they feed
//! [`knn_distribution`](crate::inference::knn_distribution) unchanged.

use std::collections::{BTreeMap, HashMap};

use crate::datastore::{Neighbor, NeighborSet};
use crate::error::{Error, Result};
use crate::types::{EntryId, LabelId};

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone)]
struct Doc {
    /// (term id, tf·idf) sorted by term id.
    terms: Vec<(usize, f64)>,
    sq_norm: f64,
    label: LabelId,
}

#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    vocab: HashMap<String, usize>,
    idf: Vec<f64>,
    docs: Vec<Doc>,
}

fn weigh(counts: BTreeMap<usize, u32>, idf: &[f64]) -> (Vec<(usize, f64)>, f64) {
    let terms: Vec<(usize, f64)> = counts
        .into_iter()
        .map(|(t, c)| (t, c as f64 * idf[t]))
        .collect();
    let sq_norm = terms.iter().map(|(_, w)| w * w).sum();
    (terms, sq_norm)
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

impl TfIdfIndex {
    pub fn fit<'a, I>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, LabelId)>,
    {
        let mut vocab: HashMap<String, usize> = HashMap::new();
        let mut df: Vec<u32> = Vec::new();
        let mut raw: Vec<(BTreeMap<usize, u32>, LabelId)> = Vec::new();
        for (text, label) in corpus {
            let mut counts = BTreeMap::new();
            for tok in tokenize(text) {
                let next = vocab.len();
                let id = *vocab.entry(tok).or_insert(next);
                if id == df.len() {
                    df.push(0);
                }
                *counts.entry(id).or_insert(0) += 1;
            }
            for &t in counts.keys() {
                df[t] += 1;
            }
            raw.push((counts, label));
        }
        if raw.is_empty() {
            return Err(Error::EmptyInput("tf-idf corpus"));
        }
        let n = raw.len() as f64;
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        let docs = raw
            .into_iter()
            .map(|(counts, label)| {
                let (terms, sq_norm) = weigh(counts, &idf);
                Doc {
                    terms,
                    sq_norm,
                    label,
                }
            })
            .collect();
        Ok(Self { vocab, idf, docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocab.get(term).map(|&t| self.idf[t])
    }

    /// L2-normalized document vector as (term, weight) pairs; empty for a
    /// document without tokens.
    pub fn doc_vector(&self, doc: usize) -> Vec<(String, f64)> {
        let names: HashMap<usize, &str> =
            self.vocab.iter().map(|(k, &v)| (v, k.as_str())).collect();
        let d = &self.docs[doc];
        let norm = d.sq_norm.sqrt();
        d.terms
            .iter()
            .map(|&(t, w)| (names[&t].to_string(), w / norm))
            .collect()
    }

    fn vectorize(&self, text: &str) -> (Vec<(usize, f64)>, f64) {
        let mut counts = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(&t) = self.vocab.get(&tok) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        weigh(counts, &self.idf)
    }

    /// Cosine similarity between a text and a stored document.
    pub fn cosine(&self, text: &str, doc: usize) -> Result<f64> {
        let (q, q_norm) = self.vectorize(text);
        if q.is_empty() {
            return Err(Error::DegenerateQuery);
        }
        Ok(self.cosine_with(&q, q_norm, &self.docs[doc]))
    }

    fn cosine_with(&self, q: &[(usize, f64)], q_norm: f64, d: &Doc) -> f64 {
        let denom = (q_norm * d.sq_norm).sqrt();
        if denom > 0.0 {
            sparse_dot(q, &d.terms) / denom
        } else {
            0.0
        }
    }

    /// Top `min(k, N)` documents by `1 − cosine`, ties by document order.
    pub fn rank(&self, query_text: &str, k: usize) -> Result<NeighborSet> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let (q, q_norm) = self.vectorize(query_text);
        if q.is_empty() {
            return Err(Error::DegenerateQuery);
        }
        let all: Vec<Neighbor> = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| Neighbor {
                id: EntryId(i as u64),
                label: d.label,
                distance: (1.0 - self.cosine_with(&q, q_norm, d)).max(0.0),
            })
            .collect();
        Ok(NeighborSet::new(all)?.truncated(k))
    }
}
