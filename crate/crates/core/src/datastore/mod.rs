//! The open-book datastore: (embedding, label) pairs with exact search.
//!
//! Keys live in one row-major buffer. Deleted rows are tombstoned so entry
//! ids stay stable for the life of the store; [`Datastore::compact`] (and
//! saving) drops them.

mod persist;

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::types::{Embedding, EntryId, LabelId, LabelTable, Metric};

pub use persist::{FORMAT_VERSION, MAGIC};

/// Rows scanned together so their accumulators run in parallel.
const ROW_BLOCK: usize = 4;

/// Up to this k the scan keeps a sorted top-k buffer; beyond it every
/// candidate is collected and partially selected.
const BOUNDED_K: usize = 64;

/// One retrieved entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: EntryId,
    pub label: LabelId,
    pub distance: f64,
}

/// Neighbors sorted by ascending distance, ties by ascending entry id.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct NeighborSet {
    neighbors: Vec<Neighbor>,
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.id.cmp(&b.id))
}

impl NeighborSet {
    /// Sorts `neighbors` into canonical order. Distances must be finite and
    /// non-negative.
    pub fn new(mut neighbors: Vec<Neighbor>) -> Result<Self> {
        if let Some(i) = neighbors
            .iter()
            .position(|n| !(n.distance.is_finite() && n.distance >= 0.0))
        {
            return Err(Error::NonFinite { index: i });
        }
        neighbors.sort_by(neighbor_order);
        Ok(Self { neighbors })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn as_slice(&self) -> &[Neighbor] {
        &self.neighbors
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Neighbor> {
        self.neighbors.iter()
    }

    /// The `k` closest. Equal to querying with `k` directly.
    pub fn truncated(&self, k: usize) -> NeighborSet {
        NeighborSet {
            neighbors: self.neighbors[..k.min(self.neighbors.len())].to_vec(),
        }
    }
}

impl<'a> IntoIterator for &'a NeighborSet {
    type Item = &'a Neighbor;
    type IntoIter = std::slice::Iter<'a, Neighbor>;

    fn into_iter(self) -> Self::IntoIter {
        self.neighbors.iter()
    }
}

/// Borrowed view of a live entry.
#[derive(Debug, Clone, Copy)]
pub struct EntryRef<'a, S> {
    pub id: EntryId,
    pub label: LabelId,
    pub key: &'a [S],
}

/// Reusable buffer for [`Datastore::knn_query_with`].
#[derive(Debug, Default)]
pub struct SearchScratch {
    candidates: Vec<Neighbor>,
}

/// Embedding → label key-value store.
#[derive(Debug, Clone)]
pub struct Datastore<S = f32> {
    dim: usize,
    labels: LabelTable,
    keys: Vec<S>,
    sq_norms: Vec<f64>,
    ids: Vec<EntryId>,
    values: Vec<LabelId>,
    alive: Vec<bool>,
    live: usize,
    rows: HashMap<EntryId, usize>,
    next_id: u64,
}

impl<S: Scalar> Datastore<S> {
    /// Empty store of a fixed dimension.
    pub fn new(dim: usize, labels: LabelTable) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        Ok(Self::empty(dim, labels))
    }

    fn empty(dim: usize, labels: LabelTable) -> Self {
        Self {
            dim,
            labels,
            keys: Vec::new(),
            sq_norms: Vec::new(),
            ids: Vec::new(),
            values: Vec::new(),
            alive: Vec::new(),
            live: 0,
            rows: HashMap::new(),
            next_id: 0,
        }
    }

    /// Stores every pair in input order with ids `0..n`. The dimension is
    /// taken from the first record; an empty input yields a store whose
    /// dimension is fixed by the first [`add`](Self::add).
    pub fn build<I>(records: I, labels: LabelTable) -> Result<Self>
    where
        I: IntoIterator<Item = (Embedding<S>, LabelId)>,
    {
        let mut store = Self::empty(0, labels);
        for (index, (key, value)) in records.into_iter().enumerate() {
            if store.dim != 0 && key.dim() != store.dim {
                return Err(Error::RecordDimension {
                    index,
                    expected: store.dim,
                    found: key.dim(),
                });
            }
            store.add(&key, value)?;
        }
        Ok(store)
    }

    /// Declared dimension; zero only for a store built from no records.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &LabelTable {
        &self.labels
    }

    /// Number of live entries.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn next_id(&self) -> EntryId {
        EntryId(self.next_id)
    }

    pub fn contains(&self, id: EntryId) -> bool {
        self.rows.contains_key(&id)
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if self.dim != 0 && found != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    /// Appends an entry under a fresh id.
    pub fn add(&mut self, key: &Embedding<S>, value: LabelId) -> Result<EntryId> {
        let id = EntryId(self.next_id);
        self.insert_with_id(id, key, value)?;
        Ok(id)
    }

    /// Appends an entry under a caller-chosen id. Later fresh ids start past it.
    pub fn insert_with_id(
        &mut self,
        id: EntryId,
        key: &Embedding<S>,
        value: LabelId,
    ) -> Result<()> {
        self.check_dim(key.dim())?;
        self.labels.check(value)?;
        if self.rows.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        if self.dim == 0 {
            self.dim = key.dim();
        }
        self.push_row(id, key.as_slice(), value);
        Ok(())
    }

    fn push_row(&mut self, id: EntryId, key: &[S], value: LabelId) {
        let row = self.ids.len();
        self.keys.extend_from_slice(key);
        self.sq_norms.push(kernels::squared_norm(key));
        self.ids.push(id);
        self.values.push(value);
        self.alive.push(true);
        self.rows.insert(id, row);
        self.live += 1;
        self.next_id = self.next_id.max(id.0.saturating_add(1));
    }

    /// Relabels an entry; the key is untouched.
    pub fn edit(&mut self, id: EntryId, new_value: LabelId) -> Result<()> {
        let row = *self.rows.get(&id).ok_or(Error::NotFound(id))?;
        self.labels.check(new_value)?;
        self.values[row] = new_value;
        Ok(())
    }

    pub fn delete(&mut self, id: EntryId) -> Result<()> {
        let row = self.rows.remove(&id).ok_or(Error::NotFound(id))?;
        self.alive[row] = false;
        self.live -= 1;
        Ok(())
    }

    /// Drops tombstoned rows. Ids and order of live entries are preserved.
    pub fn compact(&mut self) {
        if self.live == self.ids.len() {
            return;
        }
        let mut out = Self::empty(self.dim, self.labels.clone());
        out.next_id = self.next_id;
        for e in self.entries() {
            out.push_row(e.id, e.key, e.label);
        }
        out.next_id = self.next_id;
        *self = out;
    }

    /// Live entries in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = EntryRef<'_, S>> + '_ {
        let dim = self.dim;
        (0..self.ids.len())
            .filter(move |&row| self.alive[row])
            .map(move |row| EntryRef {
                id: self.ids[row],
                label: self.values[row],
                key: &self.keys[row * dim..(row + 1) * dim],
            })
    }

    pub fn get(&self, id: EntryId) -> Result<EntryRef<'_, S>> {
        let row = *self.rows.get(&id).ok_or(Error::NotFound(id))?;
        Ok(EntryRef {
            id,
            label: self.values[row],
            key: &self.keys[row * self.dim..(row + 1) * self.dim],
        })
    }

    /// Exact `min(k, len)` nearest entries under `metric`.
    pub fn knn_query(&self, query: &Embedding<S>, k: usize, metric: Metric) -> Result<NeighborSet> {
        let mut scratch = SearchScratch::default();
        self.knn_query_with(query, k, metric, &mut scratch)
    }

    /// [`knn_query`](Self::knn_query) reusing a caller-owned buffer.
    pub fn knn_query_with(
        &self,
        query: &Embedding<S>,
        k: usize,
        metric: Metric,
        scratch: &mut SearchScratch,
    ) -> Result<NeighborSet> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(Error::EmptyDatastore);
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let q = query.as_slice();
        let q_norm = kernels::squared_norm(q);
        let bounded = k <= BOUNDED_K && k < self.live;
        let cap = if bounded { k } else { usize::MAX };
        let candidates = &mut scratch.candidates;
        candidates.clear();
        candidates.reserve(if bounded { k + 1 } else { self.live });

        let rows = self.ids.len();
        let mut row = 0;
        while row + ROW_BLOCK <= rows {
            let mut acc = [0.0f64; ROW_BLOCK];
            self.scan_block(q, row, metric, &mut acc);
            for (j, &a) in acc.iter().enumerate() {
                self.push_candidate(candidates, cap, row + j, a, q_norm, metric)?;
            }
            row += ROW_BLOCK;
        }
        while row < rows {
            let key = &self.keys[row * self.dim..(row + 1) * self.dim];
            let a = match metric {
                Metric::OneMinusCosine => kernels::dot(q, key),
                _ => kernels::squared_diff(q, key),
            };
            self.push_candidate(candidates, cap, row, a, q_norm, metric)?;
            row += 1;
        }

        if !bounded {
            let take = k.min(candidates.len());
            if take < candidates.len() {
                candidates.select_nth_unstable_by(take - 1, neighbor_order);
                candidates.truncate(take);
            }
            candidates.sort_by(neighbor_order);
        }
        Ok(NeighborSet {
            neighbors: candidates.clone(),
        })
    }

    /// Per-row sequential accumulation for four rows at once; each
    /// accumulator sees the same operation order as the scalar kernels.
    #[inline]
    fn scan_block(&self, q: &[S], row: usize, metric: Metric, acc: &mut [f64; ROW_BLOCK]) {
        let dim = self.dim;
        let block = &self.keys[row * dim..(row + ROW_BLOCK) * dim];
        let (r0, rest) = block.split_at(dim);
        let (r1, rest) = rest.split_at(dim);
        let (r2, r3) = rest.split_at(dim);
        let (mut a0, mut a1, mut a2, mut a3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        match metric {
            Metric::OneMinusCosine => {
                for ((((x, y0), y1), y2), y3) in q.iter().zip(r0).zip(r1).zip(r2).zip(r3) {
                    let x = x.widen();
                    a0 += x * y0.widen();
                    a1 += x * y1.widen();
                    a2 += x * y2.widen();
                    a3 += x * y3.widen();
                }
            }
            Metric::Euclidean | Metric::SquaredEuclidean => {
                for ((((x, y0), y1), y2), y3) in q.iter().zip(r0).zip(r1).zip(r2).zip(r3) {
                    let x = x.widen();
                    let d0 = x - y0.widen();
                    let d1 = x - y1.widen();
                    let d2 = x - y2.widen();
                    let d3 = x - y3.widen();
                    a0 += d0 * d0;
                    a1 += d1 * d1;
                    a2 += d2 * d2;
                    a3 += d3 * d3;
                }
            }
        }
        *acc = [a0, a1, a2, a3];
    }

    /// Appends the row's neighbor, or with a finite `cap` inserts it into
    /// the sorted buffer of the `cap` best so far.
    #[inline]
    fn push_candidate(
        &self,
        out: &mut Vec<Neighbor>,
        cap: usize,
        row: usize,
        acc: f64,
        q_norm: f64,
        metric: Metric,
    ) -> Result<()> {
        if !self.alive[row] {
            return Ok(());
        }
        let distance = match metric {
            Metric::Euclidean => acc.sqrt(),
            Metric::SquaredEuclidean => acc,
            Metric::OneMinusCosine => kernels::cosine_distance(acc, q_norm, self.sq_norms[row])?,
        };
        let n = Neighbor {
            id: self.ids[row],
            label: self.values[row],
            distance,
        };
        if cap == usize::MAX {
            out.push(n);
            return Ok(());
        }
        if out.len() == cap {
            if neighbor_order(&n, &out[cap - 1]) != Ordering::Less {
                return Ok(());
            }
            out.pop();
        }
        let pos = out.partition_point(|x| neighbor_order(x, &n) == Ordering::Less);
        out.insert(pos, n);
        Ok(())
    }
}
