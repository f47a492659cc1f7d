//! JSON Lines instance files.
//!
//! One object per line:
//!
//! ```json
//! {"id": 7, "embedding": [0.1, ...], "label": "per:city_of_death",
//!  "text": "...", "base_dist": [...], "base_scores": [...]}
//! ```
//!
//! Train instances need `embedding` (or `text` for the lexical retriever)
//! and `label`. Test instances additionally need exactly one of `base_dist`
//! (probabilities) or `base_scores` (raw scores, softmaxed on load).

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datastore::Datastore;
use crate::error::{Error, Result};
use crate::types::{Embedding, EntryId, LabelDistribution, LabelId, LabelTable};

/// Slack allowed on `Σ base_dist = 1` before rejecting; anything within it is
/// renormalized exactly.
pub const BASE_DIST_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_dist: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_scores: Option<Vec<f64>>,
}

/// A record plus where it came from.
#[derive(Debug, Clone)]
pub struct Located {
    pub file: PathBuf,
    pub line: usize,
    pub record: InstanceRecord,
}

impl Located {
    fn error(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.clone(),
            line: self.line,
            reason: reason.into(),
        }
    }
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Located>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InstanceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(Located {
            file: path.to_path_buf(),
            line: i + 1,
            record,
        });
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[InstanceRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a label list, one name per line, blank lines ignored.
pub fn read_label_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Label table from an explicit ordered list, or else the sorted set of
/// label names seen in `records`.
pub fn resolve_labels<'a>(
    explicit: Option<Vec<String>>,
    na: Option<&str>,
    records: impl IntoIterator<Item = &'a Located>,
) -> Result<LabelTable> {
    let names = match explicit {
        Some(names) => names,
        None => {
            let set: BTreeSet<&str> = records
                .into_iter()
                .map(|r| r.record.label.as_str())
                .collect();
            set.into_iter().map(str::to_string).collect()
        }
    };
    let table = LabelTable::new(names)?;
    match na {
        Some(name) => table.with_na(name),
        None => Ok(table),
    }
}

#[derive(Debug, Clone)]
pub struct TrainItem {
    pub line: usize,
    pub id: Option<u64>,
    pub embedding: Option<Embedding<f32>>,
    pub text: Option<String>,
    pub label: LabelId,
}

#[derive(Debug, Clone)]
pub struct TestItem {
    pub line: usize,
    pub embedding: Option<Embedding<f32>>,
    pub text: Option<String>,
    pub base: LabelDistribution,
    pub gold: LabelId,
}

fn embedding_of(r: &Located, dim: &mut Option<usize>) -> Result<Option<Embedding<f32>>> {
    let Some(values) = &r.record.embedding else {
        return Ok(None);
    };
    let e = Embedding::from_f64(values).map_err(|e| r.error(format!("embedding: {e}")))?;
    match *dim {
        Some(d) if d != e.dim() => {
            return Err(r.error(format!(
                "embedding dimension {} does not match {d}",
                e.dim()
            )))
        }
        None => *dim = Some(e.dim()),
        _ => {}
    }
    Ok(Some(e))
}

fn label_of(r: &Located, labels: &LabelTable) -> Result<LabelId> {
    labels
        .id(&r.record.label)
        .map_err(|_| r.error(format!("unknown label {:?}", r.record.label)))
}

/// Converts raw records to train items. `dim` carries the dimension across
/// files so train and test must agree.
pub fn train_items(
    records: &[Located],
    labels: &LabelTable,
    dim: &mut Option<usize>,
) -> Result<Vec<TrainItem>> {
    records
        .iter()
        .map(|r| {
            Ok(TrainItem {
                line: r.line,
                id: r.record.id,
                embedding: embedding_of(r, dim)?,
                text: r.record.text.clone(),
                label: label_of(r, labels)?,
            })
        })
        .collect()
}

pub fn test_items(
    records: &[Located],
    labels: &LabelTable,
    dim: &mut Option<usize>,
) -> Result<Vec<TestItem>> {
    records
        .iter()
        .map(|r| {
            let base = match (&r.record.base_dist, &r.record.base_scores) {
                (Some(p), None) => LabelDistribution::renormalized(p, BASE_DIST_SLACK),
                (None, Some(s)) => LabelDistribution::from_scores(s),
                (Some(_), Some(_)) => return Err(r.error("both base_dist and base_scores given")),
                (None, None) => return Err(r.error("test instance needs base_dist or base_scores")),
            }
            .map_err(|e| r.error(format!("base distribution: {e}")))?;
            if base.len() != labels.len() {
                return Err(r.error(format!(
                    "base distribution has {} entries for {} labels",
                    base.len(),
                    labels.len()
                )));
            }
            Ok(TestItem {
                line: r.line,
                embedding: embedding_of(r, dim)?,
                text: r.record.text.clone(),
                base,
                gold: label_of(r, labels)?,
            })
        })
        .collect()
}

/// Builds a datastore from train records. Records carrying an `id` keep it;
/// the rest get fresh ids in file order.
pub fn datastore_from_records(records: &[Located], labels: LabelTable) -> Result<Datastore<f32>> {
    let mut dim = None;
    let items = train_items(records, &labels, &mut dim)?;
    let mut store = match dim {
        Some(d) => Datastore::new(d, labels)?,
        None => Datastore::build(Vec::new(), labels)?,
    };
    for (item, r) in items.iter().zip(records) {
        let key = item
            .embedding
            .as_ref()
            .ok_or_else(|| r.error("train instance has no embedding"))?;
        let res = match item.id {
            Some(id) => store.insert_with_id(EntryId(id), key, item.label),
            None => store.add(key, item.label).map(|_| ()),
        };
        res.map_err(|e| r.error(e.to_string()))?;
    }
    Ok(store)
}
