//! Retrieval-enhanced prediction.
//!
//! Neighbor distances become a label distribution through a softmax over
//! `-distance / temperature`, summed per label. That distribution is mixed
//! with the base model's as `λ·p_knn + (1 − λ)·p_base`.

use rayon::prelude::*;

use crate::datastore::{Datastore, NeighborSet, SearchScratch};
use crate::error::{Error, Result};
use crate::kernels::{argmax_label, softmax};
use crate::scalar::Scalar;
use crate::types::{Embedding, InferenceConfig, LabelDistribution, LabelId};

/// A query embedding with the base model's distribution over labels.
#[derive(Debug, Clone)]
pub struct Query<S = f32> {
    pub embedding: Embedding<S>,
    pub base: LabelDistribution,
    pub gold: Option<LabelId>,
}

impl<S: Scalar> Query<S> {
    pub fn new(embedding: Embedding<S>, base: LabelDistribution) -> Self {
        Self {
            embedding,
            base,
            gold: None,
        }
    }

    pub fn with_gold(mut self, gold: LabelId) -> Self {
        self.gold = Some(gold);
        self
    }
}

/// Everything [`predict`] computed for one query.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub label: LabelId,
    pub distribution: LabelDistribution,
    pub knn: LabelDistribution,
    pub neighbors: NeighborSet,
}

/// Label distribution of the retrieved neighbors. Labels with no neighbor get
/// exactly zero mass.
pub fn knn_distribution(
    neighbors: &NeighborSet,
    num_labels: usize,
    temperature: f64,
) -> Result<LabelDistribution> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighbors);
    }
    for n in neighbors {
        if n.label.index() >= num_labels {
            return Err(Error::InvalidLabel {
                label: n.label,
                num_labels,
            });
        }
    }
    let scores: Vec<f64> = neighbors.iter().map(|n| -n.distance).collect();
    let weights = softmax(&scores, temperature)?;
    let mut probs = vec![0.0f64; num_labels];
    for (n, w) in neighbors.iter().zip(weights) {
        probs[n.label.index()] += w;
    }
    Ok(LabelDistribution::from_vec_unchecked(probs))
}

/// `lambda · p_knn + (1 − lambda) · p_base`.
pub fn interpolate(
    p_knn: &LabelDistribution,
    p_base: &LabelDistribution,
    lambda: f64,
) -> Result<LabelDistribution> {
    if p_knn.len() != p_base.len() {
        return Err(Error::LengthMismatch {
            left: p_knn.len(),
            right: p_base.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let rest = 1.0 - lambda;
    let probs = p_knn
        .as_slice()
        .iter()
        .zip(p_base.as_slice())
        .map(|(a, b)| lambda * a + rest * b)
        .collect();
    Ok(LabelDistribution::from_vec_unchecked(probs))
}

pub fn predict<S: Scalar>(
    store: &Datastore<S>,
    q: &Query<S>,
    cfg: &InferenceConfig,
) -> Result<Prediction> {
    predict_with(store, q, cfg, &mut SearchScratch::default())
}

/// [`predict`] reusing a caller-owned search buffer.
pub fn predict_with<S: Scalar>(
    store: &Datastore<S>,
    q: &Query<S>,
    cfg: &InferenceConfig,
    scratch: &mut SearchScratch,
) -> Result<Prediction> {
    cfg.validate()?;
    let num_labels = store.labels().len();
    if q.base.len() != num_labels {
        return Err(Error::LengthMismatch {
            left: q.base.len(),
            right: num_labels,
        });
    }
    let neighbors = store.knn_query_with(&q.embedding, cfg.k, cfg.metric, scratch)?;
    let knn = knn_distribution(&neighbors, num_labels, cfg.temperature)?;
    let distribution = interpolate(&knn, &q.base, cfg.lambda)?;
    Ok(Prediction {
        label: argmax_label(&distribution),
        distribution,
        knn,
        neighbors,
    })
}

/// [`predict`] over many queries, in parallel, order preserved. The first
/// failing query (by position) aborts the batch.
pub fn predict_batch<S: Scalar>(
    store: &Datastore<S>,
    qs: &[Query<S>],
    cfg: &InferenceConfig,
) -> Result<Vec<(LabelId, LabelDistribution)>> {
    let results: Vec<Result<(LabelId, LabelDistribution)>> = qs
        .par_iter()
        .map_init(SearchScratch::default, |scratch, q| {
            predict_with(store, q, cfg, scratch).map(|p| (p.label, p.distribution))
        })
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Batch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::Neighbor;
    use crate::types::{EntryId, LabelTable, Metric};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn nb(id: u64, label: u32, distance: f64) -> Neighbor {
        Neighbor {
            id: EntryId(id),
            label: LabelId(label),
            distance,
        }
    }

    fn set(v: Vec<Neighbor>) -> NeighborSet {
        NeighborSet::new(v).unwrap()
    }

    fn dist(v: &[f64]) -> LabelDistribution {
        LabelDistribution::new(v.to_vec()).unwrap()
    }

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn knn_distribution_examples() {
        let p = knn_distribution(&set(vec![nb(0, 0, 3.7)]), 3, 1.0).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);

        let p = knn_distribution(&set(vec![nb(0, 0, 2.0), nb(1, 1, 2.0)]), 2, 1.0).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let p = knn_distribution(&set(vec![nb(0, 0, 0.0), nb(1, 1, LN_2)]), 3, 1.0).unwrap();
        // Oracle: weights e^0 = 1 and e^-ln2 = 1/2, normalized.
        let w = [1.0f64, (-LN_2).exp()];
        let z = w[0] + w[1];
        assert!((p.get(LabelId(0)) - w[0] / z).abs() < 1e-15);
        assert!((p.get(LabelId(1)) - w[1] / z).abs() < 1e-15);
        assert!((p.get(LabelId(0)) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.get(LabelId(2)), 0.0);
    }

    #[test]
    fn knn_distribution_errors() {
        assert!(matches!(
            knn_distribution(&NeighborSet::default(), 2, 1.0),
            Err(Error::EmptyNeighbors)
        ));
        assert!(matches!(
            knn_distribution(&set(vec![nb(0, 5, 0.0)]), 2, 1.0),
            Err(Error::InvalidLabel { .. })
        ));
    }

    #[test]
    fn interpolate_examples() {
        let knn = dist(&[1.0, 0.0]);
        let base = dist(&[0.3, 0.7]);
        assert_eq!(interpolate(&knn, &base, 0.0).unwrap(), base);
        assert_eq!(interpolate(&knn, &base, 1.0).unwrap(), knn);
        let mixed = interpolate(&knn, &base, 0.2).unwrap();
        assert!((mixed.as_slice()[0] - 0.44).abs() < 1e-15);
        assert!((mixed.as_slice()[1] - 0.56).abs() < 1e-15);

        assert!(matches!(
            interpolate(&knn, &dist(&[1.0]), 0.5),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(interpolate(&knn, &base, 1.01).is_err());
        assert!(interpolate(&knn, &base, -0.1).is_err());
        assert!(interpolate(&knn, &base, f64::NAN).is_err());
    }

    fn ab() -> LabelTable {
        LabelTable::new(["A", "B"]).unwrap()
    }

    #[test]
    fn predict_examples() {
        let store = Datastore::build(vec![(emb(&[1.0, 1.0]), LabelId(0))], ab()).unwrap();
        let q = Query::new(emb(&[-4.0, 9.0]), dist(&[0.1, 0.9]));
        let cfg = InferenceConfig::default().with_lambda(1.0);
        assert_eq!(predict(&store, &q, &cfg).unwrap().label, LabelId(0));

        let cfg = InferenceConfig::default().with_lambda(0.0);
        let p = predict(&store, &q, &cfg).unwrap();
        assert_eq!(p.label, LabelId(1));
        assert_eq!(p.distribution, q.base);
    }

    #[test]
    fn predict_matches_hand_oracle() {
        let store = Datastore::build(
            vec![
                (emb(&[0.0, 0.0]), LabelId(0)),
                (emb(&[3.0, 4.0]), LabelId(1)),
                (emb(&[6.0, 8.0]), LabelId(1)),
            ],
            ab(),
        )
        .unwrap();
        let q = Query::new(emb(&[0.0, 0.0]), dist(&[0.1, 0.9]));
        let cfg = InferenceConfig::new(3, 0.5, Metric::Euclidean, 1.0).unwrap();
        let p = predict(&store, &q, &cfg).unwrap();

        // Distances 0, 5, 10 by hand.
        let w: Vec<f64> = [0.0f64, 5.0, 10.0].iter().map(|d| (-d).exp()).collect();
        let z: f64 = w.iter().sum();
        let knn = [w[0] / z, (w[1] + w[2]) / z];
        let expect = [0.5 * knn[0] + 0.5 * 0.1, 0.5 * knn[1] + 0.5 * 0.9];
        for (got, want) in p.distribution.as_slice().iter().zip(expect) {
            assert!((got - want).abs() < 1e-9);
        }
        assert_eq!(p.label, LabelId(0));
        assert_eq!(p.neighbors.len(), 3);
    }

    #[test]
    fn predict_rejects_wrong_base_length() {
        let store = Datastore::build(vec![(emb(&[1.0]), LabelId(0))], ab()).unwrap();
        let q = Query::new(emb(&[1.0]), dist(&[1.0]));
        assert!(matches!(
            predict(&store, &q, &InferenceConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn batch_examples() {
        let store = Datastore::build(
            vec![(emb(&[0.0]), LabelId(0)), (emb(&[1.0]), LabelId(1))],
            ab(),
        )
        .unwrap();
        let cfg = InferenceConfig::default();
        assert!(predict_batch(&store, &[], &cfg).unwrap().is_empty());

        let qs: Vec<Query> = (0..9)
            .map(|i| Query::new(emb(&[i as f32 / 8.0]), dist(&[0.5, 0.5])))
            .collect();
        let whole = predict_batch(&store, &qs, &cfg).unwrap();
        let single = predict(&store, &qs[3], &cfg).unwrap();
        assert_eq!(whole[3], (single.label, single.distribution));
        let mut parts = predict_batch(&store, &qs[..4], &cfg).unwrap();
        parts.extend(predict_batch(&store, &qs[4..], &cfg).unwrap());
        assert_eq!(parts, whole);

        let mut bad = qs.clone();
        bad[5] = Query::new(emb(&[0.0, 1.0]), dist(&[0.5, 0.5]));
        bad[7] = Query::new(emb(&[0.0, 1.0]), dist(&[0.5, 0.5]));
        match predict_batch(&store, &bad, &cfg) {
            Err(Error::Batch { index, .. }) => assert_eq!(index, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flip_toward_unanimous_neighbors() {
        // Base favours label 0 ("NA") at 0.55; all neighbors carry label 1.
        let labels = LabelTable::new(["no_relation", "per:city_of_death", "org:founded_by"])
            .unwrap()
            .with_na("no_relation")
            .unwrap();
        let store =
            Datastore::build((0..16).map(|i| (emb(&[i as f32, 1.0]), LabelId(1))), labels).unwrap();
        let q = Query::new(emb(&[0.0, 0.0]), dist(&[0.55, 0.4, 0.05]));
        let p = predict(&store, &q, &InferenceConfig::default()).unwrap();
        assert_eq!(argmax_label(&q.base), LabelId(0));
        assert_eq!(p.label, LabelId(1));
        assert!((p.knn.get(LabelId(1)) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn distance_shift_invariance(
            ds in prop::collection::vec((0u32..4, 0.0f64..20.0), 1..32),
            c in 0.0f64..50.0,
        ) {
            let a: Vec<Neighbor> = ds.iter().enumerate().map(|(i, &(l, d))| nb(i as u64, l, d)).collect();
            let b: Vec<Neighbor> = ds.iter().enumerate().map(|(i, &(l, d))| nb(i as u64, l, d + c)).collect();
            let pa = knn_distribution(&set(a), 4, 1.0).unwrap();
            let pb = knn_distribution(&set(b), 4, 1.0).unwrap();
            for (x, y) in pa.as_slice().iter().zip(pb.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((pa.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for l in 0..4u32 {
                if !ds.iter().any(|&(x, _)| x == l) {
                    prop_assert_eq!(pa.get(LabelId(l)), 0.0);
                }
            }
        }

        #[test]
        fn interpolation_stays_a_distribution(
            a in prop::collection::vec(0.0f64..1.0, 2..10),
            lambda in 0.0f64..=1.0,
        ) {
            let z: f64 = a.iter().sum::<f64>() + 1e-3;
            let p: Vec<f64> = a.iter().map(|x| (x + 1e-3 / a.len() as f64) / z).collect();
            let mut q = p.clone();
            q.reverse();
            let p = dist(&p);
            let q = dist(&q);
            let m = interpolate(&p, &q, lambda).unwrap();
            prop_assert!(LabelDistribution::new(m.into_vec()).is_ok());
        }
    }
}
