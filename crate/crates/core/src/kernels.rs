//! Numeric kernels: distances, softmax and argmax.
//!
//! Every distance widens to `f64` and accumulates left to right, one
//! component at a time. The datastore scan relies on this: it must produce
//! bit-identical distances to a single [`distance`] call.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{Embedding, LabelDistribution, LabelId, Metric};

/// Distance between two embeddings of equal dimension.
pub fn distance<S: Scalar>(a: &Embedding<S>, b: &Embedding<S>, metric: Metric) -> Result<f64> {
    distance_slices(a.as_slice(), b.as_slice(), metric)
}

/// Slice form of [`distance`].
pub fn distance_slices<S: Scalar>(a: &[S], b: &[S], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    match metric {
        Metric::Euclidean => Ok(squared_diff(a, b).sqrt()),
        Metric::SquaredEuclidean => Ok(squared_diff(a, b)),
        Metric::OneMinusCosine => cosine_distance(dot(a, b), squared_norm(a), squared_norm(b)),
    }
}

#[inline]
pub(crate) fn squared_diff<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = x.widen() - y.widen();
        acc += d * d;
    }
    acc
}

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x.widen() * y.widen();
    }
    acc
}

#[inline]
pub(crate) fn squared_norm<S: Scalar>(a: &[S]) -> f64 {
    let mut acc = 0.0f64;
    for x in a {
        let w = x.widen();
        acc += w * w;
    }
    acc
}

/// `1 - a·b / (‖a‖‖b‖)` from precomputed pieces, clamped to `[0, 2]`.
///
/// The norms enter as `sqrt(‖a‖²‖b‖²)` so identical inputs give exactly zero.
#[inline]
pub(crate) fn cosine_distance(dot: f64, sq_norm_a: f64, sq_norm_b: f64) -> Result<f64> {
    let denom = (sq_norm_a * sq_norm_b).sqrt();
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::DegenerateInput(
            "zero-norm vector under cosine distance",
        ));
    }
    Ok((1.0 - dot / denom).clamp(0.0, 2.0))
}

/// Max-subtracted softmax of `scores / temperature`.
pub fn softmax<F: Float>(scores: &[F], temperature: F) -> Result<Vec<F>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("softmax scores"));
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    if !(temperature.is_finite() && temperature > F::zero()) {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let scaled: Vec<F> = scores.iter().map(|&s| s / temperature).collect();
    let max = scaled.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let sum = out.iter().copied().fold(F::zero(), |a, b| a + b);
    for v in &mut out {
        *v = *v / sum;
    }
    Ok(out)
}

/// Smallest label id attaining the maximum probability.
pub fn argmax_label(dist: &LabelDistribution) -> LabelId {
    LabelId(argmax_index(dist.as_slice()) as u32)
}

#[inline]
pub(crate) fn argmax_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding<f32> {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let z = emb(&[0.0, 0.0]);
        assert_eq!(distance(&z, &z, Metric::Euclidean).unwrap(), 0.0);
        let p = emb(&[3.0, 4.0]);
        assert_eq!(distance(&z, &p, Metric::Euclidean).unwrap(), 5.0);
        assert_eq!(distance(&z, &p, Metric::SquaredEuclidean).unwrap(), 25.0);
        let e1 = emb(&[1.0, 0.0]);
        let e2 = emb(&[0.0, 1.0]);
        assert_eq!(distance(&e1, &e2, Metric::OneMinusCosine).unwrap(), 1.0);
        assert_eq!(
            distance(&e1, &emb(&[-2.0, 0.0]), Metric::OneMinusCosine).unwrap(),
            2.0
        );
    }

    #[test]
    fn distance_errors() {
        let a = emb(&[1.0, 2.0]);
        let b = emb(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            distance(&a, &b, Metric::Euclidean),
            Err(Error::DimensionMismatch { .. })
        ));
        let z = emb(&[0.0, 0.0]);
        assert!(matches!(
            distance(&a, &z, Metric::OneMinusCosine),
            Err(Error::DegenerateInput(_))
        ));
        // Zero vectors are fine for the Euclidean family.
        assert!(distance(&a, &z, Metric::Euclidean).is_ok());
    }

    #[test]
    fn distance_generic_over_f64() {
        let a = Embedding::new(vec![0.0f64, 0.0]).unwrap();
        let b = Embedding::new(vec![3.0f64, 4.0]).unwrap();
        assert_eq!(distance(&a, &b, Metric::Euclidean).unwrap(), 5.0);
    }

    #[test]
    fn softmax_examples() {
        let out = softmax(&[7.5f64, 7.5, 7.5], 1.0).unwrap();
        for p in &out {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }

        let out = softmax(&[0.0f64, -std::f64::consts::LN_2], 1.0).unwrap();
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((out[1] - 1.0 / 3.0).abs() < 1e-15);

        let out = softmax(&[1000.0f64, 0.0], 1.0).unwrap();
        assert!(out.iter().all(|p| p.is_finite()));
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!(out[1] < 1e-300);

        let out = softmax(&[1000.0f32, 0.0], 1.0).unwrap();
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(
            softmax::<f64>(&[], 1.0),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            softmax(&[0.0, f64::NAN], 1.0),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(softmax(&[0.0, 1.0], 0.0).is_err());
        assert!(softmax(&[0.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn argmax_examples() {
        let d = LabelDistribution::new(vec![0.2, 0.7, 0.1]).unwrap();
        assert_eq!(argmax_label(&d), LabelId(1));
        let d = LabelDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_label(&d), LabelId(0));
        let d = LabelDistribution::new(vec![1.0]).unwrap();
        assert_eq!(argmax_label(&d), LabelId(0));
    }

    fn pair(max_dim: usize) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        (1..=max_dim).prop_flat_map(|d| {
            (
                prop::collection::vec(-100.0f32..100.0, d),
                prop::collection::vec(-100.0f32..100.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_zero_on_identity((a, b) in pair(64)) {
            let a = emb(&a);
            let b = emb(&b);
            for m in Metric::ALL {
                let ab = distance(&a, &b, m);
                let ba = distance(&b, &a, m);
                match (ab, ba) {
                    (Ok(x), Ok(y)) => {
                        prop_assert_eq!(x, y);
                        prop_assert!(x >= 0.0);
                    }
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "asymmetric error"),
                }
                if let Ok(d) = distance(&a, &a, m) {
                    prop_assert_eq!(d, 0.0);
                }
            }
        }

        #[test]
        fn softmax_shift_invariant(
            s in prop::collection::vec(-50.0f64..50.0, 1..40),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&s, 1.0).unwrap();
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let q = softmax(&shifted, 1.0).unwrap();
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_temperature_is_prescaling(
            s in prop::collection::vec(-50.0f64..50.0, 1..40),
            t in 0.05f64..20.0,
        ) {
            let p = softmax(&s, t).unwrap();
            let scaled: Vec<f64> = s.iter().map(|v| v / t).collect();
            let q = softmax(&scaled, 1.0).unwrap();
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn argmax_survives_softmax(s in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let p = LabelDistribution::new(softmax(&s, 1.0).unwrap()).unwrap();
            // First index of the maximum score.
            let mut best = 0;
            for i in 1..s.len() {
                if s[i] > s[best] {
                    best = i;
                }
            }
            prop_assert_eq!(argmax_label(&p), LabelId(best as u32));
        }
    }
}
