//! Micro-averaged precision / recall / F1.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::LabelId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MicroF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro F1. With `na` set, the "no relation" class counts neither as a
/// prediction nor as a gold relation (TACRED convention); without it every
/// prediction and gold counts, so all three numbers equal accuracy.
pub fn micro_f1(preds: &[LabelId], golds: &[LabelId], na: Option<LabelId>) -> Result<MicroF1> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    let is_rel = |l: &LabelId| Some(*l) != na;
    let correct = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g && is_rel(g))
        .count();
    let predicted = preds.iter().filter(|p| is_rel(p)).count();
    let gold = golds.iter().filter(|g| is_rel(g)).count();
    let precision = ratio(correct, predicted);
    let recall = ratio(correct, gold);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MicroF1 {
        precision,
        recall,
        f1,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
