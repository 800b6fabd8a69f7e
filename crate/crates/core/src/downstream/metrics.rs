use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::invalid(format!("{name}[{i}] is not finite"))),
        None => Ok(()),
    }
}

/// Area under the ROC curve as the Mann–Whitney statistic; tied
/// positive/negative pairs count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_finite("scores", scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of positive ranks with average ranks for ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn accuracy<T: PartialEq>(predicted: &[T], labels: &[T]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    Ok(predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

/// Mean of `(ln(1+p) − ln(1+y))²`.
pub fn msle(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::invalid("MSLE of an empty set"));
    }
    check_finite("predictions", predictions)?;
    check_finite("targets", targets)?;
    if predictions.iter().chain(targets).any(|&v| v < 0.0) {
        return Err(Error::invalid(
            "MSLE needs non-negative predictions and targets",
        ));
    }
    let s: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p.ln_1p() - y.ln_1p()).powi(2))
        .sum();
    Ok(s / targets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredTransaction {
    pub score: f64,
    pub fraud: bool,
    /// Monetary value, finite and non-negative.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VdrPoint {
    pub fp_ratio: f64,
    pub vdr: f64,
    /// `None` when no threshold meets the FP-ratio bound.
    pub threshold: Option<f64>,
}

/// Value detection rate at each FP-ratio bound.
///
/// Thresholds range over the distinct scores (positive when
/// `score ≥ τ`). A threshold qualifies when it has at least one true
/// positive and `FP / TP ≤ r`; the qualifying threshold with the largest
/// detected fraud value wins, the higher threshold on ties.
pub fn vdr_curve(transactions: &[ScoredTransaction], fp_ratios: &[f64]) -> Result<Vec<VdrPoint>> {
    for (i, t) in transactions.iter().enumerate() {
        if !t.score.is_finite() || !t.value.is_finite() || t.value < 0.0 {
            return Err(Error::invalid(format!(
                "transaction {i} has a non-finite score or an invalid value"
            )));
        }
    }
    if fp_ratios.iter().any(|r| r.is_nan() || *r < 0.0) {
        return Err(Error::invalid("FP ratios must be non-negative"));
    }
    let total: f64 = transactions
        .iter()
        .filter(|t| t.fraud)
        .map(|t| t.value)
        .sum();
    if !transactions.iter().any(|t| t.fraud) {
        return Err(Error::invalid("VDR needs at least one fraud transaction"));
    }
    if total <= 0.0 {
        return Err(Error::invalid("VDR needs positive total fraud value"));
    }
    let mut sorted: Vec<&ScoredTransaction> = transactions.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    // (threshold, tp, fp, tp value) per distinct score, highest first
    let mut ops: Vec<(f64, u64, u64, f64)> = Vec::new();
    let (mut tp, mut fp, mut val) = (0u64, 0u64, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let tau = sorted[i].score;
        while i < sorted.len() && sorted[i].score == tau {
            if sorted[i].fraud {
                tp += 1;
                val += sorted[i].value;
            } else {
                fp += 1;
            }
            i += 1;
        }
        ops.push((tau, tp, fp, val));
    }
    Ok(fp_ratios
        .iter()
        .map(|&r| {
            let mut best: Option<(f64, f64)> = None;
            for &(tau, tp, fp, val) in &ops {
                if tp == 0 || fp as f64 / tp as f64 > r {
                    continue;
                }
                let vdr = val / total;
                // strict improvement only: earlier (higher) thresholds win ties
                if best.is_none_or(|(b, _)| vdr > b) {
                    best = Some((vdr, tau));
                }
            }
            VdrPoint {
                fp_ratio: r,
                vdr: best.map_or(0.0, |b| b.0),
                threshold: best.map(|b| b.1),
            }
        })
        .collect())
}

/// Indices kept after dropping each genuine row with probability
/// `1 − keep_fraction`; fraud rows are always kept.
pub fn downsample_genuine(is_fraud: &[bool], keep_fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(is_fraud
        .iter()
        .enumerate()
        .filter(|&(_, &f)| {
            let u: f64 = rng.random();
            f || u < keep_fraction
        })
        .map(|(i, _)| i)
        .collect())
}
