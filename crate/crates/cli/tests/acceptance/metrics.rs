use nppr::downstream::{auc, msle, vdr_curve, ScoredTransaction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Shared;
use crate::Outcome;

fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut credit, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                credit += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    credit / pairs
}

/// Best detected value share over every distinct-score threshold.
fn vdr_brute(tx: &[ScoredTransaction], r: f64) -> (f64, Option<f64>) {
    let total: f64 = tx.iter().filter(|t| t.fraud).map(|t| t.value).sum();
    let mut taus: Vec<f64> = tx.iter().map(|t| t.score).collect();
    taus.sort_by(|a, b| b.total_cmp(a));
    taus.dedup();
    let mut best = (0.0, None);
    for tau in taus {
        let tp = tx.iter().filter(|t| t.score >= tau && t.fraud).count();
        let fp = tx.iter().filter(|t| t.score >= tau && !t.fraud).count();
        if tp == 0 || fp as f64 > r * tp as f64 {
            continue;
        }
        let v = tx
            .iter()
            .filter(|t| t.score >= tau && t.fraud)
            .map(|t| t.value)
            .sum::<f64>()
            / total;
        if best.1.is_none() || v > best.0 {
            best = (v, Some(tau));
        }
    }
    best
}

pub fn metric_oracles(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut auc_dev: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=100);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..12) as f64 / 5.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        auc_dev = auc_dev.max((auc(&scores, &labels).unwrap() - auc_pairs(&scores, &labels)).abs());
    }
    let mut msle_dev: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=60);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5e3)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5e3)).collect();
        let o = p
            .iter()
            .zip(&y)
            .map(|(a, b)| ((1.0 + a).ln() - (1.0 + b).ln()).powi(2))
            .sum::<f64>()
            / n as f64;
        msle_dev = msle_dev.max((msle(&p, &y).unwrap() - o).abs());
    }
    let ratios = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 50.0];
    let (mut vdr_dev, mut threshold_mismatch, mut non_monotone): (f64, usize, usize) = (0.0, 0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let mut tx: Vec<ScoredTransaction> = (0..n)
            .map(|_| ScoredTransaction {
                score: rng.random_range(0..25) as f64 / 25.0,
                fraud: rng.random_bool(0.25),
                value: rng.random_range(0.0..500.0),
            })
            .collect();
        tx[0].fraud = true;
        tx[0].value += 1.0;
        let curve = vdr_curve(&tx, &ratios).unwrap();
        for (p, &r) in curve.iter().zip(&ratios) {
            let (v, t) = vdr_brute(&tx, r);
            vdr_dev = vdr_dev.max((p.vdr - v).abs());
            threshold_mismatch += usize::from(p.threshold != t);
        }
        non_monotone += curve.windows(2).filter(|w| w[1].vdr < w[0].vdr).count();
    }
    let pass = auc_dev < 1e-12
        && msle_dev < 1e-12
        && vdr_dev < 1e-12
        && threshold_mismatch == 0
        && non_monotone == 0;
    Outcome::new(
        pass,
        format!(
            "AUC dev {auc_dev:.1e} (200 instances), MSLE dev {msle_dev:.1e}, VDR dev {vdr_dev:.1e} with \
             {threshold_mismatch} threshold mismatches and {non_monotone} decreases (1000 instances)"
        ),
    )
}
