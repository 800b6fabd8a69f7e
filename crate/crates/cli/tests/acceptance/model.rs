use std::time::Instant;

use nppr::data_model::{EncodedEvent, EncodedSequence, EventSchema, FeatureLayout, FeatureSpec};
use nppr::model::{np_loss, pr_loss, pr_weight, total_loss, EncoderConfig, LossConfig, NpprModel};
use nppr::nn::{finite_diff_check, Dense, Mlp, Parameterized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Shared;
use crate::Outcome;

/// One numeric feature and one categorical feature of cardinality `card`.
fn toy_model(seed: u64, card: usize) -> NpprModel {
    let schema = EventSchema::new(
        "entity_id",
        "timestamp",
        vec![
            FeatureSpec::numeric("amount"),
            FeatureSpec::categorical("mcc"),
        ],
    )
    .unwrap();
    let layout = FeatureLayout::from_parts(&schema, &[card]);
    let cfg = EncoderConfig {
        categorical_embedding_dim: 3,
        mlp_hidden: vec![8, 6],
        gru_hidden: 8,
        embedding_dim: 5,
        decoder_hidden: vec![8, 7],
    };
    let mut m = NpprModel::new(layout, cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for block in m.blocks_mut() {
        if block.iter().all(|&v| v == 0.0) {
            block
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
    m
}

fn random_sequence(rng: &mut ChaCha8Rng, len: usize, card: usize) -> EncodedSequence {
    let mut ts = 1_650_000_000i64;
    let mut events = Vec::new();
    let mut timestamps = Vec::new();
    for _ in 0..len {
        ts += rng.random_range(0..6 * 86_400);
        timestamps.push(ts);
        events.push(EncodedEvent {
            numeric: vec![rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5)],
            categories: vec![rng.random_range(0..card)],
        });
    }
    EncodedSequence {
        entity_id: "toy".into(),
        events,
        timestamps,
    }
}

fn dense(l: &Dense, x: &[f64]) -> Vec<f64> {
    (0..l.out_dim)
        .map(|j| {
            l.bias[j]
                + (0..l.in_dim)
                    .map(|k| l.weight[j * l.in_dim + k] * x[k])
                    .sum::<f64>()
        })
        .collect()
}

fn mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, l) in m.layers.iter().enumerate() {
        h = dense(l, &h);
        if i + 1 < m.layers.len() {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    h
}

/// Squared error on the amount and the gap, cross-entropy on the category.
fn reconstruction(out: &[f64], target: &EncodedEvent, card: usize) -> f64 {
    let logits = &out[1..1 + card];
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let p = (logits[target.categories[0]] - m).exp() / z;
    (out[0] - target.numeric[0]).powi(2) - (p + 1e-12).ln()
        + (out[1 + card] - target.numeric[1]).powi(2)
}

fn np_brute(m: &NpprModel, e: &[Vec<f64>], s: &EncodedSequence, card: usize) -> f64 {
    (0..s.len().saturating_sub(1))
        .map(|t| reconstruction(&mlp(&m.np_decoder, &e[t]), &s.events[t + 1], card))
        .sum()
}

fn pr_brute(
    m: &NpprModel,
    e: &[Vec<f64>],
    s: &EncodedSequence,
    card: usize,
    k_max: usize,
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for t in 0..s.len() {
        for j in 0..t {
            if t - j > k_max {
                continue;
            }
            let dt = (s.timestamps[t] - s.timestamps[j]) as f64 / 86_400.0;
            let mut x = e[t].clone();
            x.push(dt / lambda);
            total +=
                (-dt / lambda).exp() * reconstruction(&mlp(&m.pr_decoder, &x), &s.events[j], card);
        }
    }
    total
}

/// Central-difference step; smaller steps let round-off dominate on
/// coordinates whose gradient is ~1e-7.
const FD_STEP: f64 = 1e-4;

pub fn gradient_correctness(_: &mut Shared) -> Outcome {
    let started = Instant::now();
    let card = 3;
    let m = toy_model(17, card);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = random_sequence(&mut rng, 3, card);
    let cfg = LossConfig {
        alpha: 0.3,
        lambda_days: 2.0,
        max_past_events: 2,
        normalize_by_length: true,
    };
    let (_, grads) = m.sequence_loss_and_grad(&s, &cfg).unwrap();
    let report = finite_diff_check(
        |theta| {
            let mut mm = m.clone();
            mm.assign_flat(theta);
            mm.sequence_loss(&s, &cfg).unwrap().objective
        },
        &m.flatten(),
        &grads.flatten(),
        FD_STEP,
        None,
    );
    let secs = started.elapsed().as_secs_f64();
    Outcome::new(
        report.max_rel_error < 1e-4 && secs < 10.0,
        format!(
            "max relative error {:.2e} over {} parameters with step {FD_STEP:e} (< 1e-4), {secs:.2} s (< 10 s)",
            report.max_rel_error,
            m.flatten().len()
        ),
    )
}

pub fn loss_oracles(_: &mut Shared) -> Outcome {
    let card = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let m = toy_model(1000 + i, card);
        let len = rng.random_range(1..=8);
        let s = random_sequence(&mut rng, len, card);
        let cfg = LossConfig {
            alpha: rng.random_range(0.0..=1.0),
            lambda_days: rng.random_range(0.5..120.0),
            max_past_events: rng.random_range(1..=9),
            normalize_by_length: false,
        };
        let e = m.encode_sequence(&s).unwrap();
        let np = np_loss(&m, &e, &s).unwrap().value;
        let pr = pr_loss(&m, &e, &s, &cfg).unwrap().value;
        let np_o = np_brute(&m, &e, &s, card);
        let pr_o = pr_brute(&m, &e, &s, card, cfg.max_past_events, cfg.lambda_days);
        let total_o = (1.0 - cfg.alpha) * np_o + cfg.alpha * pr_o;
        let total = m.sequence_loss(&s, &cfg).unwrap().total;
        worst = worst
            .max((np - np_o).abs())
            .max((pr - pr_o).abs())
            .max((total - total_o).abs())
            .max((total_loss(np, pr, cfg.alpha) - total_o).abs());
    }
    Outcome::new(
        worst < 1e-12,
        format!("max abs deviation {worst:.2e} over 100 instances (< 1e-12)"),
    )
}

pub fn analytic_anchors(_: &mut Shared) -> Outcome {
    let lambda = 60.0;
    let w0 = pr_weight(0.0, lambda).unwrap();
    let wl = pr_weight(lambda, lambda).unwrap();
    let mut ok = w0 == 1.0 && (wl - (-1.0f64).exp()).abs() <= 1e-12;
    let card = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut alpha_zero_exact = true;
    let mut singleton_zero = true;
    for i in 0..20 {
        let m = toy_model(50 + i, card);
        let len = rng.random_range(2..=8);
        let s = random_sequence(&mut rng, len, card);
        let cfg = LossConfig {
            alpha: 0.0,
            lambda_days: 10.0,
            max_past_events: 4,
            normalize_by_length: false,
        };
        let b = m.sequence_loss(&s, &cfg).unwrap();
        alpha_zero_exact &= b.total == b.np;
        let one = s.prefix(1);
        let b1 = m
            .sequence_loss(&one, &LossConfig { alpha: 0.5, ..cfg })
            .unwrap();
        singleton_zero &= b1.np == 0.0 && b1.pr == 0.0;
    }
    ok &= alpha_zero_exact && singleton_zero;
    Outcome::new(
        ok,
        format!(
            "ω(0) = {w0}, |ω(λ) − e⁻¹| = {:.1e}, α=0 gives NP exactly: {alpha_zero_exact}, length-1 losses zero: {singleton_zero}",
            (wl - (-1.0f64).exp()).abs()
        ),
    )
}

pub fn causality(_: &mut Shared) -> Outcome {
    let card = 4;
    let m = toy_model(71, card);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut positions = 0;
    for _ in 0..50 {
        let len = rng.random_range(1..=15);
        let s = random_sequence(&mut rng, len, card);
        let full = m.encode_sequence(&s).unwrap();
        for t in 0..len {
            positions += 1;
            if m.encode_sequence(&s.prefix(t + 1)).unwrap()[t] != full[t] {
                mismatches += 1;
            }
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{mismatches} inexact positions out of {positions} over 50 sequences"),
    )
}
