//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed; exits non-zero when any
//! criterion fails.

mod baseline;
mod corpus;
mod metrics;
mod model;
mod pipeline;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

/// Outcome of one criterion: pass/fail plus a measured summary.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn(&mut corpus::Shared) -> Outcome;

fn main() {
    let checks: [(u8, &str, Check); 12] = [
        (1, "gradient correctness", model::gradient_correctness),
        (2, "loss-formula oracles", model::loss_oracles),
        (3, "analytic anchors", model::analytic_anchors),
        (4, "causality", model::causality),
        (5, "training sanity", corpus::training_sanity),
        (6, "downstream signal", corpus::downstream_signal),
        (7, "pooling direction", corpus::pooling_direction),
        (8, "metric oracles", metrics::metric_oracles),
        (9, "baseline oracle", baseline::baseline_oracle),
        (10, "fraud-value direction", corpus::fraud_value_direction),
        (
            11,
            "category-embedding structure",
            corpus::category_structure,
        ),
        (
            12,
            "end-to-end determinism",
            pipeline::end_to_end_determinism,
        ),
    ];
    let filter: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut shared = corpus::Shared::default();
    let mut failed = Vec::new();
    for (id, title, check) in checks {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut shared))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict}  {title}: {} [{:.1} s]",
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
        if !outcome.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
