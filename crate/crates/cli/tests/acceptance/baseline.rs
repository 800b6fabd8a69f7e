use nppr::baselines::{hand_features, TopValues};
use nppr::data_model::{EntityHistory, EventSchema, FeatureSpec, RawEvent, RawValue};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Shared;
use crate::Outcome;

fn schema() -> EventSchema {
    EventSchema::new(
        "id",
        "ts",
        vec![
            FeatureSpec::numeric("amount"),
            FeatureSpec::categorical("mcc"),
            FeatureSpec::numeric("balance"),
        ],
    )
    .unwrap()
}

fn history(rng: &mut ChaCha8Rng, len: usize) -> EntityHistory {
    let mut ts = 0;
    let events = (0..len)
        .map(|_| {
            ts += rng.random_range(0..86_400);
            RawEvent {
                entity_id: "h".into(),
                timestamp: ts,
                values: vec![
                    RawValue::Number(rng.random_range(-100.0..1000.0)),
                    RawValue::Text(format!("c{}", rng.random_range(0..5))),
                    RawValue::Number(rng.random_range(0.0..50.0)),
                ],
            }
        })
        .collect();
    EntityHistory::new("h", events).unwrap()
}

/// Filter each group, then sum, count, mean, min, max and population
/// variance per numeric feature; empty groups give zeros.
fn group_by(h: &EntityHistory, top: &[String]) -> Vec<f64> {
    let mut groups: Vec<Option<&str>> = vec![None];
    groups.extend(top.iter().map(|v| Some(v.as_str())));
    let mut out = Vec::new();
    for g in groups {
        let members: Vec<&RawEvent> = h
            .events
            .iter()
            .filter(|e| g.is_none_or(|v| e.values[1] == RawValue::Text(v.into())))
            .collect();
        for col in [0, 2] {
            let xs: Vec<f64> = members
                .iter()
                .map(|e| e.values[col].as_number().unwrap())
                .collect();
            if xs.is_empty() {
                out.extend([0.0; 6]);
                continue;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            out.extend([
                xs.iter().sum(),
                n,
                mean,
                xs.iter().cloned().fold(f64::INFINITY, f64::min),
                xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n,
            ]);
        }
    }
    out
}

pub fn baseline_oracle(_: &mut Shared) -> Outcome {
    let schema = schema();
    let values: Vec<String> = ["c3", "c0", "c4"].iter().map(|s| s.to_string()).collect();
    let top = TopValues {
        top_n: 3,
        values: vec![("mcc".into(), values.clone())],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(1..=30);
        let h = history(&mut rng, len);
        let (got, _) = hand_features(&h, &schema, &top).unwrap();
        let want = group_by(&h, &values);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    let single = history(&mut rng, 1);
    let (f, _) = hand_features(&single, &schema, &top).unwrap();
    // global group: [sum, count, mean, min, max, var] per numeric
    let singleton_ok = f[..12]
        .chunks(6)
        .all(|a| a[0] == a[2] && a[2] == a[3] && a[3] == a[4] && a[1] == 1.0 && a[5] == 0.0);
    Outcome::new(
        worst < 1e-9 && singleton_ok,
        format!("max abs deviation {worst:.1e} on 100 histories (< 1e-9), singleton identities hold: {singleton_ok}"),
    )
}
