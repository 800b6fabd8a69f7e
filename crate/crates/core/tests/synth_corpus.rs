use nppr::data_model::{ingest_csv, write_events_csv, RawValue};
use nppr::synth::{
    archetype_oracle_accuracy, generate, home_archetype, write_event_labels_csv, write_labels_csv,
    SynthConfig, START_TIMESTAMP,
};

fn category_index(v: &RawValue) -> usize {
    v.category_key().unwrap().parse::<usize>().unwrap() - 4000
}

#[test]
fn fraud_count_within_three_sigma_of_binomial() {
    let cfg = SynthConfig {
        n_entities: 8_000,
        fraud_rate: 0.001,
        mean_events_per_month: 10.0,
        churn_fraction: 0.0,
        seed: 11,
        ..Default::default()
    };
    let (histories, labels, _) = generate(&cfg).unwrap();
    let fraud: usize = labels
        .events
        .iter()
        .map(|e| e.iter().filter(|l| l.fraud).count())
        .sum();
    let total: usize = histories.iter().map(|h| h.len()).sum();
    let genuine = (total - fraud) as f64;
    assert!(genuine > 9e5, "corpus too small: {genuine}");
    let p = cfg.fraud_rate;
    let (mean, sd) = (genuine * p, (genuine * p * (1.0 - p)).sqrt());
    assert!(
        (fraud as f64 - mean).abs() <= 3.0 * sd,
        "fraud {fraud}, expected {mean} ± {sd}"
    );
}

#[test]
fn expenditure_is_exact_sum_of_label_window() {
    let (histories, labels, _) = generate(&SynthConfig {
        n_entities: 300,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let end = START_TIMESTAMP + 12 * 30 * 86_400;
    for ((h, l), window) in histories
        .iter()
        .zip(&labels.entities)
        .zip(&labels.label_window_amounts)
    {
        let mut s = 0.0;
        for a in window {
            assert!(*a > 0.0);
            s += a;
        }
        assert_eq!(s, l.expenditure);
        assert!(l.expenditure >= 0.0);
        assert!(h
            .events
            .iter()
            .all(|e| e.timestamp >= START_TIMESTAMP && e.timestamp < end));
        assert!(h
            .events
            .windows(2)
            .all(|w| w[0].timestamp <= w[1].timestamp));
    }
}

#[test]
fn fraud_events_are_off_archetype_inflated_bursts() {
    let cfg = SynthConfig {
        n_entities: 400,
        fraud_rate: 0.02,
        seed: 5,
        ..Default::default()
    };
    let (histories, labels, _) = generate(&cfg).unwrap();
    let mut n_fraud = 0;
    for ((h, ev), ent) in histories.iter().zip(&labels.events).zip(&labels.entities) {
        assert_eq!(h.len(), ev.len());
        let fraud_ts: Vec<i64> = h
            .events
            .iter()
            .zip(ev)
            .filter(|(_, l)| l.fraud)
            .map(|(e, _)| e.timestamp)
            .collect();
        // events of one burst lie within hours; a lone event is only allowed
        // when the entity drew a single fraud event
        if fraud_ts.len() >= 2 {
            for (i, &t) in fraud_ts.iter().enumerate() {
                let near = fraud_ts
                    .iter()
                    .enumerate()
                    .any(|(j, &u)| j != i && (t - u).abs() < 2 * 86_400);
                assert!(near, "isolated fraud event in {}", h.entity_id);
            }
        }
        for (e, l) in h.events.iter().zip(ev) {
            assert_eq!(l.value, e.values[0].as_number().unwrap());
            if l.fraud {
                n_fraud += 1;
                let c = category_index(&e.values[1]);
                assert_ne!(home_archetype(c, 32, 4), ent.archetype);
            }
        }
    }
    assert!(n_fraud > 100);

    // inflated amounts: fraud median far above genuine median per archetype
    for a in 0..4 {
        let mut g = vec![];
        let mut f = vec![];
        for (ev, ent) in labels.events.iter().zip(&labels.entities) {
            if ent.archetype == a {
                for l in ev {
                    if l.fraud {
                        f.push(l.value)
                    } else {
                        g.push(l.value)
                    }
                }
            }
        }
        g.sort_by(f64::total_cmp);
        f.sort_by(f64::total_cmp);
        if f.len() > 10 {
            assert!(f[f.len() / 2] > 3.0 * g[g.len() / 2]);
        }
    }
}

#[test]
fn zero_fraud_rate_gives_no_fraud() {
    let (_, labels, _) = generate(&SynthConfig {
        n_entities: 100,
        fraud_rate: 0.0,
        ..Default::default()
    })
    .unwrap();
    assert!(labels.events.iter().flatten().all(|l| !l.fraud));
}

#[test]
fn archetype_signal_is_recoverable() {
    let (histories, labels, schema) = generate(&SynthConfig::default()).unwrap();
    let acc = archetype_oracle_accuracy(&histories, &labels, &schema, 0.2, 0).unwrap();
    assert!(acc >= 0.95, "naive Bayes accuracy {acc}");
}

#[test]
fn churned_entities_fade_then_fall_silent() {
    let cfg = SynthConfig {
        n_entities: 600,
        fraud_rate: 0.0,
        seed: 9,
        ..Default::default()
    };
    let (histories, labels, _) = generate(&cfg).unwrap();
    let day = |d: i64| START_TIMESTAMP + d * 86_400;
    // windows: full rate, linear fade, silence
    let windows = [(0, 120), (120, 240), (240, 360)];
    let mut churn = [0usize; 3];
    let mut stay = [0usize; 3];
    let (mut churn_n, mut stay_n) = (0usize, 0usize);
    for (h, l) in histories.iter().zip(&labels.entities) {
        let counts = windows.map(|(a, b)| {
            h.events
                .iter()
                .filter(|e| e.timestamp >= day(a) && e.timestamp < day(b))
                .count()
        });
        let (acc, n) = if l.churned {
            (&mut churn, &mut churn_n)
        } else {
            (&mut stay, &mut stay_n)
        };
        *n += 1;
        acc.iter_mut().zip(counts).for_each(|(a, c)| *a += c);
        if l.churned {
            assert_eq!(counts[2], 0, "churned entity active in the final third");
            assert_eq!(l.expenditure, 0.0);
        }
    }
    assert!(churn_n > 100 && stay_n > 100);
    let ratio = |w: usize| (churn[w] as f64 / churn_n as f64) / (stay[w] as f64 / stay_n as f64);
    // same rate law before the fade; linear fade keeps half the events on average
    assert!((ratio(0) - 1.0).abs() < 0.1, "{}", ratio(0));
    assert!((ratio(1) - 0.5).abs() < 0.1, "{}", ratio(1));
}

#[test]
fn csv_output_is_byte_identical_and_round_trips() {
    let cfg = SynthConfig {
        n_entities: 50,
        seed: 21,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut digests = vec![];
    for run in 0..2 {
        let (histories, labels, schema) = generate(&cfg).unwrap();
        let ev = dir.path().join(format!("events{run}.csv"));
        let lab = dir.path().join(format!("labels{run}.csv"));
        let evl = dir.path().join(format!("event_labels{run}.csv"));
        write_events_csv(&ev, &schema, &histories).unwrap();
        write_labels_csv(&lab, &labels).unwrap();
        write_event_labels_csv(&evl, &labels).unwrap();
        digests.push(
            [&ev, &lab, &evl]
                .iter()
                .map(|p| std::fs::read(p).unwrap())
                .collect::<Vec<_>>(),
        );
        let back = ingest_csv(&ev, &schema).unwrap();
        assert_eq!(back, histories);
    }
    assert_eq!(digests[0], digests[1]);
}
