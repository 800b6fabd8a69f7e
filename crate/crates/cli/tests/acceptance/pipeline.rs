use std::path::Path;

use crate::corpus::Shared;
use crate::Outcome;

/// Reduced sizes so the whole pipeline runs in seconds.
const CONFIG: &str = "\
seed = 12
[synth]
n_entities = 150
[training]
max_epochs = 2
[head]
max_epochs = 8
[split]
keep_genuine = 0.2
";

const STEPS: &[&[&str]] = &[
    &["synth-gen", "--out", "@data"],
    &[
        "pretrain",
        "--events",
        "@data/events.csv",
        "--schema",
        "@data/schema.toml",
        "--out",
        "@model",
    ],
    &[
        "embed",
        "--model",
        "@model/model.json",
        "--events",
        "@data/events.csv",
        "--out",
        "@entity_emb",
    ],
    &[
        "embed",
        "--model",
        "@model/model.json",
        "--events",
        "@data/events.csv",
        "--out",
        "@event_emb",
        "--level",
        "event",
    ],
    &[
        "features",
        "--events",
        "@data/events.csv",
        "--schema",
        "@data/schema.toml",
        "--out",
        "@entity_feat",
    ],
    &[
        "features",
        "--events",
        "@data/events.csv",
        "--schema",
        "@data/schema.toml",
        "--out",
        "@event_feat",
        "--level",
        "event",
    ],
    &[
        "train-head",
        "--features",
        "@entity_feat/features.csv",
        "@entity_emb/embeddings.csv",
        "--labels",
        "@data/labels.csv",
        "--label-column",
        "churned",
        "--out",
        "@churn_head",
    ],
    &[
        "evaluate",
        "--predictions",
        "@churn_head/predictions.csv",
        "--labels",
        "@data/labels.csv",
        "--label-column",
        "churned",
        "--out",
        "@churn_eval",
    ],
    &[
        "train-head",
        "--features",
        "@event_feat/features.csv",
        "@event_emb/embeddings.csv",
        "--labels",
        "@data/event_labels.csv",
        "--key-column",
        "id",
        "--label-column",
        "fraud",
        "--out",
        "@fraud_head",
    ],
    &[
        "evaluate",
        "--predictions",
        "@fraud_head/predictions.csv",
        "--labels",
        "@data/event_labels.csv",
        "--key-column",
        "id",
        "--label-column",
        "fraud",
        "--value-column",
        "value",
        "--out",
        "@fraud_eval",
    ],
];

const METRIC_FILES: &[&str] = &[
    "churn_eval/metrics.csv",
    "churn_eval/metrics.txt",
    "fraud_eval/metrics.csv",
    "fraud_eval/metrics.txt",
    "fraud_eval/vdr_curve.csv",
];

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, CONFIG).map_err(|e| e.to_string())?;
    for step in STEPS {
        let mut argv = vec![
            "nppr".to_string(),
            "--config".into(),
            cfg.display().to_string(),
        ];
        argv.extend(step.iter().map(|a| match a.strip_prefix('@') {
            Some(rel) => dir.join(rel).display().to_string(),
            None => a.to_string(),
        }));
        let code = nppr_cli::run(&argv);
        if code != 0 {
            return Err(format!("`{}` exited with {code}", step.join(" ")));
        }
    }
    Ok(())
}

pub fn end_to_end_determinism(_: &mut Shared) -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        if let Err(e) = run_pipeline(d.path()) {
            return Outcome::new(false, e);
        }
    }
    let differing: Vec<&str> = METRIC_FILES
        .iter()
        .copied()
        .filter(|f| {
            let x = std::fs::read(a.path().join(f)).ok();
            x.is_none() || x != std::fs::read(b.path().join(f)).ok()
        })
        .collect();
    Outcome::new(
        differing.is_empty(),
        format!(
            "{} pipeline steps run twice; {} metric files compared, differing: {differing:?}",
            STEPS.len(),
            METRIC_FILES.len()
        ),
    )
}
