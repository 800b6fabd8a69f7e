use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use nppr::baselines::{hand_feature_table, windowed_feature_table, TopValues};
use nppr::data_model::{
    encode_all, fit_normalization, ingest_csv, split_entities, write_events_csv, EventSchema,
    FeatureLayout,
};
use nppr::downstream::{
    accuracy, auc, downsample_genuine, msle, train_head, vdr_curve, write_vdr_csv, HeadConfig,
    MetricsReport, ScoredTransaction, TaskKind,
};
use nppr::embeddings::{
    category_embeddings, entity_embeddings, event_embeddings, nearest_neighbours,
    read_embeddings_binary, write_embeddings_binary, write_embeddings_csv, write_neighbours_csv,
    CategoryEmbedding, EmbeddingRecord, PoolingStrategy,
};
use nppr::model::{finetune, pretrain, Checkpoint, NpprConfig};
use nppr::synth::{event_id, generate, write_event_labels_csv, write_labels_csv};
use nppr::table::FeatureTable;

use crate::config::RunConfig;
use crate::manifest::{FileDigest, Outputs};
use crate::{Command, EmbedFormat, EmbedLevel, FeatureLevel};

pub(crate) struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub name: &'a str,
    pub arguments: &'a [String],
}

impl Context<'_> {
    fn inputs(&self, paths: &[&Path]) -> Result<Vec<FileDigest>> {
        paths.iter().map(|p| FileDigest::of(p)).collect()
    }

    fn finish(&self, out: Outputs, inputs: Vec<FileDigest>) -> Result<()> {
        out.finish(self.name, self.arguments, self.cfg, inputs)
    }
}

pub(crate) fn dispatch(ctx: &Context, command: Command) -> Result<()> {
    let started = Instant::now();
    match command {
        Command::SynthGen { out } => synth_gen(ctx, &out),
        Command::Pretrain {
            events,
            schema,
            out,
        } => run_pretrain(ctx, &events, &schema, &out),
        Command::Finetune { model, events, out } => run_finetune(ctx, &model, &events, &out),
        Command::Embed {
            model,
            events,
            out,
            level,
            pooling,
            feature,
            min_support,
            format,
        } => embed(
            ctx,
            &model,
            &events,
            &out,
            level,
            pooling,
            feature,
            min_support,
            format,
        ),
        Command::Features {
            events,
            schema,
            out,
            level,
            fit_events,
        } => features(ctx, &events, &schema, &out, level, fit_events),
        Command::TrainHead {
            features,
            labels,
            label_column,
            key_column,
            task,
            out,
        } => train(
            ctx,
            &features,
            &labels,
            &label_column,
            &key_column,
            task,
            &out,
        ),
        Command::Evaluate {
            predictions,
            labels,
            label_column,
            key_column,
            task,
            value_column,
            out,
        } => evaluate(
            ctx,
            &predictions,
            &labels,
            &label_column,
            &key_column,
            task,
            value_column.as_deref(),
            &out,
        ),
        Command::Neighbours {
            embeddings,
            query,
            all,
            k,
            min_support,
            out,
        } => neighbours(ctx, &embeddings, &query, all, k, min_support, &out),
    }?;
    log::info!(
        "{} finished in {:.1} s",
        ctx.name,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn synth_gen(ctx: &Context, out: &Path) -> Result<()> {
    let mut out = Outputs::new(out)?;
    let (histories, labels, schema) = generate(&ctx.cfg.synth)?;
    let n_events: usize = histories.iter().map(|h| h.len()).sum();
    log::info!("generated {} entities, {n_events} events", histories.len());
    write_events_csv(&out.file("events.csv"), &schema, &histories)?;
    let p = out.file("schema.toml");
    std::fs::write(&p, schema.to_toml_string())
        .with_context(|| format!("cannot write `{}`", p.display()))?;
    write_labels_csv(&out.file("labels.csv"), &labels)?;
    write_event_labels_csv(&out.file("event_labels.csv"), &labels)?;
    let mut w = csv::Writer::from_path(out.file("category_archetypes.csv"))?;
    w.write_record(["value", "archetype"])?;
    for (v, a) in &labels.category_archetype {
        w.write_record([v.clone(), a.to_string()])?;
    }
    w.flush()?;
    ctx.finish(out, Vec::new())
}

fn save_training(out: &mut Outputs, checkpoint: &Checkpoint, log_csv: String) -> Result<()> {
    checkpoint.save(&out.file("model.json"))?;
    let p = out.file("training_log.csv");
    std::fs::write(&p, log_csv).with_context(|| format!("cannot write `{}`", p.display()))
}

fn run_pretrain(ctx: &Context, events: &Path, schema_path: &Path, out: &Path) -> Result<()> {
    let inputs = ctx.inputs(&[events, schema_path])?;
    let schema = EventSchema::load(schema_path)?;
    let histories = ingest_csv(events, &schema)?;
    let stats = fit_normalization(&histories, &schema)?;
    let layout = FeatureLayout::new(&schema, &stats);
    let data = encode_all(&histories, &stats, &schema)?;
    let mut out = Outputs::new(out)?;
    let trained = pretrain(&data, &layout, &ctx.cfg.encoder, &ctx.cfg.training)?;
    log::info!(
        "objective {:.4} -> {:.4} over {} epochs (best {})",
        trained.log.initial_train_loss,
        trained.log.final_train_loss(),
        trained.log.epochs.len(),
        trained.log.best_epoch
    );
    let checkpoint = Checkpoint {
        schema,
        stats,
        training: ctx.cfg.training.clone(),
        model: trained.model,
        optimizer: Some(trained.optimizer),
    };
    save_training(&mut out, &checkpoint, trained.log.to_csv())?;
    ctx.finish(out, inputs)
}

fn run_finetune(ctx: &Context, model: &Path, events: &Path, out: &Path) -> Result<()> {
    let inputs = ctx.inputs(&[model, events])?;
    let ck = Checkpoint::load(model)?;
    let histories = ingest_csv(events, &ck.schema)?;
    let data = encode_all(&histories, &ck.stats, &ck.schema)?;
    let cfg = NpprConfig {
        seed: ctx.cfg.stream_seed("finetune"),
        ..ctx.cfg.training.clone()
    };
    let mut out = Outputs::new(out)?;
    let trained = finetune(&ck.model, &ck.model.layout, &data, &cfg)?;
    let checkpoint = Checkpoint {
        training: cfg,
        model: trained.model,
        optimizer: Some(trained.optimizer),
        ..ck
    };
    save_training(&mut out, &checkpoint, trained.log.to_csv())?;
    ctx.finish(out, inputs)
}

#[allow(clippy::too_many_arguments)]
fn embed(
    ctx: &Context,
    model: &Path,
    events: &Path,
    out: &Path,
    level: EmbedLevel,
    pooling: PoolingStrategy,
    feature: Option<String>,
    min_support: usize,
    format: EmbedFormat,
) -> Result<()> {
    let inputs = ctx.inputs(&[model, events])?;
    let ck = Checkpoint::load(model)?;
    let histories = ingest_csv(events, &ck.schema)?;
    let data = encode_all(&histories, &ck.stats, &ck.schema)?;
    let mut out = Outputs::new(out)?;
    let records: Vec<EmbeddingRecord> = match level {
        EmbedLevel::Entity => entity_embeddings(&ck.model, &data, pooling)?
            .iter()
            .zip(&data)
            .map(|(v, s)| EmbeddingRecord::new(s.entity_id.clone(), s.len() as u64, v))
            .collect(),
        EmbedLevel::Event => {
            let mut records = Vec::new();
            for (embs, s) in event_embeddings(&ck.model, &data)?.iter().zip(&data) {
                for (t, v) in embs.iter().enumerate() {
                    records.push(EmbeddingRecord::new(event_id(&s.entity_id, t), 1, v));
                }
            }
            records
        }
        EmbedLevel::Category => {
            let feature = match feature {
                Some(f) => f,
                None => ck
                    .schema
                    .categorical_features()
                    .next()
                    .map(|(_, f)| f.name.clone())
                    .ok_or_else(|| anyhow!("the schema has no categorical feature"))?,
            };
            let cats = category_embeddings(
                &ck.model,
                &data,
                &ck.stats.vocabularies,
                &feature,
                min_support,
            )?;
            let mut w = csv::Writer::from_path(out.file("category_support.csv"))?;
            w.write_record(["value", "support", "below_min_support"])?;
            for c in &cats {
                w.write_record([
                    c.value.clone(),
                    c.support.to_string(),
                    u8::from(c.below_min_support).to_string(),
                ])?;
            }
            w.flush()?;
            let flagged = cats.iter().filter(|c| c.below_min_support).count();
            if flagged > 0 {
                log::warn!("{flagged} values of `{feature}` have fewer than {min_support} events");
            }
            cats.iter()
                .map(|c| EmbeddingRecord::new(c.value.clone(), c.support as u64, &c.vector))
                .collect()
        }
    };
    if matches!(format, EmbedFormat::Csv | EmbedFormat::Both) {
        write_embeddings_csv(&out.file("embeddings.csv"), &records)?;
    }
    if matches!(format, EmbedFormat::Binary | EmbedFormat::Both) {
        write_embeddings_binary(&out.file("embeddings.bin"), &records)?;
    }
    log::info!("wrote {} embeddings", records.len());
    ctx.finish(out, inputs)
}

fn features(
    ctx: &Context,
    events: &Path,
    schema_path: &Path,
    out: &Path,
    level: FeatureLevel,
    fit_events: Option<PathBuf>,
) -> Result<()> {
    let mut paths = vec![events, schema_path];
    if let Some(f) = &fit_events {
        paths.push(f);
    }
    let inputs = ctx.inputs(&paths)?;
    let schema = EventSchema::load(schema_path)?;
    let histories = ingest_csv(events, &schema)?;
    let top = match &fit_events {
        Some(f) => TopValues::fit(&ingest_csv(f, &schema)?, &schema, ctx.cfg.features.top_n),
        None => TopValues::fit(&histories, &schema, ctx.cfg.features.top_n),
    };
    let mut out = Outputs::new(out)?;
    let table = match level {
        FeatureLevel::Entity => hand_feature_table(&histories, &schema, &top)?,
        FeatureLevel::Event => {
            windowed_feature_table(&histories, &schema, &top, &ctx.cfg.features.windows_days)?
        }
    };
    table.write_csv(&out.file("features.csv"))?;
    let p = out.file("top_values.json");
    std::fs::write(&p, serde_json::to_string_pretty(&top)? + "\n")
        .with_context(|| format!("cannot write `{}`", p.display()))?;
    log::info!("{} rows, {} columns", table.len(), table.columns.len());
    ctx.finish(out, inputs)
}

/// `key → [columns...]` rows of a CSV file.
fn read_columns(path: &Path, key: &str, columns: &[&str]) -> Result<Vec<(String, Vec<String>)>> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read `{}`", path.display()))?;
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("`{}` has no column `{name}`", path.display()))
    };
    let k = find(key)?;
    let idx = columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.with_context(|| format!("malformed row in `{}`", path.display()))?;
        rows.push((
            rec[k].to_string(),
            idx.iter().map(|&i| rec[i].to_string()).collect(),
        ));
    }
    Ok(rows)
}

fn parse_number(path: &Path, id: &str, column: &str, text: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            anyhow!(
                "`{}`: `{column}` of `{id}` is not a finite number: `{text}`",
                path.display()
            )
        })
}

fn numeric_column(path: &Path, key: &str, column: &str) -> Result<HashMap<String, f64>> {
    let mut map = HashMap::new();
    for (id, v) in read_columns(path, key, &[column])? {
        let x = parse_number(path, &id, column, &v[0])?;
        if map.insert(id.clone(), x).is_some() {
            bail!("`{}`: duplicate key `{id}`", path.display());
        }
    }
    Ok(map)
}

/// Entity part of an `entity#index` row key.
fn entity_of(id: &str) -> &str {
    id.split_once('#').map_or(id, |(e, _)| e)
}

fn train(
    ctx: &Context,
    feature_paths: &[PathBuf],
    labels_path: &Path,
    label_column: &str,
    key_column: &str,
    task: Option<TaskKind>,
    out: &Path,
) -> Result<()> {
    let mut paths: Vec<&Path> = feature_paths.iter().map(PathBuf::as_path).collect();
    paths.push(labels_path);
    let inputs = ctx.inputs(&paths)?;
    let mut table = FeatureTable::read_csv(&feature_paths[0])?;
    for (i, p) in feature_paths.iter().enumerate().skip(1) {
        table = table.join(&FeatureTable::read_csv(p)?, &format!("f{i}_"))?;
    }
    let labels = numeric_column(labels_path, key_column, label_column)?;
    let cfg = HeadConfig {
        task: task.unwrap_or(ctx.cfg.head.task),
        ..ctx.cfg.head.clone()
    };
    let labelled: Vec<usize> = (0..table.len())
        .filter(|&i| labels.contains_key(&table.ids[i]))
        .collect();
    if labelled.len() < table.len() {
        log::warn!(
            "{} feature rows have no label and are skipped",
            table.len() - labelled.len()
        );
    }
    if labelled.is_empty() {
        bail!("no feature row has a label in `{}`", labels_path.display());
    }
    let entities: Vec<String> = labelled
        .iter()
        .map(|&i| entity_of(&table.ids[i]).to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (_, test_entities) = split_entities(
        &entities,
        ctx.cfg.split.test_fraction,
        ctx.cfg.stream_seed("split"),
    )?;
    let test_entities: HashSet<String> = test_entities.into_iter().collect();
    let (test_rows, mut train_rows): (Vec<usize>, Vec<usize>) = labelled
        .iter()
        .partition(|&&i| test_entities.contains(entity_of(&table.ids[i])));
    if cfg.task == TaskKind::Binary && ctx.cfg.split.keep_genuine < 1.0 {
        let flags: Vec<bool> = train_rows
            .iter()
            .map(|&i| labels[&table.ids[i]] == 1.0)
            .collect();
        let kept = downsample_genuine(
            &flags,
            ctx.cfg.split.keep_genuine,
            ctx.cfg.stream_seed("downsample"),
        )?;
        train_rows = kept.into_iter().map(|k| train_rows[k]).collect();
    }
    log::info!(
        "{} training rows, {} test rows",
        train_rows.len(),
        test_rows.len()
    );
    let x: Vec<Vec<f64>> = train_rows.iter().map(|&i| table.rows[i].clone()).collect();
    let y: Vec<f64> = train_rows.iter().map(|&i| labels[&table.ids[i]]).collect();
    let (head, log) = train_head(&x, &y, &cfg, ctx.cfg.stream_seed("head"))?;
    let mut out = Outputs::new(out)?;
    let p = out.file("head.json");
    std::fs::write(&p, serde_json::to_string(&head)? + "\n")
        .with_context(|| format!("cannot write `{}`", p.display()))?;
    let p = out.file("head_log.json");
    std::fs::write(&p, serde_json::to_string_pretty(&log)? + "\n")
        .with_context(|| format!("cannot write `{}`", p.display()))?;

    let xt: Vec<Vec<f64>> = test_rows.iter().map(|&i| table.rows[i].clone()).collect();
    let mut w = csv::Writer::from_path(out.file("predictions.csv"))?;
    w.write_record(["id", "prediction", "score"])?;
    if !xt.is_empty() {
        for (&i, row) in test_rows.iter().zip(&xt) {
            let o = head.predict(row)?;
            let (prediction, score) = match cfg.task {
                TaskKind::Binary => (u8::from(o[0] >= 0.5).to_string(), o[0]),
                TaskKind::Multiclass => {
                    let (k, p) = o
                        .iter()
                        .enumerate()
                        .fold(
                            (0, f64::NEG_INFINITY),
                            |b, (k, &p)| if p > b.1 { (k, p) } else { b },
                        );
                    (k.to_string(), p)
                }
                TaskKind::Regression => (o[0].to_string(), o[0]),
            };
            w.write_record([table.ids[i].clone(), prediction, score.to_string()])?;
        }
    }
    w.flush()?;
    ctx.finish(out, inputs)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    ctx: &Context,
    predictions_path: &Path,
    labels_path: &Path,
    label_column: &str,
    key_column: &str,
    task: Option<TaskKind>,
    value_column: Option<&str>,
    out: &Path,
) -> Result<()> {
    let inputs = ctx.inputs(&[predictions_path, labels_path])?;
    let task = task.unwrap_or(ctx.cfg.head.task);
    let preds = read_columns(predictions_path, "id", &["prediction", "score"])?;
    if preds.is_empty() {
        bail!("`{}` holds no predictions", predictions_path.display());
    }
    let labels = numeric_column(labels_path, key_column, label_column)?;
    let values = match value_column {
        Some(c) => Some(numeric_column(labels_path, key_column, c)?),
        None => None,
    };
    let mut prediction = Vec::with_capacity(preds.len());
    let mut score = Vec::with_capacity(preds.len());
    let mut truth = Vec::with_capacity(preds.len());
    for (id, v) in &preds {
        prediction.push(parse_number(predictions_path, id, "prediction", &v[0])?);
        score.push(parse_number(predictions_path, id, "score", &v[1])?);
        truth.push(*labels.get(id).ok_or_else(|| {
            anyhow!(
                "prediction `{id}` has no label in `{}`",
                labels_path.display()
            )
        })?);
    }
    let mut report = MetricsReport::new(ctx.cfg.fingerprint());
    report.push("n", preds.len() as f64);
    let mut out = Outputs::new(out)?;
    match task {
        TaskKind::Binary => {
            if let Some(bad) = truth.iter().find(|&&t| t != 0.0 && t != 1.0) {
                bail!("`{label_column}` must be 0 or 1 for a binary task, found {bad}");
            }
            let positive: Vec<bool> = truth.iter().map(|&t| t == 1.0).collect();
            report.push("auc", auc(&score, &positive)?);
            let predicted: Vec<bool> = prediction.iter().map(|&p| p == 1.0).collect();
            report.push("accuracy", accuracy(&predicted, &positive)?);
            if let Some(values) = &values {
                let tx: Vec<ScoredTransaction> = preds
                    .iter()
                    .zip(&score)
                    .zip(&positive)
                    .map(|(((id, _), &s), &f)| ScoredTransaction {
                        score: s,
                        fraud: f,
                        value: values[id],
                    })
                    .collect();
                let curve = vdr_curve(&tx, &ctx.cfg.evaluate.fp_ratios)?;
                for p in &curve {
                    report.push(format!("vdr@{}", p.fp_ratio), p.vdr);
                }
                write_vdr_csv(&out.file("vdr_curve.csv"), &curve)?;
            }
        }
        TaskKind::Multiclass => {
            let p: Vec<i64> = prediction.iter().map(|&v| v as i64).collect();
            let t: Vec<i64> = truth.iter().map(|&v| v as i64).collect();
            report.push("accuracy", accuracy(&p, &t)?);
        }
        TaskKind::Regression => {
            let clipped = prediction.iter().filter(|&&p| p < 0.0).count();
            if clipped > 0 {
                log::warn!("{clipped} negative predictions clipped to 0 for MSLE");
            }
            let p: Vec<f64> = prediction.iter().map(|&v| v.max(0.0)).collect();
            report.push("msle", msle(&p, &truth)?);
            let mse = prediction
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / truth.len() as f64;
            report.push("mse", mse);
        }
    }
    report.write(&out.file("metrics.csv"), &out.file("metrics.txt"))?;
    for (n, v) in &report.metrics {
        log::info!("{n} = {v:.6}");
    }
    ctx.finish(out, inputs)
}

/// `id,support,e0..` CSV or the binary format (by `.bin` extension).
fn read_embedding_file(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    if path.extension().is_some_and(|e| e == "bin") {
        return Ok(read_embeddings_binary(path)?);
    }
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read `{}`", path.display()))?;
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("id") || headers.get(1) != Some("support") {
        bail!(
            "`{}` does not start with `id,support` columns",
            path.display()
        );
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let id = rec[0].to_string();
        let support = rec[1]
            .parse::<u64>()
            .map_err(|_| anyhow!("`{}`: bad support for `{id}`", path.display()))?;
        let vector = rec
            .iter()
            .skip(2)
            .map(|v| parse_number(path, &id, "embedding", v))
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddingRecord::new(id, support, &vector));
    }
    Ok(out)
}

fn neighbours(
    ctx: &Context,
    path: &Path,
    queries: &[String],
    all: bool,
    k: usize,
    min_support: usize,
    out: &Path,
) -> Result<()> {
    let inputs = ctx.inputs(&[path])?;
    if !all && queries.is_empty() {
        bail!("give --query or --all");
    }
    let embs: Vec<CategoryEmbedding> = read_embedding_file(path)?
        .into_iter()
        .filter(|r| r.support as usize >= min_support)
        .map(|r| CategoryEmbedding {
            feature: String::new(),
            value: r.id,
            vector: r.vector.iter().map(|&v| f64::from(v)).collect(),
            support: r.support as usize,
            below_min_support: false,
        })
        .collect();
    let queries: Vec<String> = if all {
        embs.iter().map(|e| e.value.clone()).collect()
    } else {
        queries.to_vec()
    };
    let mut reports = Vec::with_capacity(queries.len());
    for q in queries {
        let found = nearest_neighbours(&embs, &q, k).with_context(|| format!("query `{q}`"))?;
        reports.push((q, found));
    }
    let mut out = Outputs::new(out)?;
    write_neighbours_csv(&out.file("neighbours.csv"), &reports)?;
    ctx.finish(out, inputs)
}
