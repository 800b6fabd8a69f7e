use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EncoderConfig, NpprConfig};
use super::loss::{sequence_objective, LossBreakdown, LossConfig};
use super::network::NpprModel;
use crate::data_model::{split_entities, EncodedEvent, EncodedSequence, FeatureLayout};
use crate::nn::{AdamConfig, AdamState, Parameterized};
use crate::{Error, Result};

/// Sequences padded to a common length with a validity mask.
///
/// Masks are prefixes: row `i` is valid on positions `0..valid_len(i)`.
#[derive(Debug, Clone)]
pub struct PaddedBatch {
    pub rows: Vec<EncodedSequence>,
    pub mask: Vec<Vec<bool>>,
}

impl PaddedBatch {
    /// Pads every sequence with `filler` events stamped at the row's last
    /// timestamp.
    pub fn new(sequences: &[&EncodedSequence], filler: &EncodedEvent) -> Self {
        let max_len = sequences.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut rows = Vec::with_capacity(sequences.len());
        let mut mask = Vec::with_capacity(sequences.len());
        for s in sequences {
            let mut row = (*s).clone();
            let last_ts = row.timestamps.last().copied().unwrap_or(0);
            let pad = max_len - row.len();
            row.events.extend(std::iter::repeat_n(filler.clone(), pad));
            row.timestamps.extend(std::iter::repeat_n(last_ts, pad));
            let mut m = vec![true; s.len()];
            m.resize(max_len, false);
            rows.push(row);
            mask.push(m);
        }
        Self { rows, mask }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn valid_len(&self, row: usize) -> Result<usize> {
        let m = &self.mask[row];
        let n = m.iter().take_while(|&&v| v).count();
        if m[n..].iter().any(|&v| v) {
            return Err(Error::invalid(format!("mask of row {row} is not a prefix")));
        }
        if n == 0 {
            return Err(Error::invalid(format!("row {row} has no valid events")));
        }
        Ok(n)
    }

    /// Mean objective over rows and its gradient. Per-row gradients are
    /// reduced in row order, so the result does not depend on threading.
    pub fn loss_and_grad(
        &self,
        model: &NpprModel,
        cfg: &LossConfig,
    ) -> Result<(f64, Vec<LossBreakdown>, NpprModel)> {
        let b = self.len();
        if b == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let lens = (0..b)
            .map(|i| self.valid_len(i))
            .collect::<Result<Vec<_>>>()?;
        for row in &self.rows {
            model.check_sequence(row)?;
        }
        let scale = 1.0 / b as f64;
        let per_row: Vec<Result<(LossBreakdown, NpprModel)>> = self
            .rows
            .par_iter()
            .zip(lens.par_iter())
            .map(|(row, &len)| {
                let mut g = model.zeros_like();
                let br = sequence_objective(model, row, len, cfg, Some((&mut g, scale)))?;
                Ok((br, g))
            })
            .collect();
        let mut grads = model.zeros_like();
        let mut breakdowns = Vec::with_capacity(b);
        let mut mean = 0.0;
        for r in per_row {
            let (br, g) = r?;
            mean += br.objective * scale;
            grads.add_scaled(&g, 1.0);
            breakdowns.push(br);
        }
        Ok((mean, breakdowns, grads))
    }
}

/// Per-sequence gradient of the objective (length-normalized if configured).
pub fn sequence_gradient(
    model: &NpprModel,
    seq: &EncodedSequence,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, NpprModel)> {
    model.sequence_loss_and_grad(seq, cfg)
}

/// Result of a training run. The optimizer state is the one reached at the
/// last epoch, even when earlier parameters were restored.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: NpprModel,
    pub optimizer: AdamState,
    pub log: TrainingLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch objective over the epoch.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean objective on the training sequences before any update.
    pub initial_train_loss: f64,
    pub initial_validation_loss: Option<f64>,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (0 = initial parameters).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_validation: usize,
}

impl TrainingLog {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_train_loss, |e| e.train_loss)
    }

    /// CSV with one row per epoch, epoch 0 being the pre-training evaluation.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,validation_loss\n");
        out.push_str(&format!(
            "0,{:.9},{}\n",
            self.initial_train_loss,
            fmt(self.initial_validation_loss)
        ));
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.9},{}\n",
                e.epoch,
                e.train_loss,
                fmt(e.validation_loss)
            ));
        }
        out
    }
}

fn mean_objective(model: &NpprModel, data: &[EncodedSequence], cfg: &LossConfig) -> Result<f64> {
    let losses = data
        .par_iter()
        .map(|s| sequence_objective(model, s, s.len(), cfg, None).map(|b| b.objective))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn check_dataset(model: &NpprModel, data: &[EncodedSequence]) -> Result<()> {
    data.iter().try_for_each(|s| model.check_sequence(s))
}

fn filler_event(layout: &FeatureLayout) -> EncodedEvent {
    EncodedEvent {
        numeric: vec![0.0; layout.n_numeric()],
        categories: vec![0; layout.n_categorical()],
    }
}

fn fit(
    mut model: NpprModel,
    train: &[EncodedSequence],
    validation: &[EncodedSequence],
    cfg: &NpprConfig,
) -> Result<Trained> {
    let loss_cfg = LossConfig::from(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut adam = AdamState::new(
            AdamConfig {
                learning_rate: cfg.learning_rate,
                ..AdamConfig::default()
            },
            &model,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let filler = filler_event(&model.layout);
        let has_val = !validation.is_empty();
        let mut log = TrainingLog {
            initial_train_loss: mean_objective(&model, train, &loss_cfg)?,
            initial_validation_loss: if has_val {
                Some(mean_objective(&model, validation, &loss_cfg)?)
            } else {
                None
            },
            epochs: Vec::new(),
            best_epoch: 0,
            stopped_early: false,
            n_train: train.len(),
            n_validation: validation.len(),
        };
        let mut best = (
            log.initial_validation_loss.unwrap_or(f64::INFINITY),
            model.clone(),
        );
        let mut since_best = 0;
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 1..=cfg.max_epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut n_batches = 0;
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let seqs: Vec<&EncodedSequence> = chunk.iter().map(|&i| &train[i]).collect();
                let batch = PaddedBatch::new(&seqs, &filler);
                let (loss, _, grads) = batch.loss_and_grad(&model, &loss_cfg)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: bi,
                        loss,
                    });
                }
                adam.step(&mut model, &grads)?;
                sum += loss;
                n_batches += 1;
            }
            let train_loss = sum / n_batches.max(1) as f64;
            let validation_loss = if has_val {
                Some(mean_objective(&model, validation, &loss_cfg)?)
            } else {
                None
            };
            log::info!("epoch {epoch}: train {train_loss:.6} validation {validation_loss:?}");
            log.epochs.push(EpochLog {
                epoch,
                train_loss,
                validation_loss,
            });
            if let Some(v) = validation_loss {
                if v < best.0 {
                    best = (v, model.clone());
                    log.best_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        log.stopped_early = true;
                        break;
                    }
                }
            } else {
                log.best_epoch = epoch;
            }
        }
        if has_val {
            model = best.1;
        }
        Ok(Trained {
            model,
            optimizer: adam,
            log,
        })
    })
}

/// Trains a freshly initialised model. A `validation_fraction` share of the
/// entities is held out for early stopping and the best-validation
/// parameters are returned.
pub fn pretrain(
    dataset: &[EncodedSequence],
    layout: &FeatureLayout,
    encoder: &EncoderConfig,
    cfg: &NpprConfig,
) -> Result<Trained> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("pretraining dataset is empty"));
    }
    let model = NpprModel::new(layout.clone(), encoder.clone(), cfg.seed)?;
    check_dataset(&model, dataset)?;
    let (train, validation) = holdout(dataset, cfg)?;
    fit(model, &train, &validation, cfg)
}

/// Continues training `model` on `dataset` with the same loop as
/// [`pretrain`]. `layout` must equal the model's layout.
pub fn finetune(
    model: &NpprModel,
    layout: &FeatureLayout,
    dataset: &[EncodedSequence],
    cfg: &NpprConfig,
) -> Result<Trained> {
    cfg.validate()?;
    if &model.layout != layout {
        return Err(Error::Schema(format!(
            "dataset layout (categorical cardinalities {:?}) does not match the model ({:?})",
            layout.cardinalities, model.layout.cardinalities
        )));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("finetuning dataset is empty"));
    }
    check_dataset(model, dataset)?;
    let (train, validation) = holdout(dataset, cfg)?;
    fit(model.clone(), &train, &validation, cfg)
}

fn holdout(
    dataset: &[EncodedSequence],
    cfg: &NpprConfig,
) -> Result<(Vec<EncodedSequence>, Vec<EncodedSequence>)> {
    if cfg.validation_fraction > 0.0 && dataset.len() >= 2 {
        split_entities(dataset, cfg.validation_fraction, cfg.seed)
    } else {
        Ok((dataset.to_vec(), Vec::new()))
    }
}
