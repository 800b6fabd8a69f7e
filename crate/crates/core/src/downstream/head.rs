use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{split_entities, MeanStd};
use crate::nn::{softmax, Activation, AdamConfig, AdamState, Mlp, Parameterized};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Regression,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Self::Binary),
            "multiclass" => Ok(Self::Multiclass),
            "regression" => Ok(Self::Regression),
            other => Err(Error::invalid(format!(
                "unknown task `{other}` (binary, multiclass or regression)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// L2 coefficient applied to weight matrices (not biases).
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub task: TaskKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Share of rows held out for early stopping; 0 trains on every row
    /// for `max_epochs`.
    pub validation_fraction: f64,
}

impl HeadConfig {
    /// Three hidden layers of 512.
    pub fn full(task: TaskKind) -> Self {
        Self {
            hidden: vec![512, 512, 512],
            ..Self::desk(task)
        }
    }

    /// Three hidden layers of 64, sized for desk-scale data.
    pub fn desk(task: TaskKind) -> Self {
        Self {
            hidden: vec![64, 64, 64],
            dropout: 0.1,
            weight_decay: 1e-4,
            learning_rate: 1e-3,
            task,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.weight_decay >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::invalid(
                "weight_decay must be non-negative and learning_rate positive",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::desk(TaskKind::Binary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    pub task: TaskKind,
    pub mlp: Mlp,
    pub input_stats: Vec<MeanStd>,
    /// Target standardization (regression only; identity otherwise).
    pub target_stats: MeanStd,
}

impl HeadModel {
    pub fn n_inputs(&self) -> usize {
        self.input_stats.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_stats)
            .map(|(v, s)| s.z(*v))
            .collect()
    }

    fn check_row(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::shape(format!(
                "row of width {} for a head over {} inputs",
                x.len(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    /// Positive-class probability (binary), class probabilities
    /// (multiclass) or predicted value (regression).
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_row(x)?;
        let out = self.mlp.forward(&self.standardize(x)).output().to_vec();
        Ok(match self.task {
            TaskKind::Binary => vec![crate::nn::sigmoid(out[0])],
            TaskKind::Multiclass => softmax(&out),
            TaskKind::Regression => vec![out[0] * self.target_stats.std + self.target_stats.mean],
        })
    }

    pub fn predict_scores(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r).map(|p| p[0])).collect()
    }

    /// Most probable class per row (ties to the lower index).
    pub fn predict_classes(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        rows.iter()
            .map(|r| {
                let p = self.predict(r)?;
                Ok(match self.task {
                    TaskKind::Binary => usize::from(p[0] >= 0.5),
                    _ => {
                        p.iter()
                            .enumerate()
                            .fold(
                                (0, f64::NEG_INFINITY),
                                |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                            )
                            .0
                    }
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLog {
    pub epochs: Vec<HeadEpoch>,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_validation: usize,
}

/// Loss of one standardized row and its gradient with respect to the
/// output layer.
fn row_loss(task: TaskKind, out: &[f64], y: f64, grad: Option<&mut [f64]>) -> f64 {
    match task {
        TaskKind::Binary => {
            let z = out[0];
            let p = crate::nn::sigmoid(z);
            if let Some(g) = grad {
                g[0] = p - y;
            }
            // softplus(z) − y z, written stably
            z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
        }
        TaskKind::Multiclass => {
            let p = softmax(out);
            let k = y as usize;
            if let Some(g) = grad {
                g.copy_from_slice(&p);
                g[k] -= 1.0;
            }
            -(p[k].max(1e-300)).ln()
        }
        TaskKind::Regression => {
            let d = out[0] - y;
            if let Some(g) = grad {
                g[0] = 2.0 * d;
            }
            d * d
        }
    }
}

fn mean_loss(head: &HeadModel, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let s: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &t)| row_loss(head.task, head.mlp.forward(r).output(), t, None))
        .sum();
    s / x.len().max(1) as f64
}

fn check_labels(labels: &[f64], task: TaskKind) -> Result<usize> {
    if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("label {i} is not finite")));
    }
    match task {
        TaskKind::Regression => Ok(1),
        TaskKind::Binary | TaskKind::Multiclass => {
            if let Some(v) = labels.iter().find(|v| **v < 0.0 || v.fract() != 0.0) {
                return Err(Error::invalid(format!(
                    "class label {v} is not a non-negative integer"
                )));
            }
            let n_classes = labels.iter().fold(0.0f64, |m, &v| m.max(v)) as usize + 1;
            let mut present = vec![false; n_classes];
            labels.iter().for_each(|&v| present[v as usize] = true);
            if present.iter().filter(|&&p| p).count() < 2 {
                return Err(Error::invalid("labels contain a single class"));
            }
            if task == TaskKind::Binary {
                if n_classes != 2 {
                    return Err(Error::invalid("binary labels must be 0 or 1"));
                }
                Ok(1)
            } else {
                Ok(n_classes)
            }
        }
    }
}

/// Trains an MLP head with mini-batch Adam on standardized inputs.
/// Deterministic given `seed`.
pub fn train_head(
    features: &[Vec<f64>],
    labels: &[f64],
    cfg: &HeadConfig,
    seed: u64,
) -> Result<(HeadModel, HeadLog)> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::invalid("no training rows"));
    }
    let dim = features[0].len();
    for (i, r) in features.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::shape(format!(
                "row {i} has width {} instead of {dim}",
                r.len()
            )));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature {j} of row {i} is not finite"
            )));
        }
    }
    let n_out = check_labels(labels, cfg.task)?;

    let indices: Vec<usize> = (0..features.len()).collect();
    let (train_idx, val_idx) = if cfg.validation_fraction > 0.0 && features.len() >= 10 {
        split_entities(&indices, cfg.validation_fraction, seed)?
    } else {
        (indices, Vec::new())
    };
    if cfg.task == TaskKind::Binary
        && train_idx
            .iter()
            .map(|&i| labels[i])
            .all(|v| v == labels[train_idx[0]])
    {
        return Err(Error::invalid("training split contains a single class"));
    }

    let input_stats: Vec<MeanStd> = (0..dim)
        .map(|j| {
            MeanStd::fit(
                &train_idx
                    .iter()
                    .map(|&i| features[i][j])
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let target_stats = if cfg.task == TaskKind::Regression {
        MeanStd::fit(&train_idx.iter().map(|&i| labels[i]).collect::<Vec<_>>())
    } else {
        MeanStd {
            mean: 0.0,
            std: 1.0,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![dim];
    dims.extend(&cfg.hidden);
    dims.push(n_out);
    let mut head = HeadModel {
        task: cfg.task,
        mlp: Mlp::init(&mut rng, &dims, Activation::Relu, Activation::Linear),
        input_stats,
        target_stats,
    };
    let prep = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        idx.iter()
            .map(|&i| {
                (
                    head.standardize(&features[i]),
                    head.target_stats.z(labels[i]),
                )
            })
            .unzip()
    };
    let (xt, yt) = prep(&train_idx);
    let (xv, yv) = prep(&val_idx);

    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &head.mlp,
    );
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..xt.len()).collect();
    let mut log = HeadLog {
        epochs: Vec::new(),
        best_epoch: 0,
        n_train: xt.len(),
        n_validation: xv.len(),
    };
    let has_val = !xv.is_empty();
    let mut best = (
        if has_val {
            mean_loss(&head, &xv, &yv)
        } else {
            f64::INFINITY
        },
        head.mlp.clone(),
    );
    let mut since_best = 0;
    let mut d_out = vec![0.0; n_out];
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = head.mlp.zeros_like();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let trace = head.mlp.forward_dropout(&xt[i], &mut rng, cfg.dropout);
                sum += row_loss(cfg.task, trace.output(), yt[i], Some(&mut d_out));
                d_out.iter_mut().for_each(|g| *g *= scale);
                let d0 = head.mlp.backward_to_preact(&trace, &d_out, &mut grads);
                head.mlp.layers[0].backward(&xt[i], &d0, &mut grads.layers[0], None);
            }
            if cfg.weight_decay > 0.0 {
                for (g, l) in grads.layers.iter_mut().zip(&head.mlp.layers) {
                    g.weight
                        .iter_mut()
                        .zip(&l.weight)
                        .for_each(|(g, w)| *g += cfg.weight_decay * w);
                }
            }
            adam.step(&mut head.mlp, &grads)?;
        }
        let train_loss = sum / xt.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: train_loss,
            });
        }
        let validation_loss = has_val.then(|| mean_loss(&head, &xv, &yv));
        log.epochs.push(HeadEpoch {
            epoch,
            train_loss,
            validation_loss,
        });
        match validation_loss {
            Some(v) if v < best.0 => {
                best = (v, head.mlp.clone());
                log.best_epoch = epoch;
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
            None => log.best_epoch = epoch,
        }
    }
    if has_val {
        head.mlp = best.1;
    }
    debug_assert_eq!(
        head.mlp.n_params(),
        adam.first_moment.iter().map(Vec::len).sum::<usize>()
    );
    Ok((head, log))
}
