use serde::{Deserialize, Serialize};

use super::config::NpprConfig;
use super::network::NpprModel;
use crate::data_model::{
    EncodedEvent, EncodedSequence, FeatureLayout, SliceTarget, SECONDS_PER_DAY,
};
use crate::nn::{cross_entropy, cross_entropy_grad, mse, softmax, softmax_in_place, Parameterized};
use crate::{Error, Result};

/// The subset of [`NpprConfig`] that defines the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub lambda_days: f64,
    pub max_past_events: usize,
    pub normalize_by_length: bool,
}

impl From<&NpprConfig> for LossConfig {
    fn from(c: &NpprConfig) -> Self {
        Self {
            alpha: c.alpha,
            lambda_days: c.lambda_days,
            max_past_events: c.max_past_events,
            normalize_by_length: c.normalize_by_length,
        }
    }
}

/// Decoded event: one scalar per numeric feature and a probability vector
/// per categorical feature, each in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct EventPrediction {
    pub numeric: Vec<f64>,
    pub categorical: Vec<Vec<f64>>,
}

impl EventPrediction {
    pub fn from_output(layout: &FeatureLayout, raw: &[f64]) -> Self {
        let mut numeric = vec![0.0; layout.n_numeric()];
        let mut categorical = vec![Vec::new(); layout.n_categorical()];
        for s in &layout.slices {
            match s.target {
                SliceTarget::Numeric(i) => numeric[i] = raw[s.offset],
                SliceTarget::Categorical(i, c) => {
                    categorical[i] = softmax(&raw[s.offset..s.offset + c])
                }
            }
        }
        Self {
            numeric,
            categorical,
        }
    }
}

/// Sum of one loss over its terms, split by feature in slice order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermLoss {
    pub value: f64,
    pub per_feature: Vec<f64>,
    pub terms: usize,
}

impl TermLoss {
    fn empty(layout: &FeatureLayout) -> Self {
        Self {
            value: 0.0,
            per_feature: vec![0.0; layout.slices.len()],
            terms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub np: f64,
    pub pr: f64,
    /// `(1 − α)·np + α·pr`.
    pub total: f64,
    /// `total`, divided by the sequence length when length normalization is on.
    pub objective: f64,
    pub np_per_feature: Vec<f64>,
    pub pr_per_feature: Vec<f64>,
    pub np_terms: usize,
    pub pr_terms: usize,
}

impl LossBreakdown {
    /// False for length-1 sequences, which have no next event to predict.
    pub fn has_np_targets(&self) -> bool {
        self.np_terms > 0
    }
}

/// PR weight `exp(−δt/λ)`.
pub fn pr_weight(delta_days: f64, lambda_days: f64) -> Result<f64> {
    if !(lambda_days > 0.0) {
        return Err(Error::invalid(format!(
            "lambda must be positive, got {lambda_days}"
        )));
    }
    if delta_days < 0.0 || delta_days.is_nan() {
        return Err(Error::invalid(format!(
            "negative time difference {delta_days} violates time ordering"
        )));
    }
    Ok((-delta_days / lambda_days).exp())
}

pub fn total_loss(np: f64, pr: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * np + alpha * pr
}

/// Reconstruction loss of `target` from a raw decoder output: squared error
/// on numeric slots, cross-entropy on softmaxed categorical slices.
/// When `grad` is given, adds `weight · ∂loss/∂output` into it.
fn score_event(
    layout: &FeatureLayout,
    output: &[f64],
    target: &EncodedEvent,
    per_feature: &mut [f64],
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    let mut probs = Vec::new();
    for (fi, s) in layout.slices.iter().enumerate() {
        let loss = match s.target {
            SliceTarget::Numeric(i) => {
                let pred = output[s.offset];
                if let Some((g, w)) = grad.as_mut() {
                    g[s.offset] += *w * 2.0 * (pred - target.numeric[i]);
                }
                mse(pred, target.numeric[i])
            }
            SliceTarget::Categorical(i, c) => {
                probs.clear();
                probs.extend_from_slice(&output[s.offset..s.offset + c]);
                softmax_in_place(&mut probs);
                let y = target.categories[i];
                if let Some((g, w)) = grad.as_mut() {
                    cross_entropy_grad(&probs, y, *w, &mut g[s.offset..s.offset + c]);
                }
                cross_entropy(&probs, y).expect("category index checked against layout")
            }
        };
        per_feature[fi] += loss;
        total += loss;
    }
    total
}

fn delta_days(seq: &EncodedSequence, later: usize, earlier: usize) -> f64 {
    (seq.timestamps[later] - seq.timestamps[earlier]) as f64 / SECONDS_PER_DAY
}

fn check_embeddings(
    model: &NpprModel,
    embeddings: &[Vec<f64>],
    seq: &EncodedSequence,
) -> Result<()> {
    model.check_sequence(seq)?;
    if embeddings.len() != seq.len() || embeddings.iter().any(|e| e.len() != model.embedding_dim())
    {
        return Err(Error::shape(
            "embeddings do not match the sequence or embedding width",
        ));
    }
    Ok(())
}

/// Next-event loss: `D_NP(e_t)` scored against event `t + 1` for every
/// `t < T − 1`.
pub fn np_loss(
    model: &NpprModel,
    embeddings: &[Vec<f64>],
    seq: &EncodedSequence,
) -> Result<TermLoss> {
    check_embeddings(model, embeddings, seq)?;
    let mut out = TermLoss::empty(&model.layout);
    for t in 0..seq.len().saturating_sub(1) {
        let raw = model.decode_next_raw(&embeddings[t]);
        out.value += score_event(
            &model.layout,
            &raw,
            &seq.events[t + 1],
            &mut out.per_feature,
            None,
        );
        out.terms += 1;
    }
    Ok(out)
}

/// Past-reconstruction loss: for every `t` and `k = 1..=min(K, t)`,
/// `D_PR(e_t, δt)` scored against event `t − k` with weight `exp(−δt/λ)`.
pub fn pr_loss(
    model: &NpprModel,
    embeddings: &[Vec<f64>],
    seq: &EncodedSequence,
    cfg: &LossConfig,
) -> Result<TermLoss> {
    check_embeddings(model, embeddings, seq)?;
    let mut out = TermLoss::empty(&model.layout);
    let mut scratch = vec![0.0; model.layout.slices.len()];
    for t in 1..seq.len() {
        for k in 1..=cfg.max_past_events.min(t) {
            let dt = delta_days(seq, t, t - k);
            let w = pr_weight(dt, cfg.lambda_days)?;
            let raw = model.decode_past_raw(&embeddings[t], dt, cfg.lambda_days);
            scratch.fill(0.0);
            out.value +=
                w * score_event(&model.layout, &raw, &seq.events[t - k], &mut scratch, None);
            out.per_feature
                .iter_mut()
                .zip(&scratch)
                .for_each(|(a, b)| *a += w * b);
            out.terms += 1;
        }
    }
    Ok(out)
}

/// Fused forward and backward pass over the first `len` events of `seq`.
///
/// Gradients of `grad_scale · objective` are added into `grads` when given.
/// Events past `len` are neither encoded nor scored, which is how padded
/// batch rows are masked.
pub(crate) fn sequence_objective(
    model: &NpprModel,
    seq: &EncodedSequence,
    len: usize,
    cfg: &LossConfig,
    grads: Option<(&mut NpprModel, f64)>,
) -> Result<LossBreakdown> {
    let layout = &model.layout;
    let trace = model.encode_trace_unchecked(seq, len);
    let d = model.embedding_dim();
    let norm = if cfg.normalize_by_length {
        1.0 / len as f64
    } else {
        1.0
    };
    let (mut grads, scale) = match grads {
        Some((g, s)) => (Some(g), s * norm),
        None => (None, 0.0),
    };
    let mut np = TermLoss::empty(layout);
    let mut pr = TermLoss::empty(layout);
    let mut d_emb = vec![vec![0.0; d]; if grads.is_some() { len } else { 0 }];
    let out_dim = layout.output_dim();
    let mut d_out = vec![0.0; out_dim];

    // next-event prediction
    for t in 0..len.saturating_sub(1) {
        let e = &trace.embeddings[t];
        let dec = model.np_decoder.forward(e);
        let target = &seq.events[t + 1];
        match grads.as_deref_mut() {
            Some(g) => {
                d_out.fill(0.0);
                np.value += score_event(
                    layout,
                    dec.output(),
                    target,
                    &mut np.per_feature,
                    Some((&mut d_out, scale * (1.0 - cfg.alpha))),
                );
                let d_e = model
                    .np_decoder
                    .backward(e, &dec, &d_out, &mut g.np_decoder);
                d_emb[t].iter_mut().zip(&d_e).for_each(|(a, b)| *a += b);
            }
            None => {
                np.value += score_event(layout, dec.output(), target, &mut np.per_feature, None)
            }
        }
        np.terms += 1;
    }

    // past reconstruction; the first PR layer's `W e_t + b` is shared over k
    {
        let first = &model.pr_decoder.layers[0];
        let hidden0 = first.out_dim;
        let delta_col: Vec<f64> = (0..hidden0)
            .map(|j| first.weight[j * (d + 1) + d])
            .collect();
        let mut scratch = vec![0.0; layout.slices.len()];
        for t in 1..len {
            let mut x = trace.embeddings[t].clone();
            x.push(0.0);
            let base = first.linear(&x);
            let mut d_base = vec![0.0; hidden0];
            let mut d_delta_col = vec![0.0; hidden0];
            for k in 1..=cfg.max_past_events.min(t) {
                let dt = delta_days(seq, t, t - k);
                let w = pr_weight(dt, cfg.lambda_days)?;
                let delta_in = dt / cfg.lambda_days;
                let pre0: Vec<f64> = base
                    .iter()
                    .zip(&delta_col)
                    .map(|(b, c)| b + c * delta_in)
                    .collect();
                let dec = model
                    .pr_decoder
                    .forward_from_preact(pre0, None::<&mut ChaChaRng>, 0.0);
                let target = &seq.events[t - k];
                scratch.fill(0.0);
                let loss = match grads.as_deref_mut() {
                    Some(g) => {
                        d_out.fill(0.0);
                        let l = score_event(
                            layout,
                            dec.output(),
                            target,
                            &mut scratch,
                            Some((&mut d_out, scale * cfg.alpha * w)),
                        );
                        let d_pre0 =
                            model
                                .pr_decoder
                                .backward_to_preact(&dec, &d_out, &mut g.pr_decoder);
                        for j in 0..hidden0 {
                            d_base[j] += d_pre0[j];
                            d_delta_col[j] += d_pre0[j] * delta_in;
                        }
                        l
                    }
                    None => score_event(layout, dec.output(), target, &mut scratch, None),
                };
                pr.value += w * loss;
                pr.per_feature
                    .iter_mut()
                    .zip(&scratch)
                    .for_each(|(a, b)| *a += w * b);
                pr.terms += 1;
            }
            if let Some(g) = grads.as_deref_mut() {
                let mut d_x = vec![0.0; d + 1];
                first.backward(&x, &d_base, &mut g.pr_decoder.layers[0], Some(&mut d_x));
                for j in 0..hidden0 {
                    g.pr_decoder.layers[0].weight[j * (d + 1) + d] += d_delta_col[j];
                }
                d_emb[t]
                    .iter_mut()
                    .zip(&d_x[..d])
                    .for_each(|(a, b)| *a += b);
            }
        }
    }

    if let Some(g) = grads {
        model.encoder_backward(seq, &trace, &d_emb, g);
    }
    let total = total_loss(np.value, pr.value, cfg.alpha);
    Ok(LossBreakdown {
        np: np.value,
        pr: pr.value,
        total,
        objective: total * norm,
        np_per_feature: np.per_feature,
        pr_per_feature: pr.per_feature,
        np_terms: np.terms,
        pr_terms: pr.terms,
    })
}

type ChaChaRng = rand_chacha::ChaCha8Rng;

impl NpprModel {
    /// Loss breakdown of a whole sequence without gradients.
    pub fn sequence_loss(&self, seq: &EncodedSequence, cfg: &LossConfig) -> Result<LossBreakdown> {
        self.check_sequence(seq)?;
        sequence_objective(self, seq, seq.len(), cfg, None)
    }

    /// Loss breakdown and gradient of the (length-normalized) objective.
    pub fn sequence_loss_and_grad(
        &self,
        seq: &EncodedSequence,
        cfg: &LossConfig,
    ) -> Result<(LossBreakdown, NpprModel)> {
        self.check_sequence(seq)?;
        let mut grads = self.zeros_like();
        let b = sequence_objective(self, seq, seq.len(), cfg, Some((&mut grads, 1.0)))?;
        Ok((b, grads))
    }

    /// Decoded next-event prediction from embedding `e`.
    pub fn predict_next(&self, e: &[f64]) -> EventPrediction {
        EventPrediction::from_output(&self.layout, &self.decode_next_raw(e))
    }

    /// Decoded reconstruction of the event `delta_days` before `e`'s event.
    pub fn reconstruct_past(
        &self,
        e: &[f64],
        delta_days: f64,
        lambda_days: f64,
    ) -> EventPrediction {
        EventPrediction::from_output(
            &self.layout,
            &self.decode_past_raw(e, delta_days, lambda_days),
        )
    }

    pub fn n_parameters(&self) -> usize {
        self.n_params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{EventSchema, FeatureSpec};
    use crate::model::EncoderConfig;

    fn tiny_model(card: usize) -> NpprModel {
        let schema = EventSchema::new("e", "t", vec![FeatureSpec::categorical("c")]).unwrap();
        let layout = FeatureLayout::from_parts(&schema, &[card]);
        let cfg = EncoderConfig {
            categorical_embedding_dim: 2,
            mlp_hidden: vec![3],
            gru_hidden: 3,
            embedding_dim: 3,
            decoder_hidden: vec![3],
        };
        NpprModel::new(layout, cfg, 1).unwrap()
    }

    fn seq(cats: &[usize], ts: &[i64]) -> EncodedSequence {
        EncodedSequence {
            entity_id: "x".into(),
            events: cats
                .iter()
                .map(|&c| EncodedEvent {
                    numeric: vec![0.0],
                    categories: vec![c],
                })
                .collect(),
            timestamps: ts.to_vec(),
        }
    }

    #[test]
    fn pr_weight_anchors() {
        assert_eq!(pr_weight(0.0, 60.0).unwrap(), 1.0);
        assert!((pr_weight(7.5, 7.5).unwrap() - (-1f64).exp()).abs() < 1e-12);
        assert!((pr_weight(60.0, 60.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert!(pr_weight(-1.0, 60.0).is_err());
        assert!(pr_weight(1.0, 0.0).is_err());
    }

    #[test]
    fn total_loss_edges() {
        assert_eq!(total_loss(2.0, 4.0, 0.0), 2.0);
        assert_eq!(total_loss(2.0, 4.0, 1.0), 4.0);
        assert!((total_loss(2.0, 4.0, 0.1) - 2.2).abs() < 1e-15);
    }

    #[test]
    fn uniform_decoder_gives_two_ln2_over_three_events() {
        let mut m = tiny_model(2);
        // zero the NP output layer so both logits are 0 and the time-gap
        // prediction is 0 against a target of 0
        let last = m.np_decoder.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        let s = seq(&[1, 0, 1], &[0, 10, 20]);
        let emb = m.encode_sequence(&s).unwrap();
        let np = np_loss(&m, &emb, &s).unwrap();
        assert!((np.value - 2.0 * 2f64.ln()).abs() < 1e-11, "{}", np.value);
        assert_eq!(np.terms, 2);
    }

    #[test]
    fn single_event_has_no_terms() {
        let m = tiny_model(3);
        let s = seq(&[2], &[0]);
        let cfg = LossConfig {
            alpha: 0.3,
            lambda_days: 60.0,
            max_past_events: 4,
            normalize_by_length: true,
        };
        let b = m.sequence_loss(&s, &cfg).unwrap();
        assert_eq!((b.np, b.pr, b.total), (0.0, 0.0, 0.0));
        assert!(!b.has_np_targets());
    }

    #[test]
    fn k1_same_timestamp_is_single_unweighted_term() {
        let m = tiny_model(3);
        let s = seq(&[2, 1], &[100, 100]);
        let cfg = LossConfig {
            alpha: 0.5,
            lambda_days: 60.0,
            max_past_events: 1,
            normalize_by_length: false,
        };
        let emb = m.encode_sequence(&s).unwrap();
        let pr = pr_loss(&m, &emb, &s, &cfg).unwrap();
        assert_eq!(pr.terms, 1);
        let raw = m.decode_past_raw(&emb[1], 0.0, 60.0);
        let mut pf = vec![0.0; 2];
        let expected = score_event(&m.layout, &raw, &s.events[0], &mut pf, None);
        assert_eq!(pr.value, expected);
    }

    #[test]
    fn fused_path_matches_public_losses() {
        let m = tiny_model(4);
        let s = seq(&[1, 3, 0, 2, 2], &[0, 3_600, 90_000, 200_000, 200_000]);
        let cfg = LossConfig {
            alpha: 0.3,
            lambda_days: 2.0,
            max_past_events: 2,
            normalize_by_length: true,
        };
        let emb = m.encode_sequence(&s).unwrap();
        let np = np_loss(&m, &emb, &s).unwrap();
        let pr = pr_loss(&m, &emb, &s, &cfg).unwrap();
        let (b, _) = m.sequence_loss_and_grad(&s, &cfg).unwrap();
        assert!((b.np - np.value).abs() < 1e-12);
        assert!((b.pr - pr.value).abs() < 1e-12);
        assert!((b.total - total_loss(np.value, pr.value, 0.3)).abs() < 1e-12);
        assert!((b.objective - b.total / 5.0).abs() < 1e-12);
        assert_eq!(b, m.sequence_loss(&s, &cfg).unwrap());
    }
}
