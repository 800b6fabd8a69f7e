use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use crate::data_model::{EncodedSequence, FeatureLayout};
use crate::nn::{
    Activation, BlockRef, Dense, EmbeddingTable, GruCell, GruTrace, Mlp, MlpTrace, Parameterized,
};
use crate::{Error, Result};

/// All learnable weights: encoder `proj ∘ GRU ∘ MLP` over preprocessed
/// events, next-event decoder and past-reconstruction decoder.
///
/// The PR decoder input is `[e_t; δt/λ]`, so its first layer has `d + 1`
/// columns with the time difference in the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpprModel {
    pub layout: FeatureLayout,
    pub config: EncoderConfig,
    pub category_embeddings: Vec<EmbeddingTable>,
    pub encoder_mlp: Mlp,
    pub gru: GruCell,
    pub projection: Dense,
    pub np_decoder: Mlp,
    pub pr_decoder: Mlp,
}

/// Per-position forward intermediates of the encoder.
#[derive(Debug, Clone, Default)]
pub struct EncoderTrace {
    pub inputs: Vec<Vec<f64>>,
    pub mlp: Vec<MlpTrace>,
    pub gru: Vec<GruTrace>,
    pub embeddings: Vec<Vec<f64>>,
}

impl NpprModel {
    pub fn new(layout: FeatureLayout, config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.mlp_hidden.is_empty() {
            return Err(Error::invalid(
                "encoder MLP needs at least one hidden layer",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let category_embeddings: Vec<EmbeddingTable> = layout
            .cardinalities
            .iter()
            .map(|&c| EmbeddingTable::init(&mut rng, c, config.categorical_embedding_dim))
            .collect();
        let input_dim =
            layout.n_numeric() + layout.n_categorical() * config.categorical_embedding_dim;
        let mut mlp_dims = vec![input_dim];
        mlp_dims.extend(&config.mlp_hidden);
        let encoder_mlp = Mlp::init(&mut rng, &mlp_dims, Activation::Relu, Activation::Relu);
        let gru = GruCell::init(&mut rng, *mlp_dims.last().unwrap(), config.gru_hidden);
        let projection = Dense::init(&mut rng, config.gru_hidden, config.embedding_dim);
        let decoder_dims = |input: usize| {
            let mut dims = vec![input];
            dims.extend(&config.decoder_hidden);
            dims.push(layout.output_dim());
            dims
        };
        let np_decoder = Mlp::init(
            &mut rng,
            &decoder_dims(config.embedding_dim),
            Activation::Relu,
            Activation::Linear,
        );
        let pr_decoder = Mlp::init(
            &mut rng,
            &decoder_dims(config.embedding_dim + 1),
            Activation::Relu,
            Activation::Linear,
        );
        Ok(Self {
            layout,
            config,
            category_embeddings,
            encoder_mlp,
            gru,
            projection,
            np_decoder,
            pr_decoder,
        })
    }

    /// Same architecture with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            config: self.config.clone(),
            category_embeddings: self
                .category_embeddings
                .iter()
                .map(|t| EmbeddingTable::zeros(t.cardinality, t.dim))
                .collect(),
            encoder_mlp: self.encoder_mlp.zeros_like(),
            gru: GruCell::zeros(self.gru.input_dim, self.gru.hidden_dim),
            projection: Dense::zeros(self.projection.in_dim, self.projection.out_dim),
            np_decoder: self.np_decoder.zeros_like(),
            pr_decoder: self.pr_decoder.zeros_like(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn check_sequence(&self, seq: &EncodedSequence) -> Result<()> {
        if seq.events.is_empty() {
            return Err(Error::invalid(format!(
                "sequence `{}` is empty",
                seq.entity_id
            )));
        }
        if seq.timestamps.len() != seq.events.len() {
            return Err(Error::shape("timestamps and events differ in length"));
        }
        seq.events
            .iter()
            .try_for_each(|e| self.layout.check_event(e))
    }

    fn input_vector(&self, event: &crate::data_model::EncodedEvent) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.encoder_mlp.in_dim());
        x.extend_from_slice(&event.numeric);
        for (table, &c) in self.category_embeddings.iter().zip(&event.categories) {
            x.extend_from_slice(table.row(c));
        }
        x
    }

    /// Runs the encoder over the first `len` events (all when `None`).
    pub fn encode_trace(&self, seq: &EncodedSequence, len: Option<usize>) -> Result<EncoderTrace> {
        self.check_sequence(seq)?;
        let len = len.unwrap_or(seq.len()).min(seq.len());
        Ok(self.encode_trace_unchecked(seq, len))
    }

    pub(crate) fn encode_trace_unchecked(&self, seq: &EncodedSequence, len: usize) -> EncoderTrace {
        let mut trace = EncoderTrace::default();
        let mut h = vec![0.0; self.gru.hidden_dim];
        for event in &seq.events[..len] {
            let x = self.input_vector(event);
            let m = self.encoder_mlp.forward(&x);
            let g = self.gru.step_unchecked(m.output(), &h);
            let e = self
                .projection
                .apply(&g.h_new, Activation::Sigmoid)
                .expect("projection dims fixed at construction");
            h.clone_from(&g.h_new);
            trace.inputs.push(x);
            trace.mlp.push(m);
            trace.gru.push(g);
            trace.embeddings.push(e);
        }
        trace
    }

    /// Contextual embedding `e_t` of every event; `e_t` depends only on
    /// events `0..=t`.
    pub fn encode_sequence(&self, seq: &EncodedSequence) -> Result<Vec<Vec<f64>>> {
        Ok(self.encode_trace(seq, None)?.embeddings)
    }

    /// Backpropagation through time from embedding gradients `d_emb`.
    pub(crate) fn encoder_backward(
        &self,
        seq: &EncodedSequence,
        trace: &EncoderTrace,
        d_emb: &[Vec<f64>],
        grads: &mut NpprModel,
    ) {
        let n = trace.embeddings.len();
        let hd = self.gru.hidden_dim;
        let zeros = vec![0.0; hd];
        let mut d_h_carry = vec![0.0; hd];
        let n_num = self.layout.n_numeric();
        let emb_dim = self.config.categorical_embedding_dim;
        for t in (0..n).rev() {
            let e = &trace.embeddings[t];
            let mut d_pre: Vec<f64> = d_emb[t]
                .iter()
                .zip(e)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            let h_t = &trace.gru[t].h_new;
            let mut d_h = std::mem::take(&mut d_h_carry);
            self.projection
                .backward(h_t, &d_pre, &mut grads.projection, Some(&mut d_h));
            d_pre.clear();

            let h_prev = if t == 0 {
                &zeros
            } else {
                &trace.gru[t - 1].h_new
            };
            let gru_in = trace.mlp[t].output();
            let mut d_gru_in = vec![0.0; gru_in.len()];
            let mut d_h_prev = vec![0.0; hd];
            self.gru.backward(
                gru_in,
                h_prev,
                &trace.gru[t],
                &d_h,
                &mut grads.gru,
                &mut d_gru_in,
                &mut d_h_prev,
            );
            d_h_carry = d_h_prev;

            let d_x = self.encoder_mlp.backward(
                &trace.inputs[t],
                &trace.mlp[t],
                &d_gru_in,
                &mut grads.encoder_mlp,
            );
            for (i, (&c, table)) in seq.events[t]
                .categories
                .iter()
                .zip(&mut grads.category_embeddings)
                .enumerate()
            {
                let start = n_num + i * emb_dim;
                table.accumulate(c, &d_x[start..start + emb_dim]);
            }
        }
    }

    /// Raw NP decoder output for embedding `e`.
    pub fn decode_next_raw(&self, e: &[f64]) -> Vec<f64> {
        self.np_decoder.forward(e).output().to_vec()
    }

    /// Raw PR decoder output for embedding `e` and time difference
    /// `delta_days`, which is fed as `delta_days / lambda_days`.
    pub fn decode_past_raw(&self, e: &[f64], delta_days: f64, lambda_days: f64) -> Vec<f64> {
        let mut x = e.to_vec();
        x.push(delta_days / lambda_days);
        self.pr_decoder.forward(&x).output().to_vec()
    }
}

impl Parameterized for NpprModel {
    fn collect_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<BlockRef<'a>>) {
        for (i, t) in self.category_embeddings.iter().enumerate() {
            t.collect_blocks(
                &format!("{prefix}embedding.{}", self.layout.categorical[i]),
                out,
            );
        }
        self.encoder_mlp
            .collect_blocks(&format!("{prefix}encoder_mlp"), out);
        self.gru.collect_blocks(&format!("{prefix}gru"), out);
        self.projection
            .collect_blocks(&format!("{prefix}projection"), out);
        self.np_decoder
            .collect_blocks(&format!("{prefix}np_decoder"), out);
        self.pr_decoder
            .collect_blocks(&format!("{prefix}pr_decoder"), out);
    }

    fn collect_blocks_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for t in &mut self.category_embeddings {
            t.collect_blocks_mut(out);
        }
        self.encoder_mlp.collect_blocks_mut(out);
        self.gru.collect_blocks_mut(out);
        self.projection.collect_blocks_mut(out);
        self.np_decoder.collect_blocks_mut(out);
        self.pr_decoder.collect_blocks_mut(out);
    }
}
