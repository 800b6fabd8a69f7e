use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Layer sizes of the encoder and both decoders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Embedding width used for every categorical feature.
    pub categorical_embedding_dim: usize,
    /// Hidden widths of the ReLU MLP in front of the GRU.
    pub mlp_hidden: Vec<usize>,
    pub gru_hidden: usize,
    /// Width `d` of the sigmoid-projected event embedding.
    pub embedding_dim: usize,
    /// Hidden widths of the NP and PR decoder MLPs.
    pub decoder_hidden: Vec<usize>,
}

impl EncoderConfig {
    /// Full-scale sizes: 2×512 MLP, GRU 512, d = 512, decoders 2×512.
    pub fn full() -> Self {
        Self {
            categorical_embedding_dim: 16,
            mlp_hidden: vec![512, 512],
            gru_hidden: 512,
            embedding_dim: 512,
            decoder_hidden: vec![512, 512],
        }
    }

    /// Same topology at desk scale.
    pub fn desk() -> Self {
        Self {
            categorical_embedding_dim: 8,
            mlp_hidden: vec![32, 32],
            gru_hidden: 32,
            embedding_dim: 32,
            decoder_hidden: vec![32, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.categorical_embedding_dim,
            self.gru_hidden,
            self.embedding_dim,
        ];
        if sizes
            .iter()
            .chain(&self.mlp_hidden)
            .chain(&self.decoder_hidden)
            .any(|&s| s == 0)
        {
            return Err(Error::invalid("encoder sizes must be positive"));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Objective and optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpprConfig {
    /// Weight of PR in `(1 − α)·NP + α·PR`.
    pub alpha: f64,
    /// Decay length of the PR weight, in days.
    pub lambda_days: f64,
    /// At most this many past events are reconstructed per position.
    pub max_past_events: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of entities held out for early stopping.
    pub validation_fraction: f64,
    /// Divide each sequence's loss by its length before batch averaging.
    pub normalize_by_length: bool,
    pub seed: u64,
    pub threads: usize,
}

impl Default for NpprConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda_days: 60.0,
            max_past_events: 16,
            learning_rate: 1e-3,
            batch_size: 4,
            max_epochs: 20,
            patience: 5,
            validation_fraction: 0.1,
            normalize_by_length: true,
            seed: 0,
            threads: 1,
        }
    }
}

impl NpprConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.lambda_days > 0.0) || !self.lambda_days.is_finite() {
            return Err(Error::invalid(format!(
                "lambda_days must be positive, got {}",
                self.lambda_days
            )));
        }
        if self.max_past_events == 0 {
            return Err(Error::invalid("max_past_events must be at least 1"));
        }
        if self.batch_size == 0 || self.threads == 0 {
            return Err(Error::invalid("batch_size and threads must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_alpha_values_are_accepted() {
        for alpha in [0.1, 0.001, 0.005, 0.0, 1.0] {
            let cfg = NpprConfig {
                alpha,
                ..Default::default()
            };
            cfg.validate().unwrap();
        }
        assert!(NpprConfig {
            alpha: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(NpprConfig {
            lambda_days: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(NpprConfig {
            max_past_events: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn defaults() {
        let c = NpprConfig::default();
        assert_eq!(c.lambda_days, 60.0);
        assert_eq!(c.max_past_events, 16);
        assert_eq!(c.learning_rate, 1e-3);
        let p = EncoderConfig::full();
        assert_eq!((p.gru_hidden, p.embedding_dim), (512, 512));
        assert_eq!(p.mlp_hidden, vec![512, 512]);
        p.validate().unwrap();
    }
}
