//! Run configuration: a TOML file, `--set key=value` overrides and a few
//! dedicated flags, resolved into one validated [`RunConfig`].

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nppr::downstream::HeadConfig;
use nppr::fingerprint::sha256_hex;
use nppr::model::{EncoderConfig, NpprConfig};
use nppr::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Most frequent values per categorical feature that get their own group.
    pub top_n: usize,
    /// Trailing window lengths of the event-level preset.
    pub windows_days: Vec<f64>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            top_n: nppr::baselines::DEFAULT_TOP_N,
            windows_days: nppr::baselines::DEFAULT_WINDOWS_DAYS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of entities whose rows form the test set of `train-head`.
    pub test_fraction: f64,
    /// Probability of keeping a negative training row (binary tasks).
    pub keep_genuine: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            keep_genuine: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub fp_ratios: Vec<f64>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            fp_ratios: vec![1.0, 2.0, 3.0, 5.0, 10.0],
        }
    }
}

/// Every knob of the pipeline. The seeds inside `synth` and `training` are
/// overwritten from the top-level `seed` during resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub training: NpprConfig,
    pub head: HeadConfig,
    pub features: FeaturesConfig,
    pub split: SplitConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            synth: SynthConfig::default(),
            encoder: EncoderConfig::default(),
            training: NpprConfig::default(),
            head: HeadConfig::default(),
            features: FeaturesConfig::default(),
            split: SplitConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

/// Seed of the named random stream of a run.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let digest = sha256_hex(format!("{seed}:{stream}").as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides, then the
    /// dedicated seed and thread flags, and validates the result.
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
        threads: Option<usize>,
    ) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("config file `{}`", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("config file `{}` is not valid TOML", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(t) = threads {
            cfg.threads = t;
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self) {
        self.synth.seed = derive_seed(self.seed, "synth");
        self.training.seed = derive_seed(self.seed, "training");
        self.training.threads = self.threads;
    }

    pub fn stream_seed(&self, stream: &str) -> u64 {
        derive_seed(self.seed, stream)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            bail!("threads: must be at least 1");
        }
        self.synth.validate().context("[synth]")?;
        self.encoder.validate().context("[encoder]")?;
        self.training.validate().context("[training]")?;
        self.head.validate().context("[head]")?;
        if self.features.windows_days.is_empty()
            || self.features.windows_days.iter().any(|w| !(*w > 0.0))
        {
            bail!("features.windows_days: window lengths must be positive");
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            bail!(
                "split.test_fraction: must lie in (0, 1), got {}",
                self.split.test_fraction
            );
        }
        if !(self.split.keep_genuine > 0.0 && self.split.keep_genuine <= 1.0) {
            bail!(
                "split.keep_genuine: must lie in (0, 1], got {}",
                self.split.keep_genuine
            );
        }
        if self.evaluate.fp_ratios.iter().any(|r| !(*r >= 0.0)) {
            bail!("evaluate.fp_ratios: ratios must be non-negative");
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// `a.b.c=value`; the value is read as a TOML literal and falls back to a
/// bare string.
fn apply_override(table: &mut toml::Table, text: &str) -> Result<()> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| anyhow!("--set `{text}`: expected key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("--set `{text}`: malformed key");
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("--set `{text}`: `{p}` is not a section"))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse_literals() {
        let cfg = RunConfig::load(
            None,
            &[
                "training.max_epochs=3".into(),
                "head.hidden=[8, 8]".into(),
                "head.task=regression".into(),
            ],
            Some(4),
            None,
        )
        .unwrap();
        assert_eq!(cfg.training.max_epochs, 3);
        assert_eq!(cfg.head.hidden, vec![8, 8]);
        assert_eq!(cfg.head.task, nppr::downstream::TaskKind::Regression);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.training.seed, derive_seed(4, "training"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_named() {
        let e = RunConfig::load(None, &["training.bogus=1".into()], None, None).unwrap_err();
        assert!(format!("{e:#}").contains("bogus"), "{e:#}");
        let e = RunConfig::load(None, &["split.test_fraction=1.5".into()], None, None).unwrap_err();
        assert!(format!("{e:#}").contains("split.test_fraction"));
        let e = RunConfig::load(None, &["training.alpha=2".into()], None, None).unwrap_err();
        assert!(format!("{e:#}").contains("alpha"));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::load(None, &[], None, None).unwrap();
        let b = RunConfig::load(None, &[], None, None).unwrap();
        let c = RunConfig::load(None, &[], Some(1), None).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
