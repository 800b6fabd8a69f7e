//! Synthetic transaction corpora with planted structure.
//!
//! Every entity belongs to one archetype. An archetype fixes a preferred
//! block of merchant categories, a channel mix and a log-normal amount
//! scale; each entity draws its own category preferences around its
//! archetype profile. Purchases are habitual: the category and channel of
//! an event repeat those of the previous one with fixed probabilities, and
//! gaps between events follow a gamma renewal process. Churned entities
//! see their rate fade linearly to zero over the middle third of the
//! history and stay silent through the final third. Fraud bursts are short runs of off-archetype, inflated events
//! inserted at random times.
//!
//! After the history window comes a one-month label window whose amounts
//! are summed into the expenditure label and are not part of the history.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    EntityHistory, EventSchema, FeatureSpec, RawEvent, RawValue, SECONDS_PER_DAY,
};
use crate::{Error, Result};

pub const DAYS_PER_MONTH: f64 = 30.0;
/// 2023-01-01T00:00:00Z
pub const START_TIMESTAMP: i64 = 1_672_531_200;

const HOME_CONCENTRATION: f64 = 2.0;
const OFF_CONCENTRATION: f64 = 0.05;
const ENTITY_CONCENTRATION: f64 = 3.0;
const CHANNEL_CONCENTRATION: f64 = 0.3;
/// Half-width of the per-category shift of the log amount.
const CATEGORY_LOG_SHIFT: f64 = 0.6;
const BURST_GAP_MINUTES: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmountConfig {
    /// Log-scale mean of archetype 0; archetype `a` adds `a * log_mean_step`.
    pub log_mean_base: f64,
    pub log_mean_step: f64,
    pub log_sigma: f64,
    pub fraud_multiplier: f64,
}

impl Default for AmountConfig {
    fn default() -> Self {
        Self {
            log_mean_base: 2.5,
            log_mean_step: 1.2,
            log_sigma: 0.4,
            fraud_multiplier: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_archetypes: usize,
    pub months: usize,
    pub mean_events_per_month: f64,
    pub max_events_per_month: f64,
    pub churn_fraction: f64,
    /// A churned entity's rate falls linearly from full at this fraction of
    /// the history to zero at `churn_fade_end`, and stays zero after.
    pub churn_fade_start: f64,
    pub churn_fade_end: f64,
    /// Probability per genuine history event of one extra fraud event.
    pub fraud_rate: f64,
    pub n_categories: usize,
    pub n_channels: usize,
    /// Probability that an event repeats the previous event's category.
    pub category_stickiness: f64,
    /// Probability that an event repeats the previous event's channel.
    pub channel_stickiness: f64,
    /// Gamma shape of the gaps between events (1 gives a Poisson process).
    pub gap_shape: f64,
    pub amount: AmountConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 2000,
            n_archetypes: 4,
            months: 12,
            mean_events_per_month: 8.0,
            max_events_per_month: 40.0,
            churn_fraction: 0.3,
            churn_fade_start: 1.0 / 3.0,
            churn_fade_end: 2.0 / 3.0,
            fraud_rate: 0.01,
            n_categories: 32,
            n_channels: 6,
            category_stickiness: 0.5,
            channel_stickiness: 0.8,
            gap_shape: 3.0,
            amount: AmountConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {v}"
                )))
            }
        };
        unit("churn_fraction", self.churn_fraction)?;
        if !(0.0 <= self.churn_fade_start
            && self.churn_fade_start < self.churn_fade_end
            && self.churn_fade_end <= 1.0)
        {
            return Err(Error::invalid(
                "churn fade must satisfy 0 <= churn_fade_start < churn_fade_end <= 1",
            ));
        }
        unit("fraud_rate", self.fraud_rate)?;
        unit("category_stickiness", self.category_stickiness)?;
        unit("channel_stickiness", self.channel_stickiness)?;
        if !(self.gap_shape > 0.0) {
            return Err(Error::invalid("gap_shape must be positive"));
        }
        if self.n_archetypes < 2 {
            return Err(Error::invalid("n_archetypes must be at least 2"));
        }
        if self.n_categories < self.n_archetypes + 1 {
            return Err(Error::invalid("n_categories must exceed n_archetypes"));
        }
        if self.n_entities == 0 || self.months == 0 || self.n_channels == 0 {
            return Err(Error::invalid(
                "n_entities, months and n_channels must be positive",
            ));
        }
        if !(self.mean_events_per_month > 0.0
            && self.mean_events_per_month <= self.max_events_per_month)
        {
            return Err(Error::invalid(
                "mean_events_per_month must lie in (0, max_events_per_month]",
            ));
        }
        if !(self.amount.log_sigma > 0.0 && self.amount.fraud_multiplier > 0.0) {
            return Err(Error::invalid(
                "amount.log_sigma and amount.fraud_multiplier must be positive",
            ));
        }
        Ok(())
    }

    pub fn history_days(&self) -> f64 {
        self.months as f64 * DAYS_PER_MONTH
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityLabel {
    pub entity_id: String,
    pub archetype: usize,
    pub churned: bool,
    /// Sum of the label-window amounts.
    pub expenditure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventLabel {
    pub fraud: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLabels {
    pub entities: Vec<EntityLabel>,
    /// Aligned with the events of each history.
    pub events: Vec<Vec<EventLabel>>,
    /// Home archetype of each category value.
    pub category_archetype: BTreeMap<String, usize>,
    /// Amounts of the label window, in time order.
    pub label_window_amounts: Vec<Vec<f64>>,
}

pub fn synth_schema() -> EventSchema {
    EventSchema::new(
        "entity_id",
        "timestamp",
        vec![
            FeatureSpec::numeric("amount"),
            FeatureSpec::categorical("mcc"),
            FeatureSpec::categorical("channel"),
        ],
    )
    .expect("static schema is valid")
}

pub fn category_value(i: usize) -> String {
    format!("{}", 4000 + i)
}

pub fn channel_value(i: usize) -> String {
    format!("ch{i}")
}

/// Home archetype of category `i`: categories are split into contiguous blocks.
pub fn home_archetype(i: usize, n_categories: usize, n_archetypes: usize) -> usize {
    (i * n_archetypes / n_categories).min(n_archetypes - 1)
}

struct Archetype {
    categories: Vec<f64>,
    channels: Vec<f64>,
    log_mean: f64,
    /// Shift of the log amount per category.
    category_shift: Vec<f64>,
}

fn dirichlet(rng: &mut ChaCha8Rng, alphas: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            Gamma::new(a.max(1e-3), 1.0)
                .expect("positive shape")
                .sample(rng)
        })
        .collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        // every draw underflowed; fall back to the concentration profile
        let t: f64 = alphas.iter().sum();
        v = alphas.iter().map(|a| a / t).collect();
    }
    v
}

fn archetypes(cfg: &SynthConfig) -> Vec<Archetype> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_archetypes)
        .map(|a| {
            let alphas: Vec<f64> = (0..cfg.n_categories)
                .map(|i| {
                    if home_archetype(i, cfg.n_categories, cfg.n_archetypes) == a {
                        HOME_CONCENTRATION
                    } else {
                        OFF_CONCENTRATION
                    }
                })
                .collect();
            Archetype {
                categories: dirichlet(&mut rng, &alphas),
                channels: dirichlet(&mut rng, &vec![CHANNEL_CONCENTRATION; cfg.n_channels]),
                log_mean: cfg.amount.log_mean_base + a as f64 * cfg.amount.log_mean_step,
                category_shift: (0..cfg.n_categories)
                    .map(|_| rng.random_range(-CATEGORY_LOG_SHIFT..=CATEGORY_LOG_SHIFT))
                    .collect(),
            }
        })
        .collect()
}

fn round_cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

struct Generated {
    history: EntityHistory,
    label: EntityLabel,
    events: Vec<EventLabel>,
    label_amounts: Vec<f64>,
}

fn generate_entity(cfg: &SynthConfig, archetypes: &[Archetype], index: usize) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let entity_id = format!("E{:05}", index + 1);
    let a = rng.random_range(0..cfg.n_archetypes);
    let arch = &archetypes[a];
    let churned = rng.random_bool(cfg.churn_fraction);

    let alphas: Vec<f64> = arch
        .categories
        .iter()
        .map(|p| p * ENTITY_CONCENTRATION)
        .collect();
    let prefs = dirichlet(&mut rng, &alphas);
    let mcc_dist = WeightedIndex::new(&prefs).expect("normalised weights");
    let channel_dist = WeightedIndex::new(&arch.channels).expect("normalised weights");
    let activity: f64 = LogNormal::new(0.0, 0.3).unwrap().sample(&mut rng);
    let per_month = (cfg.mean_events_per_month * activity).min(cfg.max_events_per_month);
    let rate_per_day = per_month / DAYS_PER_MONTH;
    let amount_noise = LogNormal::new(0.0, cfg.amount.log_sigma).unwrap();
    let amount_of = |rng: &mut ChaCha8Rng, mcc: usize| {
        (arch.log_mean + arch.category_shift[mcc]).exp() * amount_noise.sample(rng)
    };

    let t_hist = cfg.history_days();
    let t_end = t_hist + DAYS_PER_MONTH;
    let fade_start = cfg.churn_fade_start * t_hist;
    let fade_len = (cfg.churn_fade_end - cfg.churn_fade_start) * t_hist;
    let gaps = Gamma::new(cfg.gap_shape, 1.0 / (cfg.gap_shape * rate_per_day)).unwrap();

    let to_ts = |days: f64| START_TIMESTAMP + (days * SECONDS_PER_DAY).floor() as i64;
    let mut events: Vec<(i64, bool, RawEvent)> = Vec::new();
    let mut label_amounts = Vec::new();
    // first arrival uniformly placed within one mean gap
    let mut t = -rng.random_range(0.0..1.0 / rate_per_day);
    let mut prev: Option<(usize, usize)> = None;
    loop {
        t += gaps.sample(&mut rng);
        if t >= t_end {
            break;
        }
        if t < 0.0 {
            continue;
        }
        // every draw is taken for every candidate so streams stay aligned
        let keep_u: f64 = rng.random();
        let (stick_c, stick_ch): (f64, f64) = (rng.random(), rng.random());
        let fresh_mcc = mcc_dist.sample(&mut rng);
        let fresh_channel = channel_dist.sample(&mut rng);
        let (mcc, channel) = match prev {
            Some((pm, pc)) => (
                if stick_c < cfg.category_stickiness {
                    pm
                } else {
                    fresh_mcc
                },
                if stick_ch < cfg.channel_stickiness {
                    pc
                } else {
                    fresh_channel
                },
            ),
            None => (fresh_mcc, fresh_channel),
        };
        let amount = round_cents(amount_of(&mut rng, mcc)).max(0.01);
        if churned && t > fade_start && keep_u >= 1.0 - (t - fade_start) / fade_len {
            continue;
        }
        prev = Some((mcc, channel));
        if t >= t_hist {
            label_amounts.push(amount);
            continue;
        }
        events.push((
            to_ts(t),
            false,
            RawEvent {
                entity_id: entity_id.clone(),
                timestamp: to_ts(t),
                values: vec![
                    RawValue::Number(amount),
                    RawValue::Text(category_value(mcc)),
                    RawValue::Text(channel_value(channel)),
                ],
            },
        ));
    }

    let n_genuine = events.len() as u64;
    let n_fraud = if cfg.fraud_rate > 0.0 && n_genuine > 0 {
        Binomial::new(n_genuine, cfg.fraud_rate)
            .unwrap()
            .sample(&mut rng) as usize
    } else {
        0
    };
    let off: Vec<usize> = (0..cfg.n_categories)
        .filter(|&i| home_archetype(i, cfg.n_categories, cfg.n_archetypes) != a)
        .collect();
    let burst_gap = Exp::new(1.0 / BURST_GAP_MINUTES).unwrap();
    for size in burst_sizes(&mut rng, n_fraud) {
        let mut t = rng.random_range(0.0..t_hist);
        for _ in 0..size {
            let mcc = off[rng.random_range(0..off.len())];
            let channel = rng.random_range(0..cfg.n_channels);
            let amount =
                round_cents(cfg.amount.fraud_multiplier * amount_of(&mut rng, mcc)).max(0.01);
            events.push((
                to_ts(t),
                true,
                RawEvent {
                    entity_id: entity_id.clone(),
                    timestamp: to_ts(t),
                    values: vec![
                        RawValue::Number(amount),
                        RawValue::Text(category_value(mcc)),
                        RawValue::Text(channel_value(channel)),
                    ],
                },
            ));
            t = (t + burst_gap.sample(&mut rng) / (24.0 * 60.0))
                .min(t_hist - 1.0 / SECONDS_PER_DAY);
        }
    }
    events.sort_by_key(|e| e.0);

    let labels = events
        .iter()
        .map(|(_, fraud, e)| EventLabel {
            fraud: *fraud,
            value: e.values[0].as_number().unwrap_or(0.0),
        })
        .collect();
    let history = EntityHistory::new(entity_id.clone(), events.into_iter().map(|e| e.2).collect())
        .expect("events carry the entity id");
    Generated {
        history,
        label: EntityLabel {
            entity_id,
            archetype: a,
            churned,
            expenditure: label_amounts.iter().sum(),
        },
        events: labels,
        label_amounts,
    }
}

/// Splits `n` fraud events into bursts of 2 to 6; a leftover single event
/// joins the previous burst.
fn burst_sizes(rng: &mut ChaCha8Rng, mut n: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = Vec::new();
    while n > 0 {
        let s = rng.random_range(2..=6usize).min(n);
        if s == 1 && !sizes.is_empty() {
            *sizes.last_mut().unwrap() += 1;
        } else {
            sizes.push(s);
        }
        n -= s;
    }
    sizes
}

/// Generates the corpus. Output is a pure function of `cfg`; entities are
/// generated in parallel from independent substreams.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<EntityHistory>, SynthLabels, EventSchema)> {
    cfg.validate()?;
    let archetypes = archetypes(cfg);
    let generated: Vec<Generated> = (0..cfg.n_entities)
        .into_par_iter()
        .map(|i| generate_entity(cfg, &archetypes, i))
        .collect();
    let mut histories = Vec::with_capacity(generated.len());
    let mut labels = SynthLabels {
        entities: Vec::with_capacity(generated.len()),
        events: Vec::with_capacity(generated.len()),
        category_archetype: (0..cfg.n_categories)
            .map(|i| {
                (
                    category_value(i),
                    home_archetype(i, cfg.n_categories, cfg.n_archetypes),
                )
            })
            .collect(),
        label_window_amounts: Vec::with_capacity(generated.len()),
    };
    for g in generated {
        histories.push(g.history);
        labels.entities.push(g.label);
        labels.events.push(g.events);
        labels.label_window_amounts.push(g.label_amounts);
    }
    Ok((histories, labels, synth_schema()))
}

/// Identifier of event `index` of an entity in event-level files.
pub fn event_id(entity_id: &str, index: usize) -> String {
    format!("{entity_id}#{index}")
}

pub fn write_labels_csv(path: &Path, labels: &SynthLabels) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["entity_id", "archetype", "churned", "expenditure"])?;
    for l in &labels.entities {
        w.write_record([
            l.entity_id.clone(),
            l.archetype.to_string(),
            u8::from(l.churned).to_string(),
            l.expenditure.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_event_labels_csv(path: &Path, labels: &SynthLabels) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "entity_id", "event_index", "fraud", "value"])?;
    for (entity, events) in labels.entities.iter().zip(&labels.events) {
        for (j, e) in events.iter().enumerate() {
            w.write_record([
                event_id(&entity.entity_id, j),
                entity.entity_id.clone(),
                j.to_string(),
                u8::from(e.fraud).to_string(),
                e.value.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Multinomial naive Bayes over count vectors with add-one smoothing.
#[derive(Debug, Clone)]
pub struct NaiveBayes {
    log_prior: Vec<f64>,
    log_likelihood: Vec<Vec<f64>>,
}

impl NaiveBayes {
    pub fn fit(counts: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Self> {
        let dim = counts.first().map_or(0, |c| c.len());
        if counts.len() != labels.len() || counts.is_empty() {
            return Err(Error::invalid(
                "naive Bayes needs equally many count vectors and labels",
            ));
        }
        let mut totals = vec![vec![1.0; dim]; n_classes];
        let mut class_n = vec![0.0; n_classes];
        for (c, &y) in counts.iter().zip(labels) {
            if y >= n_classes || c.len() != dim {
                return Err(Error::invalid("label or count vector out of range"));
            }
            class_n[y] += 1.0;
            for (t, v) in totals[y].iter_mut().zip(c) {
                *t += v;
            }
        }
        let n = counts.len() as f64;
        Ok(Self {
            log_prior: class_n
                .iter()
                .map(|&k| ((k + 1.0) / (n + n_classes as f64)).ln())
                .collect(),
            log_likelihood: totals
                .iter()
                .map(|t| {
                    let s: f64 = t.iter().sum();
                    t.iter().map(|v| (v / s).ln()).collect()
                })
                .collect(),
        })
    }

    pub fn predict(&self, counts: &[f64]) -> usize {
        let score = |k: usize| {
            self.log_prior[k]
                + self.log_likelihood[k]
                    .iter()
                    .zip(counts)
                    .map(|(l, c)| l * c)
                    .sum::<f64>()
        };
        (0..self.log_prior.len())
            .max_by(|&i, &j| score(i).total_cmp(&score(j)).then(j.cmp(&i)))
            .unwrap_or(0)
    }
}

/// Raw counts of every categorical value of `history`, in the order of
/// `vocabularies` (one list of values per categorical feature).
pub fn category_counts(
    history: &EntityHistory,
    schema: &EventSchema,
    vocabularies: &[Vec<String>],
) -> Vec<f64> {
    let cats: Vec<usize> = schema.categorical_features().map(|(i, _)| i).collect();
    let mut offsets = Vec::with_capacity(vocabularies.len());
    let mut index: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    let mut off = 0;
    for (k, vocab) in vocabularies.iter().enumerate() {
        offsets.push(off);
        for (j, v) in vocab.iter().enumerate() {
            index.insert((k, v.as_str()), off + j);
        }
        off += vocab.len();
    }
    let mut counts = vec![0.0; off];
    for e in &history.events {
        for (k, &fi) in cats.iter().enumerate() {
            if let Some(key) = e.values[fi].category_key() {
                if let Some(&slot) = index.get(&(k, key.as_str())) {
                    counts[slot] += 1.0;
                }
            }
        }
    }
    counts
}

/// Held-out accuracy of naive Bayes predicting the archetype from raw
/// category counts. Certifies that the archetype signal is present.
pub fn archetype_oracle_accuracy(
    histories: &[EntityHistory],
    labels: &SynthLabels,
    schema: &EventSchema,
    test_fraction: f64,
    seed: u64,
) -> Result<f64> {
    let n_classes = labels
        .entities
        .iter()
        .map(|l| l.archetype + 1)
        .max()
        .unwrap_or(0);
    let cat_idx: Vec<usize> = schema.categorical_features().map(|(i, _)| i).collect();
    let vocabularies: Vec<Vec<String>> = cat_idx
        .iter()
        .map(|&fi| {
            let mut values: Vec<String> = histories
                .iter()
                .flat_map(|h| h.events.iter().filter_map(|e| e.values[fi].category_key()))
                .collect();
            values.sort();
            values.dedup();
            values
        })
        .collect();
    let indices: Vec<usize> = (0..histories.len()).collect();
    let (train, test) = crate::data_model::split_entities(&indices, test_fraction, seed)?;
    let rows = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        idx.iter()
            .map(|&i| {
                (
                    category_counts(&histories[i], schema, &vocabularies),
                    labels.entities[i].archetype,
                )
            })
            .unzip()
    };
    let (x_train, y_train) = rows(&train);
    let (x_test, y_test) = rows(&test);
    let nb = NaiveBayes::fit(&x_train, &y_train, n_classes)?;
    let correct = x_test
        .iter()
        .zip(&y_test)
        .filter(|(x, &y)| nb.predict(x) == y)
        .count();
    Ok(correct as f64 / y_test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_entities: 200,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate(&small(4)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn zero_churn_means_no_churned_entities() {
        let cfg = SynthConfig {
            churn_fraction: 0.0,
            ..small(1)
        };
        let (_, labels, _) = generate(&cfg).unwrap();
        assert!(labels.entities.iter().all(|l| !l.churned));
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SynthConfig {
                fraud_rate: 1.5,
                ..small(0)
            },
            SynthConfig {
                churn_fraction: -0.1,
                ..small(0)
            },
            SynthConfig {
                n_archetypes: 1,
                ..small(0)
            },
        ] {
            assert!(generate(&cfg).is_err());
        }
    }

    #[test]
    fn bursts_cover_count_with_valid_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 0..200 {
            let sizes = burst_sizes(&mut rng, n);
            assert_eq!(sizes.iter().sum::<usize>(), n);
            if n >= 2 {
                assert!(sizes.iter().all(|&s| (2..=7).contains(&s)), "{sizes:?}");
            }
        }
    }

    #[test]
    fn home_blocks_partition_categories() {
        let owners: Vec<usize> = (0..32).map(|i| home_archetype(i, 32, 4)).collect();
        for a in 0..4 {
            assert_eq!(owners.iter().filter(|&&o| o == a).count(), 8);
        }
        assert_eq!(home_archetype(31, 32, 4), 3);
    }
}
