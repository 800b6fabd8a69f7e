use std::collections::BTreeMap;
use std::time::Instant;

use nppr::baselines::{windowed_feature_table, TopValues, DEFAULT_TOP_N, DEFAULT_WINDOWS_DAYS};
use nppr::data_model::{
    encode_all, fit_normalization, split_entities, EncodedSequence, EntityHistory, EventSchema,
    FeatureLayout, NormStats,
};
use nppr::downstream::{
    accuracy, auc, train_head, vdr_curve, HeadConfig, ScoredTransaction, TaskKind,
};
use nppr::embeddings::{
    category_embeddings, cosine_distance, entity_embeddings, event_embeddings, nearest_neighbours,
    PoolingStrategy, DEFAULT_MIN_SUPPORT, OOV_LABEL,
};
use nppr::model::{pretrain, EncoderConfig, NpprConfig, NpprModel, TrainingLog};
use nppr::synth::{archetype_oracle_accuracy, generate, SynthConfig, SynthLabels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const SEEDS: [u64; 3] = [0, 1, 2];
const TEST_FRACTION: f64 = 0.2;
/// Share of genuine training events kept for the fraud head.
const KEEP_GENUINE: f64 = 0.1;
const FP_RATIO: f64 = 5.0;

pub struct Corpus {
    pub histories: Vec<EntityHistory>,
    pub labels: SynthLabels,
    pub schema: EventSchema,
    pub stats: NormStats,
    pub data: Vec<EncodedSequence>,
    pub model: NpprModel,
    pub log: TrainingLog,
    pub seconds: f64,
    events: Option<Vec<Vec<Vec<f64>>>>,
}

impl Corpus {
    /// Default synthetic corpus and a default single-threaded pretraining run.
    fn build() -> Self {
        let (histories, labels, schema) = generate(&SynthConfig::default()).unwrap();
        let stats = fit_normalization(&histories, &schema).unwrap();
        let layout = FeatureLayout::new(&schema, &stats);
        let data = encode_all(&histories, &stats, &schema).unwrap();
        let cfg = NpprConfig::default();
        let started = Instant::now();
        let trained = pretrain(&data, &layout, &EncoderConfig::desk(), &cfg).unwrap();
        let seconds = started.elapsed().as_secs_f64();
        Self {
            histories,
            labels,
            schema,
            stats,
            data,
            model: trained.model,
            log: trained.log,
            seconds,
            events: None,
        }
    }

    fn event_embeddings(&mut self) -> &[Vec<Vec<f64>>] {
        if self.events.is_none() {
            self.events = Some(event_embeddings(&self.model, &self.data).unwrap());
        }
        self.events.as_deref().unwrap()
    }
}

#[derive(Default)]
pub struct Shared {
    corpus: Option<Corpus>,
}

impl Shared {
    fn corpus(&mut self) -> &mut Corpus {
        self.corpus.get_or_insert_with(Corpus::build)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Entity indices of the train and test sides.
fn split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let idx: Vec<usize> = (0..n).collect();
    split_entities(&idx, TEST_FRACTION, seed).unwrap()
}

fn rows(x: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| x[i].clone()).collect()
}

fn archetype_accuracy(x: &[Vec<f64>], labels: &SynthLabels, seed: u64) -> f64 {
    let y: Vec<f64> = labels.entities.iter().map(|l| l.archetype as f64).collect();
    let (train, test) = split(x.len(), seed);
    let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let (head, _) = train_head(
        &rows(x, &train),
        &ty,
        &HeadConfig::desk(TaskKind::Multiclass),
        seed,
    )
    .unwrap();
    let pred = head.predict_classes(&rows(x, &test)).unwrap();
    let truth: Vec<usize> = test.iter().map(|&i| labels.entities[i].archetype).collect();
    accuracy(&pred, &truth).unwrap()
}

fn churn_auc(x: &[Vec<f64>], labels: &SynthLabels, seed: u64) -> f64 {
    let y: Vec<f64> = labels
        .entities
        .iter()
        .map(|l| f64::from(u8::from(l.churned)))
        .collect();
    let (train, test) = split(x.len(), seed);
    let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let (head, _) = train_head(
        &rows(x, &train),
        &ty,
        &HeadConfig::desk(TaskKind::Binary),
        seed,
    )
    .unwrap();
    let scores = head.predict_scores(&rows(x, &test)).unwrap();
    let truth: Vec<bool> = test.iter().map(|&i| labels.entities[i].churned).collect();
    auc(&scores, &truth).unwrap()
}

pub fn training_sanity(shared: &mut Shared) -> Outcome {
    let c = shared.corpus();
    let initial = c.log.initial_train_loss;
    let last = c.log.final_train_loss();
    let ratio = last / initial;
    // rerun the first two epochs: the loss trajectory must repeat bit for bit
    let layout = FeatureLayout::new(&c.schema, &c.stats);
    let short = NpprConfig {
        max_epochs: 2,
        ..NpprConfig::default()
    };
    let again = pretrain(&c.data, &layout, &EncoderConfig::desk(), &short).unwrap();
    let deterministic =
        again.log.initial_train_loss == initial && again.log.epochs[..] == c.log.epochs[..2];
    let n_events: usize = c.histories.iter().map(|h| h.len()).sum();
    Outcome::new(
        ratio <= 0.5 && deterministic && c.seconds < 900.0,
        format!(
            "{} entities, {n_events} events: loss {initial:.4} -> {last:.4} after {} epochs (ratio {ratio:.3} <= 0.5), \
             {:.0} s single-threaded (< 900 s), rerun of epochs 1-2 bit-identical: {deterministic}",
            c.histories.len(),
            c.log.epochs.len(),
            c.seconds
        ),
    )
}

pub fn downstream_signal(shared: &mut Shared) -> Outcome {
    let c = shared.corpus();
    let oracle =
        archetype_oracle_accuracy(&c.histories, &c.labels, &c.schema, TEST_FRACTION, 0).unwrap();
    let x = entity_embeddings(&c.model, &c.data, PoolingStrategy::Average).unwrap();
    let acc = archetype_accuracy(&x, &c.labels, 0);
    let churn = churn_auc(&x, &c.labels, 0);
    Outcome::new(
        oracle >= 0.95 && acc >= 0.90 && churn >= 0.85,
        format!(
            "averaged embeddings: archetype accuracy {acc:.4} (>= 0.90), churn AUC {churn:.4} (>= 0.85); \
             naive Bayes oracle {oracle:.4} (>= 0.95)"
        ),
    )
}

pub fn pooling_direction(shared: &mut Shared) -> Outcome {
    let c = shared.corpus();
    let avg = entity_embeddings(&c.model, &c.data, PoolingStrategy::Average).unwrap();
    let last = entity_embeddings(&c.model, &c.data, PoolingStrategy::LastEvent).unwrap();
    let a: Vec<f64> = SEEDS
        .iter()
        .map(|&s| archetype_accuracy(&avg, &c.labels, s))
        .collect();
    let l: Vec<f64> = SEEDS
        .iter()
        .map(|&s| archetype_accuracy(&last, &c.labels, s))
        .collect();
    let (ma, ml) = (median(a.clone()), median(l.clone()));
    Outcome::new(
        ma >= ml,
        format!("archetype accuracy over seeds {SEEDS:?}: average {a:.4?} (median {ma:.4}), last {l:.4?} (median {ml:.4})"),
    )
}

/// Windowed hand features of every event of `entities`, optionally with the
/// event embedding appended, restricted to the events `keep` accepts.
fn event_rows(
    c: &Corpus,
    events: &[Vec<Vec<f64>>],
    top: &TopValues,
    entities: &[usize],
    mut keep: impl FnMut(usize, usize) -> bool,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<(bool, f64)>) {
    let (mut base, mut both, mut target) = (Vec::new(), Vec::new(), Vec::new());
    for chunk in entities.chunks(64) {
        let hs: Vec<EntityHistory> = chunk.iter().map(|&i| c.histories[i].clone()).collect();
        let table = windowed_feature_table(&hs, &c.schema, top, &DEFAULT_WINDOWS_DAYS).unwrap();
        let mut r = 0;
        for &i in chunk {
            for t in 0..c.histories[i].len() {
                if keep(i, t) {
                    let label = c.labels.events[i][t];
                    let mut row = table.rows[r].clone();
                    base.push(row.clone());
                    row.extend_from_slice(&events[i][t]);
                    both.push(row);
                    target.push((label.fraud, label.value));
                }
                r += 1;
            }
        }
    }
    (base, both, target)
}

pub fn fraud_value_direction(shared: &mut Shared) -> Outcome {
    let c = shared.corpus();
    let events = c.event_embeddings().to_vec();
    let c = shared.corpus();
    let cfg = HeadConfig::desk(TaskKind::Binary);
    let (mut base_vdr, mut both_vdr) = (Vec::new(), Vec::new());
    for &seed in &SEEDS {
        let (train, test) = split(c.histories.len(), seed);
        let train_h: Vec<EntityHistory> = train.iter().map(|&i| c.histories[i].clone()).collect();
        let top = TopValues::fit(&train_h, &c.schema, DEFAULT_TOP_N);
        drop(train_h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf4a0d);
        let (xb, xe, yt) = event_rows(c, &events, &top, &train, |i, t| {
            let u: f64 = rng.random();
            c.labels.events[i][t].fraud || u < KEEP_GENUINE
        });
        let y: Vec<f64> = yt.iter().map(|&(f, _)| f64::from(u8::from(f))).collect();
        let (head_b, _) = train_head(&xb, &y, &cfg, seed).unwrap();
        let (head_e, _) = train_head(&xe, &y, &cfg, seed).unwrap();
        drop((xb, xe));
        let (tb, te, tt) = event_rows(c, &events, &top, &test, |_, _| true);
        for (head, x, out) in [(&head_b, &tb, &mut base_vdr), (&head_e, &te, &mut both_vdr)] {
            let scores = head.predict_scores(x).unwrap();
            let tx: Vec<ScoredTransaction> = scores
                .iter()
                .zip(&tt)
                .map(|(&score, &(fraud, value))| ScoredTransaction {
                    score,
                    fraud,
                    value,
                })
                .collect();
            out.push(vdr_curve(&tx, &[FP_RATIO]).unwrap()[0].vdr);
        }
    }
    let (mb, me) = (median(base_vdr.clone()), median(both_vdr.clone()));
    Outcome::new(
        me >= mb,
        format!(
            "VDR at {FP_RATIO}:1 over seeds {SEEDS:?}: features {base_vdr:.4?} (median {mb:.4}), \
             features + embeddings {both_vdr:.4?} (median {me:.4})"
        ),
    )
}

pub fn category_structure(shared: &mut Shared) -> Outcome {
    let c = shared.corpus();
    let cats: Vec<_> = category_embeddings(
        &c.model,
        &c.data,
        &c.stats.vocabularies,
        "mcc",
        DEFAULT_MIN_SUPPORT,
    )
    .unwrap()
    .into_iter()
    .filter(|e| !e.below_min_support && e.value != OOV_LABEL)
    .collect();
    let arch: &BTreeMap<String, usize> = &c.labels.category_archetype;
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..cats.len() {
        for j in i + 1..cats.len() {
            let d = cosine_distance(&cats[i].vector, &cats[j].vector).unwrap();
            let acc = if arch[&cats[i].value] == arch[&cats[j].value] {
                &mut intra
            } else {
                &mut inter
            };
            acc.0 += d;
            acc.1 += 1;
        }
    }
    let (mi, mx) = (intra.0 / intra.1 as f64, inter.0 / inter.1 as f64);
    // neighbours against a full sort of every other value
    let k = 5;
    let mut mismatches = 0;
    for q in &cats {
        let mut all: Vec<(f64, &str)> = cats
            .iter()
            .filter(|o| o.value != q.value)
            .map(|o| {
                (
                    cosine_distance(&q.vector, &o.vector).unwrap(),
                    o.value.as_str(),
                )
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        let got = nearest_neighbours(&cats, &q.value, k).unwrap();
        let same = got.len() == k.min(all.len())
            && got
                .iter()
                .zip(&all)
                .all(|(n, (d, v))| n.value == *v && n.distance == *d);
        mismatches += usize::from(!same);
    }
    Outcome::new(
        mi < mx && mismatches == 0,
        format!(
            "{} categories: mean intra-archetype distance {mi:.6} < inter {mx:.6}; \
             neighbour lists differing from the full sort: {mismatches}",
            cats.len()
        ),
    )
}
