//! The training loop: supervised warm-up, then K rounds of offline
//! annotation, prior re-estimation and weighted parser updates, plus
//! generator retraining on flipped annotations.
//!
//! Every stage reads and writes a per-iteration artifact directory, so any
//! iteration can be re-run from the previous one's files.

mod config;

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation_store::{AnnotationRecord, AnnotationStore, StoreError};
use crate::data::{Corpus, Pair};
use crate::logic_prior::{PriorError, PriorTable};
use crate::logical_forms::{
    apply_prompt, parse_triples, Direction, FormKind, LogicalForm, Part, SUBJECT_TAG,
};
use crate::metrics::{exact_match_accuracy, triple_f1};
use crate::models::{ModelError, Optimizer, Role, Seq2Seq, Vocabulary};
use crate::reward::{clipped_weight, importance_ratio, normalize, raw_value, RewardMode};

pub use config::{IterationConfig, Method};

pub const INITIAL_CHECKPOINT: &str = "initial.ckpt";
pub const PARSER_CHECKPOINT: &str = "parser.ckpt";
pub const GENERATOR_CHECKPOINT: &str = "generator.ckpt";
pub const PRIOR_FILE: &str = "prior.tsv";
pub const METRICS_FILE: &str = "metrics.jsonl";

const WARMUP_STREAM: u64 = 1;
const UPDATE_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;
const GENERATOR_STREAM: u64 = 4;
const PRETRAIN_STREAM: u64 = 5;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("supervised set is empty")]
    EmptySupervisedSet,
    #[error("unlabeled set is empty")]
    EmptyUnlabeledSet,
    #[error("parser and generator must start from the same checkpoint")]
    DifferentInitialization,
    #[error("generator must be frozen before annotation")]
    GeneratorNotFrozen,
    #[error("{what} has version {found}, iteration {iteration} expects {expected}")]
    VersionMismatch {
        what: &'static str,
        iteration: u32,
        expected: u32,
        found: u32,
    },
    #[error("no annotation records for iteration {0}")]
    MissingIteration(u32),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for TrainingError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownIteration(i) => TrainingError::MissingIteration(i),
            other => TrainingError::Store(other),
        }
    }
}

/// One validation measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: u32,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub step: usize,
}

pub fn parser_input(text: &str) -> String {
    apply_prompt(Direction::TextToStructure, text)
}

pub fn generator_input(linearized: &str) -> String {
    apply_prompt(Direction::StructureToText, linearized)
}

/// Mixes `parts` into `base` (splitmix64 finalizer per word).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Vocabulary covering prompts, texts and linearized forms of a corpus.
pub fn build_vocabulary(corpus: &Corpus, labeled: &[&[Pair]]) -> Vocabulary {
    let mut texts: Vec<String> = vec![
        Direction::TextToStructure.prompt().to_string(),
        Direction::StructureToText.prompt().to_string(),
    ];
    let pairs = corpus.supervised.iter().chain(labeled.iter().flat_map(|p| p.iter()));
    for p in pairs {
        texts.push(p.text.clone());
        texts.push(p.form.linearize());
    }
    texts.extend(corpus.unlabeled.iter().cloned());
    Vocabulary::build(texts.iter().map(String::as_str))
}

/// Part occurrences used to score a sampled string under the prior, and
/// whether the string failed to parse.
///
/// Unparseable triple strings are scored segment by segment: each `<S>`
/// segment that is a valid triple contributes its canonical part, anything
/// else an opaque part that no table contains. An unparseable S-expression
/// is one opaque part.
pub fn scoring_parts(z: &str, kind: FormKind) -> (Vec<Part>, bool) {
    if let Ok(form) = kind.parse(z) {
        return (form.part_occurrences(), false);
    }
    let opaque = |s: &str| Part::from_canonical(format!("({})", s.split_whitespace().collect::<Vec<_>>().join(" ")));
    let parts = match kind {
        FormKind::Sexpr => vec![opaque(z)],
        FormKind::Triples => {
            let mut segments: Vec<Vec<&str>> = Vec::new();
            for tok in z.split_whitespace() {
                if tok == SUBJECT_TAG || segments.is_empty() {
                    segments.push(Vec::new());
                }
                segments.last_mut().unwrap().push(tok);
            }
            segments
                .iter()
                .map(|seg| {
                    let text = seg.join(" ");
                    match parse_triples(&text) {
                        Ok(f) if f.part_occurrences().len() == 1 => f.part_occurrences().remove(0),
                        _ => opaque(&text),
                    }
                })
                .collect()
        }
    };
    (parts, true)
}

/// Raw value of sample `z` for input `x` under `mode`.
pub fn sample_value<M: Seq2Seq>(
    x: &str,
    z: &str,
    generator: &M,
    prior: &PriorTable,
    mode: RewardMode,
    kind: FormKind,
) -> Result<f64, TrainingError> {
    let log_px = if mode.uses_generator() {
        generator.logprob(&generator_input(z), x)
    } else {
        0.0
    };
    // A table with no observations (every sample of the previous pass was
    // malformed) carries no preference.
    let log_pz = if mode.uses_prior() && !prior.is_empty() {
        prior.logprob_parts(&scoring_parts(z, kind).0)?
    } else {
        0.0
    };
    Ok(raw_value(log_px, log_pz, mode))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Mean log q(gold | x).
    pub loglik: f64,
}

impl Evaluation {
    fn better_than(&self, other: &Evaluation) -> bool {
        match self.accuracy.total_cmp(&other.accuracy) {
            Ordering::Equal => self.loglik > other.loglik,
            o => o == Ordering::Greater,
        }
    }

    fn records(&self, iteration: u32, split: &str, step: usize) -> Vec<MetricRecord> {
        [
            ("exact_match", self.accuracy),
            ("f1", self.f1),
            ("precision", self.precision),
            ("recall", self.recall),
            ("loglik", self.loglik),
        ]
        .into_iter()
        .map(|(metric, value)| MetricRecord {
            iteration,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
            step,
        })
        .collect()
    }
}

/// Greedy-decodes every input and scores against the gold forms.
pub fn evaluate<M: Seq2Seq>(parser: &M, pairs: &[Pair], kind: FormKind) -> Evaluation {
    let preds: Vec<Option<LogicalForm>> = pairs
        .iter()
        .map(|p| parser.greedy(&parser_input(&p.text)).form(kind))
        .collect();
    let golds: Vec<LogicalForm> = pairs.iter().map(|p| p.form.clone()).collect();
    let accuracy = exact_match_accuracy(&preds, &golds).expect("equal lengths");
    let report = triple_f1(&preds, &golds).expect("equal lengths");
    let loglik = if pairs.is_empty() {
        0.0
    } else {
        pairs
            .iter()
            .map(|p| parser.logprob(&parser_input(&p.text), &p.form.linearize()))
            .sum::<f64>()
            / pairs.len() as f64
    };
    Evaluation {
        accuracy,
        f1: report.f1,
        precision: report.precision,
        recall: report.recall,
        loglik,
    }
}

/// Mean log p(target | condition).
fn mean_loglik<M: Seq2Seq>(model: &M, pairs: &[(String, String)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(c, t)| model.logprob(c, t)).sum::<f64>() / pairs.len() as f64
}

/// Maximum-likelihood fine-tuning with early stopping on `score`
/// (higher is better). Without a scorer, trains for the full epoch budget.
fn fit<M: Seq2Seq>(
    mut model: M,
    train: &[(String, String)],
    score: Option<&dyn Fn(&M) -> (f64, f64)>,
    cfg: &IterationConfig,
    seed: u64,
    label: &str,
    log: &mut Vec<MetricRecord>,
) -> Result<M, TrainingError> {
    let mut opt = Optimizer::new(cfg.optimizer, model.num_parameters());
    let lr = cfg.warmup_learning_rate();
    let mut best: Option<((f64, f64), M)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.warmup_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64]));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; model.num_parameters()];
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let (c, t) = &train[i];
                model.accumulate_gradient(c, t, &mut |_| w, &mut grad);
            }
            let delta = opt.delta(&grad, lr);
            model.apply_delta(&delta)?;
        }
        let Some(score) = score else { continue };
        let s = score(&model);
        for (metric, value) in [("exact_match", s.0), ("loglik", s.1)] {
            log.push(MetricRecord {
                iteration: 0,
                split: format!("validation_{label}"),
                metric: metric.to_string(),
                value,
                step: epoch + 1,
            });
        }
        let improved = match &best {
            None => true,
            Some((b, _)) => s.0 > b.0 || (s.0 == b.0 && s.1 > b.1),
        };
        if improved {
            best = Some((s, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(best.map(|(_, m)| m).unwrap_or(model))
}

pub struct WarmupOutput<M> {
    pub parser: M,
    pub generator: M,
    pub prior: PriorTable,
    pub metrics: Vec<MetricRecord>,
}

/// Supervised warm-up of parser and generator, then the gold part counts.
/// The returned generator is frozen; everything is at version 0.
pub fn warmup<M: Seq2Seq>(
    parser: M,
    generator: M,
    supervised: &[Pair],
    validation: &[Pair],
    cfg: &IterationConfig,
) -> Result<WarmupOutput<M>, TrainingError> {
    cfg.validate()?;
    if supervised.is_empty() {
        return Err(TrainingError::EmptySupervisedSet);
    }
    if parser.fingerprint() != generator.fingerprint() {
        return Err(TrainingError::DifferentInitialization);
    }
    let mut metrics = Vec::new();
    let kind = cfg.kind;

    let parser_train: Vec<(String, String)> = supervised
        .iter()
        .map(|p| (parser_input(&p.text), p.form.linearize()))
        .collect();
    let parser_score = |m: &M| {
        let e = evaluate(m, validation, kind);
        (e.accuracy, e.loglik)
    };
    let parser = fit(
        parser,
        &parser_train,
        (!validation.is_empty()).then_some(&parser_score as &dyn Fn(&M) -> (f64, f64)),
        cfg,
        derive_seed(cfg.seed, &[WARMUP_STREAM, 0]),
        "parser",
        &mut metrics,
    )?;

    let generator_train: Vec<(String, String)> = supervised
        .iter()
        .map(|p| (generator_input(&p.form.linearize()), p.text.clone()))
        .collect();
    let generator_val: Vec<(String, String)> = validation
        .iter()
        .map(|p| (generator_input(&p.form.linearize()), p.text.clone()))
        .collect();
    let generator_score = |m: &M| (0.0, mean_loglik(m, &generator_val));
    let generator = fit(
        generator,
        &generator_train,
        (!validation.is_empty()).then_some(&generator_score as &dyn Fn(&M) -> (f64, f64)),
        cfg,
        derive_seed(cfg.seed, &[WARMUP_STREAM, 1]),
        "generator",
        &mut metrics,
    )?
    .clone_frozen();

    let mut prior = PriorTable::new(cfg.tau)?;
    for p in supervised {
        prior.observe(&p.form);
    }
    let mut parser = parser;
    parser.set_version(0);
    let mut generator = generator;
    generator.set_version(0);
    Ok(WarmupOutput {
        parser,
        generator,
        prior,
        metrics,
    })
}

fn check_version(what: &'static str, iteration: u32, found: u32) -> Result<(), TrainingError> {
    let expected = iteration - 1;
    if found != expected {
        return Err(TrainingError::VersionMismatch {
            what,
            iteration,
            expected,
            found,
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn annotate_chunk<M: Seq2Seq>(
    parser: &M,
    generator: &M,
    prior: &PriorTable,
    inputs: &[String],
    start: usize,
    iteration: u32,
    worker: usize,
    store: &AnnotationStore,
    cfg: &IterationConfig,
) -> Result<PriorTable, TrainingError> {
    let mode = cfg.method.reward_mode();
    let params = cfg.sampling();
    let mut writer = store.shard_writer(iteration, worker)?;
    let mut counts = PriorTable::new(cfg.tau)?;
    for (k, x) in inputs.iter().enumerate() {
        let input_index = start + k;
        let prompt = parser_input(x);
        let samples = if cfg.method == Method::GreedySl {
            vec![parser.greedy(&prompt)]
        } else {
            let seed = derive_seed(cfg.seed, &[SAMPLE_STREAM, iteration as u64, input_index as u64]);
            parser.sample(&prompt, cfg.samples, &params, seed)?
        };
        for (sample_index, s) in samples.iter().enumerate() {
            let z = s.text();
            let form = s.form(cfg.kind);
            let v = sample_value(x, &z, generator, prior, mode, cfg.kind)?;
            writer.append(&AnnotationRecord {
                iteration,
                x: x.clone(),
                input_index,
                sample_index,
                z,
                v,
                logq_sampler: s.logq,
                malformed: form.is_none(),
            })?;
            if let Some(form) = form {
                counts.observe(&form);
            }
        }
    }
    writer.finish()?;
    Ok(counts)
}

/// Samples every unlabeled input with the previous parser, scores the
/// samples with the frozen generator and previous prior, writes the merged
/// records of `iteration` into `store`, and returns the new count table
/// (version `iteration`).
pub fn annotate_pass<M: Seq2Seq>(
    parser_prev: &M,
    generator: &M,
    prior_prev: &PriorTable,
    unlabeled: &[String],
    iteration: u32,
    store: &AnnotationStore,
    cfg: &IterationConfig,
) -> Result<PriorTable, TrainingError> {
    cfg.validate()?;
    if iteration == 0 {
        return Err(TrainingError::Config("annotation iterations start at 1".into()));
    }
    if unlabeled.is_empty() {
        return Err(TrainingError::EmptyUnlabeledSet);
    }
    if !generator.is_frozen() {
        return Err(TrainingError::GeneratorNotFrozen);
    }
    check_version("parser", iteration, parser_prev.version())?;
    check_version("prior", iteration, prior_prev.version())?;

    let chunk = unlabeled.len().div_ceil(cfg.workers);
    let results: Vec<Result<PriorTable, TrainingError>> = std::thread::scope(|s| {
        let handles: Vec<_> = unlabeled
            .chunks(chunk)
            .enumerate()
            .map(|(w, inputs)| {
                s.spawn(move || {
                    annotate_chunk(
                        parser_prev,
                        generator,
                        prior_prev,
                        inputs,
                        w * chunk,
                        iteration,
                        w,
                        store,
                        cfg,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("annotation worker panicked"))
            .collect()
    });
    let mut table = PriorTable::new(cfg.tau)?;
    for r in results {
        table.merge(&r?)?;
    }
    if cfg.carry_counts {
        table.merge(prior_prev)?;
    }
    store.merge(iteration)?;
    table.set_version(iteration);
    Ok(table)
}

enum Item {
    Silver {
        input: String,
        /// (z, advantage, logq under the sampler)
        samples: Vec<(String, f64, f64)>,
    },
    Gold {
        input: String,
        target: String,
    },
}

pub struct UpdateOutput<M> {
    pub parser: M,
    pub metrics: Vec<MetricRecord>,
    pub steps: usize,
}

/// Weight of one stored sample given its group advantage and the current
/// parser's score of it.
pub fn silver_weight(advantage: f64, logq_new: f64, logq_sampler: f64, cfg: &IterationConfig) -> f64 {
    if cfg.method.reward_mode() == RewardMode::Unit {
        return 1.0;
    }
    let r = importance_ratio(logq_new, logq_sampler, cfg.ratio_ceiling);
    clipped_weight(r, advantage, cfg.epsilon)
}

/// Advantages of one record group (all 1 in unit mode).
pub fn group_advantages(group: &[AnnotationRecord], cfg: &IterationConfig) -> Vec<f64> {
    if cfg.method.reward_mode() == RewardMode::Unit {
        return vec![1.0; group.len()];
    }
    let values: Vec<f64> = group.iter().map(|r| r.v).collect();
    normalize(&values, cfg.sigma_floor)
}

/// Weighted parser update from the stored records of `iteration` plus the
/// gold pairs, starting from `parser_prev` (version `iteration - 1`).
/// Keeps the best validation checkpoint seen during the pass.
pub fn parser_update<M: Seq2Seq>(
    parser_prev: &M,
    store: &AnnotationStore,
    iteration: u32,
    supervised: &[Pair],
    validation: &[Pair],
    cfg: &IterationConfig,
) -> Result<UpdateOutput<M>, TrainingError> {
    cfg.validate()?;
    if iteration == 0 {
        return Err(TrainingError::Config("update iterations start at 1".into()));
    }
    check_version("parser", iteration, parser_prev.version())?;
    let groups = store.groups(iteration)?;

    let mut items = Vec::new();
    for group in groups {
        let group: Vec<AnnotationRecord> = if cfg.filter_malformed {
            group.into_iter().filter(|r| !r.malformed).collect()
        } else {
            group
        };
        if group.is_empty() {
            continue;
        }
        let advantages = group_advantages(&group, cfg);
        items.push(Item::Silver {
            input: parser_input(&group[0].x),
            samples: group
                .into_iter()
                .zip(advantages)
                .map(|(r, a)| (r.z, a, r.logq_sampler))
                .collect(),
        });
    }
    for _ in 0..cfg.gold_repeats {
        for p in supervised {
            items.push(Item::Gold {
                input: parser_input(&p.text),
                target: p.form.linearize(),
            });
        }
    }

    let eval_every = cfg.eval_interval(items.len());
    let mut parser = parser_prev.clone();
    let mut opt = Optimizer::new(cfg.optimizer, parser.num_parameters());
    let mut metrics = Vec::new();
    let mut best: Option<(Evaluation, M)> = None;
    let mut consider = |parser: &M, step: usize, metrics: &mut Vec<MetricRecord>| {
        if validation.is_empty() {
            return;
        }
        let e = evaluate(parser, validation, cfg.kind);
        metrics.extend(e.records(iteration, "validation", step));
        if best.as_ref().is_none_or(|(b, _)| e.better_than(b)) {
            best = Some((e, parser.clone()));
        }
    };

    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs_per_iteration {
        let seed = derive_seed(cfg.seed, &[UPDATE_STREAM, iteration as u64, epoch as u64]);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; parser.num_parameters()];
            let b = batch.len() as f64;
            for &i in batch {
                match &items[i] {
                    Item::Silver { input, samples } => {
                        let scale = 1.0 / (b * samples.len() as f64);
                        for (z, a, logq_old) in samples {
                            parser.accumulate_gradient(
                                input,
                                z,
                                &mut |logq_new| scale * silver_weight(*a, logq_new, *logq_old, cfg),
                                &mut grad,
                            );
                        }
                    }
                    Item::Gold { input, target } => {
                        parser.accumulate_gradient(input, target, &mut |_| 1.0 / b, &mut grad);
                    }
                }
            }
            let delta = opt.delta(&grad, cfg.lr);
            parser.apply_delta(&delta)?;
            step += 1;
            if step % eval_every == 0 {
                consider(&parser, step, &mut metrics);
            }
        }
    }
    if step % eval_every != 0 || step == 0 {
        consider(&parser, step, &mut metrics);
    }
    let mut parser = best.map(|(_, m)| m).unwrap_or(parser);
    parser.set_version(iteration);
    Ok(UpdateOutput {
        parser,
        metrics,
        steps: step,
    })
}

/// Settings of the denoising pass that produces the initial checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Probability that an input token is dropped.
    pub drop_rate: f64,
    /// Probability that an input token is replaced by the unknown token.
    pub mask_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 3e-3,
            batch_size: 8,
            drop_rate: 0.1,
            mask_rate: 0.1,
            seed: 0,
        }
    }
}

/// Trains `model` to reconstruct each sequence from a corrupted copy of
/// itself (tokens dropped or masked at random). Sequences are unpaired:
/// raw text and linearized forms are reconstructed separately.
pub fn pretrain_denoising<M: Seq2Seq>(
    mut model: M,
    sequences: &[String],
    optimizer: crate::models::OptimizerKind,
    cfg: &PretrainConfig,
) -> Result<M, TrainingError> {
    use rand::Rng;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(TrainingError::Config("pretraining needs a positive batch size and lr".into()));
    }
    let mut opt = Optimizer::new(optimizer, model.num_parameters());
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[PRETRAIN_STREAM, epoch as u64]));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; model.num_parameters()];
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let target = &sequences[i];
                let mut noisy: Vec<&str> = Vec::new();
                for t in target.split_whitespace() {
                    if rng.gen_bool(cfg.drop_rate) {
                        continue;
                    }
                    noisy.push(if rng.gen_bool(cfg.mask_rate) { crate::models::UNK_TOKEN } else { t });
                }
                model.accumulate_gradient(&noisy.join(" "), target, &mut |_| w, &mut grad);
            }
            let delta = opt.delta(&grad, cfg.lr);
            model.apply_delta(&delta)?;
        }
    }
    Ok(model)
}

/// Raw sequences for denoising pretraining: every text and every gold
/// linearized form, each on its own.
pub fn pretraining_sequences(corpus: &Corpus) -> Vec<String> {
    corpus
        .unlabeled
        .iter()
        .cloned()
        .chain(corpus.supervised.iter().map(|p| p.text.clone()))
        .chain(corpus.supervised.iter().map(|p| p.form.linearize()))
        .collect()
}

/// Swaps the two sides of every pair; its own inverse.
pub fn flip(pairs: &[(String, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect()
}

/// Trains a fresh, unfrozen generator from the initial checkpoint on the
/// final parser's greedy annotations of the unlabeled text, flipped into
/// (structure, text) pairs, together with the flipped gold pairs.
/// Unparseable annotations are skipped.
pub fn train_generator_from_annotations<M: Seq2Seq>(
    final_parser: &M,
    initial: &M,
    unlabeled: &[String],
    supervised: &[Pair],
    validation: &[Pair],
    cfg: &IterationConfig,
) -> Result<M, TrainingError> {
    cfg.validate()?;
    let mut annotations: Vec<(String, String)> = unlabeled
        .iter()
        .filter_map(|x| {
            final_parser
                .greedy(&parser_input(x))
                .form(cfg.kind)
                .map(|f| (x.clone(), f.linearize()))
        })
        .collect();
    annotations.extend(supervised.iter().map(|p| (p.text.clone(), p.form.linearize())));
    let train: Vec<(String, String)> = flip(&annotations)
        .into_iter()
        .map(|(z, x)| (generator_input(&z), x))
        .collect();
    let val: Vec<(String, String)> = validation
        .iter()
        .map(|p| (generator_input(&p.form.linearize()), p.text.clone()))
        .collect();
    let score = |m: &M| (0.0, mean_loglik(m, &val));
    let mut log = Vec::new();
    let mut generator = fit(
        initial.with_role(Role::Generator),
        &train,
        (!val.is_empty()).then_some(&score as &dyn Fn(&M) -> (f64, f64)),
        cfg,
        derive_seed(cfg.seed, &[GENERATOR_STREAM]),
        "generator",
        &mut log,
    )?;
    generator.set_version(cfg.iterations);
    Ok(generator)
}

/// File layout of a run: `initial.ckpt` at the root, and one `iter-<i>`
/// directory per iteration (0 = warm-up, which also holds the generator).
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn initial(&self) -> PathBuf {
        self.root.join(INITIAL_CHECKPOINT)
    }

    pub fn iteration_dir(&self, iteration: u32) -> PathBuf {
        self.root.join(format!("iter-{iteration}"))
    }

    pub fn parser(&self, iteration: u32) -> PathBuf {
        self.iteration_dir(iteration).join(PARSER_CHECKPOINT)
    }

    pub fn generator(&self) -> PathBuf {
        self.iteration_dir(0).join(GENERATOR_CHECKPOINT)
    }

    pub fn prior(&self, iteration: u32) -> PathBuf {
        self.iteration_dir(iteration).join(PRIOR_FILE)
    }

    pub fn metrics(&self, iteration: u32) -> PathBuf {
        self.iteration_dir(iteration).join(METRICS_FILE)
    }

    pub fn store(&self, iteration: u32) -> Result<AnnotationStore, TrainingError> {
        Ok(AnnotationStore::open(self.iteration_dir(iteration))?)
    }

    fn ensure_dir(&self, iteration: u32) -> Result<(), TrainingError> {
        let dir = self.iteration_dir(iteration);
        std::fs::create_dir_all(&dir).map_err(|source| TrainingError::Io { path: dir, source })
    }

    fn require(path: PathBuf) -> Result<PathBuf, TrainingError> {
        if path.exists() {
            Ok(path)
        } else {
            Err(TrainingError::MissingArtifact(path))
        }
    }

    pub fn load_model<M: Seq2Seq>(&self, path: PathBuf) -> Result<M, TrainingError> {
        Ok(M::load(&Self::require(path)?)?)
    }

    pub fn load_prior(&self, iteration: u32) -> Result<PriorTable, TrainingError> {
        Ok(PriorTable::load(&Self::require(self.prior(iteration))?)?)
    }

    pub fn load_metrics(&self, iteration: u32) -> Result<Vec<MetricRecord>, TrainingError> {
        let path = Self::require(self.metrics(iteration))?;
        let text = std::fs::read_to_string(&path).map_err(|source| TrainingError::Io {
            path: path.clone(),
            source,
        })?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| TrainingError::Io {
                    path: path.clone(),
                    source: e.into(),
                })
            })
            .collect()
    }

    /// Reads back what [`warmup_stage`] wrote.
    pub fn load_warmup<M: Seq2Seq>(&self) -> Result<WarmupOutput<M>, TrainingError> {
        Ok(WarmupOutput {
            parser: self.load_model(self.parser(0))?,
            generator: self.load_model(self.generator())?,
            prior: self.load_prior(0)?,
            metrics: self.load_metrics(0)?,
        })
    }

    /// Copies the initial checkpoint and the warm-up directory into `dest`,
    /// so several runs can continue from one warm-up.
    pub fn copy_warmup_to(&self, dest: &Artifacts) -> Result<(), TrainingError> {
        dest.ensure_dir(0)?;
        let mut files = vec![(self.initial(), dest.initial())];
        for name in [PARSER_CHECKPOINT, GENERATOR_CHECKPOINT, PRIOR_FILE, METRICS_FILE] {
            files.push((self.iteration_dir(0).join(name), dest.iteration_dir(0).join(name)));
        }
        for (from, to) in files {
            let from = Self::require(from)?;
            std::fs::copy(&from, &to).map_err(|source| TrainingError::Io { path: to, source })?;
        }
        Ok(())
    }
}

fn write_metrics(path: &Path, records: &[MetricRecord]) -> Result<(), TrainingError> {
    let io = |source| TrainingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Warm-up from the initial checkpoint; writes `initial.ckpt` and
/// `iter-0/{parser.ckpt, generator.ckpt, prior.tsv, metrics.jsonl}`.
pub fn warmup_stage<M: Seq2Seq>(
    initial: &M,
    corpus: &Corpus,
    validation: &[Pair],
    cfg: &IterationConfig,
    artifacts: &Artifacts,
) -> Result<WarmupOutput<M>, TrainingError> {
    artifacts.ensure_dir(0)?;
    initial.save(&artifacts.initial())?;
    let out = warmup(
        initial.with_role(Role::Parser),
        initial.with_role(Role::Generator),
        &corpus.supervised,
        validation,
        cfg,
    )?;
    out.parser.save(&artifacts.parser(0))?;
    out.generator.save(&artifacts.generator())?;
    out.prior.save(&artifacts.prior(0))?;
    write_metrics(&artifacts.metrics(0), &out.metrics)?;
    Ok(out)
}

/// Offline annotation of iteration `i` from the files of iteration `i - 1`;
/// writes the merged records and `iter-<i>/prior.tsv`.
pub fn annotate_stage<M: Seq2Seq>(
    iteration: u32,
    corpus: &Corpus,
    cfg: &IterationConfig,
    artifacts: &Artifacts,
) -> Result<PriorTable, TrainingError> {
    if iteration == 0 {
        return Err(TrainingError::Config("annotation iterations start at 1".into()));
    }
    let parser: M = artifacts.load_model(artifacts.parser(iteration - 1))?;
    let generator: M = artifacts.load_model(artifacts.generator())?;
    let prior = artifacts.load_prior(iteration - 1)?;
    artifacts.ensure_dir(iteration)?;
    let store = artifacts.store(iteration)?;
    let table = annotate_pass(&parser, &generator, &prior, &corpus.unlabeled, iteration, &store, cfg)?;
    table.save(&artifacts.prior(iteration))?;
    Ok(table)
}

/// Parser update of iteration `i` from the stored records and the parser of
/// iteration `i - 1`; writes `iter-<i>/{parser.ckpt, metrics.jsonl}`.
pub fn update_stage<M: Seq2Seq>(
    iteration: u32,
    corpus: &Corpus,
    validation: &[Pair],
    cfg: &IterationConfig,
    artifacts: &Artifacts,
) -> Result<UpdateOutput<M>, TrainingError> {
    if iteration == 0 {
        return Err(TrainingError::Config("update iterations start at 1".into()));
    }
    let parser: M = artifacts.load_model(artifacts.parser(iteration - 1))?;
    let store = artifacts.store(iteration)?;
    let out = parser_update(&parser, &store, iteration, &corpus.supervised, validation, cfg)?;
    out.parser.save(&artifacts.parser(iteration))?;
    write_metrics(&artifacts.metrics(iteration), &out.metrics)?;
    Ok(out)
}

pub struct RunOutput<M> {
    pub parser: M,
    pub generator: M,
    pub prior: PriorTable,
    /// Generator fingerprint observed at the start of each iteration.
    pub generator_fingerprints: Vec<String>,
}

/// The full procedure: warm-up, then K annotate/update rounds (none for
/// the gold-only method). Returns the last iteration's artifacts.
pub fn run<M: Seq2Seq>(
    initial: &M,
    corpus: &Corpus,
    validation: &[Pair],
    cfg: &IterationConfig,
    artifacts: &Artifacts,
) -> Result<RunOutput<M>, TrainingError> {
    cfg.validate()?;
    let warm = warmup_stage(initial, corpus, validation, cfg, artifacts)?;
    run_from_warmup(warm, corpus, validation, cfg, artifacts)
}

/// Continues a run whose warm-up artifacts already exist in `artifacts`.
pub fn run_from_warmup<M: Seq2Seq>(
    warm: WarmupOutput<M>,
    corpus: &Corpus,
    validation: &[Pair],
    cfg: &IterationConfig,
    artifacts: &Artifacts,
) -> Result<RunOutput<M>, TrainingError> {
    let mut parser = warm.parser;
    let mut prior = warm.prior;
    let generator = warm.generator;
    let mut generator_fingerprints = Vec::new();
    if cfg.method.is_semi_supervised() {
        for i in 1..=cfg.iterations {
            let g: M = artifacts.load_model(artifacts.generator())?;
            generator_fingerprints.push(g.fingerprint());
            prior = annotate_stage::<M>(i, corpus, cfg, artifacts)?;
            parser = update_stage::<M>(i, corpus, validation, cfg, artifacts)?.parser;
        }
    }
    Ok(RunOutput {
        parser,
        generator,
        prior,
        generator_fingerprints,
    })
}
