//! Pair mining and seeded, single-threaded reranker training with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::context::extract_context_window;
use super::loss::{accumulate_infonce, infonce_loss_ids, PairIds};
use super::model::{DualEncoderModel, Params, ScoringConfig, SubtokenVocab};
use crate::candidates::{generate_candidates, CandidateSource};
use crate::ident::{split_subtokens, Identifier};
use crate::miner::MaskedExample;
use crate::schedule::{LrSchedule, ScheduleKind};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub example_id: String,
    pub context: Vec<String>,
    pub positive: Identifier,
    pub negatives: Vec<Identifier>,
    /// Set when every candidate was the gold name.
    pub no_negatives: bool,
}

impl TrainingPair {
    pub fn new(
        example_id: impl Into<String>,
        context: Vec<String>,
        positive: Identifier,
        candidates: impl IntoIterator<Item = Identifier>,
    ) -> Self {
        let gold = positive.as_str().to_ascii_lowercase();
        let mut negatives: Vec<Identifier> = Vec::new();
        for c in candidates {
            if c.as_str().to_ascii_lowercase() != gold && !negatives.contains(&c) {
                negatives.push(c);
            }
        }
        TrainingPair {
            example_id: example_id.into(),
            context,
            no_negatives: negatives.is_empty(),
            positive,
            negatives,
        }
    }

    pub fn ids(&self, vocab: &SubtokenVocab) -> PairIds {
        PairIds {
            context: vocab.ids(&self.context),
            positive: vocab.name_ids(&self.positive),
            negatives: self.negatives.iter().map(|n| vocab.name_ids(n)).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMiningReport {
    pub examples: usize,
    pub pairs: usize,
    pub source_errors: usize,
    pub empty_candidate_lists: usize,
    pub unusable_examples: usize,
    pub zero_negative_pairs: usize,
}

/// One pair per example with a non-empty candidate list: gold is the
/// positive, the other candidates (case-insensitively distinct) the negatives.
pub fn mine_training_pairs(
    examples: &[MaskedExample],
    source: &dyn CandidateSource,
    k: usize,
    window: usize,
) -> (Vec<TrainingPair>, PairMiningReport) {
    let mut report = PairMiningReport {
        examples: examples.len(),
        ..Default::default()
    };
    let mut pairs = Vec::new();
    for ex in examples {
        let (Some(gold), Some(ctx)) = (
            ex.gold().and_then(|g| Identifier::new(g).ok()),
            extract_context_window(ex, window),
        ) else {
            report.unusable_examples += 1;
            continue;
        };
        let list = match generate_candidates(source, ex, k) {
            Ok(list) => list,
            Err(e) => {
                log::warn!("no candidates for {}: {e}", ex.id);
                report.source_errors += 1;
                continue;
            }
        };
        if list.candidates.is_empty() {
            report.empty_candidate_lists += 1;
            continue;
        }
        let pair = TrainingPair::new(
            ex.id.clone(),
            ctx.tokens(),
            gold,
            list.candidates.into_iter().map(|c| c.name),
        );
        if pair.no_negatives {
            report.zero_negative_pairs += 1;
        }
        pairs.push(pair);
    }
    report.pairs = pairs.len();
    (pairs, report)
}

pub fn infonce_loss(model: &DualEncoderModel, pair: &TrainingPair) -> (f64, Params) {
    infonce_loss_ids(model, &pair.ids(&model.vocab))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub schedule: ScheduleKind,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Adds the other positives of a batch as extra negatives.
    #[serde(default)]
    pub in_batch_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            peak_lr: 5e-3,
            warmup_steps: 200,
            schedule: ScheduleKind::WarmupCosine,
            dropout_rate: 0.1,
            seed: 42,
            in_batch_negatives: false,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            kind: self.schedule,
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.steps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if self.warmup_steps > self.steps {
            return bad("warmup_steps must not exceed steps");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        Ok(())
    }
}

pub fn lr_at_step(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.schedule().lr_at(step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub min_count: usize,
    pub max_vocab: Option<usize>,
    pub scoring: ScoringConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            min_count: 1,
            max_vocab: Some(50_000),
            scoring: ScoringConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training pairs")]
    NoPairs,
    #[error("loss diverged at step {step} (last finite loss {last_loss:?} at step {last_good_step})")]
    Divergence {
        step: usize,
        last_good_step: usize,
        last_loss: Option<f64>,
    },
}

/// Vocabulary over context tokens and the subtokens of every pair name.
pub fn build_vocab(pairs: &[TrainingPair], cfg: &ModelConfig) -> SubtokenVocab {
    let name_streams: Vec<Vec<String>> = pairs
        .iter()
        .flat_map(|p| std::iter::once(&p.positive).chain(&p.negatives))
        .map(split_subtokens)
        .collect();
    let streams = pairs
        .iter()
        .map(|p| p.context.as_slice())
        .chain(name_streams.iter().map(Vec::as_slice));
    SubtokenVocab::build(streams, cfg.min_count, cfg.max_vocab)
}

/// Seeded uniform initialization with the starting temperature.
pub fn init_model(vocab: SubtokenVocab, cfg: &ModelConfig, seed: u64) -> DualEncoderModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DualEncoderModel::new_random(vocab, cfg.dim, &mut rng);
    model.scoring = cfg.scoring;
    model
}

struct Adam {
    m: Params,
    v: Params,
    beta1_t: f64,
    beta2_t: f64,
}

impl Adam {
    fn new(shape: &Params) -> Self {
        Adam {
            m: Params::zeros(shape.vocab_size, shape.dim),
            v: Params::zeros(shape.vocab_size, shape.dim),
            beta1_t: 1.0,
            beta2_t: 1.0,
        }
    }

    fn update(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.beta1_t *= ADAM_BETA1;
        self.beta2_t *= ADAM_BETA2;
        let c1 = 1.0 / (1.0 - self.beta1_t);
        let c2 = 1.0 / (1.0 - self.beta2_t);
        let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m * c1) / (libm::sqrt(*v * c2) + ADAM_EPS);
        };
        let [pa, pb, pc, pd] = params.slices_mut();
        let [ma, mb, mc, md] = self.m.slices_mut();
        let [va, vb, vc, vd] = self.v.slices_mut();
        let [ga, gb, gc, gd] = grads.slices();
        for (p, g, m, v) in [(pa, ga, ma, va), (pb, gb, mb, vb), (pc, gc, mc, vc), (pd, gd, md, vd)] {
            for i in 0..p.len() {
                step(&mut p[i], g[i], &mut m[i], &mut v[i]);
            }
        }
        step(&mut params.log_tau, grads.log_tau, &mut self.m.log_tau, &mut self.v.log_tau);
    }
}

fn drop_tokens(ids: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rate <= 0.0 {
        return ids.to_vec();
    }
    let kept: Vec<usize> = ids.iter().copied().filter(|_| rng.gen::<f64>() >= rate).collect();
    if kept.is_empty() {
        vec![ids[rng.gen_range(0..ids.len())]]
    } else {
        kept
    }
}

/// Continues training `model` on `pairs`. Deterministic for a given seed.
pub fn train_model(
    mut model: DualEncoderModel,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<(DualEncoderModel, Vec<TrainStep>), TrainError> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok((model, Vec::new()));
    }
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let ids: Vec<PairIds> = pairs.iter().map(|p| p.ids(&model.vocab)).collect();
    let folded: Vec<String> = pairs
        .iter()
        .map(|p| p.positive.as_str().to_ascii_lowercase())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let schedule = cfg.schedule();
    let mut adam = Adam::new(&model.params);
    let mut grads = Params::zeros(model.params.vocab_size, model.dim());
    let mut log = Vec::with_capacity(cfg.steps);
    let mut last_loss = None;

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        grads.fill_zero();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in &batch {
            let mut pair = PairIds {
                context: drop_tokens(&ids[i].context, cfg.dropout_rate, &mut rng),
                positive: ids[i].positive.clone(),
                negatives: ids[i].negatives.clone(),
            };
            if cfg.in_batch_negatives {
                for &j in &batch {
                    if folded[j] != folded[i] && !pairs[i].negatives.contains(&pairs[j].positive) {
                        pair.negatives.push(ids[j].positive.clone());
                    }
                }
            }
            loss += scale * accumulate_infonce(&model, &pair, scale, &mut grads);
        }
        if !loss.is_finite() {
            return Err(TrainError::Divergence {
                step,
                last_good_step: step - 1,
                last_loss,
            });
        }
        let lr = schedule.lr_at(step);
        adam.update(&mut model.params, &grads, lr);
        last_loss = Some(loss);
        log.push(TrainStep { step, lr, loss });
    }
    Ok((model, log))
}

/// Builds a vocabulary from the pairs, initializes, and trains.
pub fn train_reranker(
    pairs: &[TrainingPair],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(DualEncoderModel, Vec<TrainStep>), TrainError> {
    cfg.validate()?;
    if pairs.is_empty() && cfg.steps > 0 {
        return Err(TrainError::NoPairs);
    }
    let model = init_model(build_vocab(pairs, model_cfg), model_cfg, cfg.seed);
    train_model(model, pairs, cfg)
}
