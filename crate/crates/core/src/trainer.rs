//! Mini-batch training with Adam, gradient clipping and early stopping on
//! validation sketch perplexity.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{build_vocabulary, DialogueExample, Vocabulary};
use crate::embeddings::PretrainedVectors;
use crate::error::{Error, Result};
use crate::eval::corpus_perplexity_prepared;
use crate::model::decoder::teacher_forced_nll;
use crate::model::pointer::pointer_losses;
use crate::model::{Dropout, ModelConfig, PreparedExample, SketchModel};
use crate::numeric::{batch_gradients, AdamConfig, Graph, OptimizerState, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optimizer steps after which training stops regardless of epochs.
    pub max_steps: Option<usize>,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub lambda_global: f64,
    pub lambda_local: f64,
    pub clip_norm: f64,
    /// Conversation turns fed to the encoder.
    pub max_turns: Option<usize>,
    /// Minimum training-set frequency for a word to enter the vocabulary.
    pub min_count: usize,
    /// Parallel gradient chunks per batch; part of the reduction order, so
    /// it affects results at the rounding level.
    pub chunks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 50,
            max_steps: None,
            patience: 3,
            seed: 0,
            lambda_global: 1.0,
            lambda_local: 1.0,
            clip_norm: 5.0,
            max_turns: Some(10),
            min_count: 1,
            chunks: 4,
        }
    }
}

/// Loss of a batch split into its parts; `total` is the weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub sketch_nll: f64,
    pub pointer_global: f64,
    pub pointer_local: f64,
    /// Sketch target tokens, EOS included.
    pub tokens: usize,
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.sketch_nll += o.sketch_nll;
        self.pointer_global += o.pointer_global;
        self.pointer_local += o.pointer_local;
        self.tokens += o.tokens;
    }
}

/// Differentiable loss of one example: sketch NLL plus the weighted
/// pointer losses. Pointer terms are absent when the example has no
/// persona rare words.
pub fn example_loss(
    g: &mut Graph<'_>,
    model: &SketchModel,
    ex: &PreparedExample,
    lambda_global: f64,
    lambda_local: f64,
    dropout: &mut Dropout,
) -> Result<(Var, LossBreakdown)> {
    let ctx = model.encode_context(g, &ex.history, &ex.traits, &ex.bank, dropout)?;
    let seq = teacher_forced_nll(g, model, &ex.targets, ctx.init, &ctx.enc, dropout)?;
    let mut parts = LossBreakdown {
        sketch_nll: g.scalar(seq.total),
        tokens: ex.targets.len(),
        ..Default::default()
    };
    let mut terms = vec![seq.total];
    if let Some((lg, ll)) = pointer_losses(g, model, ex, &ctx, &seq.steps)? {
        parts.pointer_global = g.scalar(lg);
        parts.pointer_local = g.scalar(ll);
        terms.push(g.scale(lg, lambda_global));
        terms.push(g.scale(ll, lambda_local));
    }
    let total = g.sum_all(&terms)?;
    parts.total = g.scalar(total);
    Ok((total, parts))
}

/// Summed loss over `batch` without dropout.
pub fn compute_loss(model: &SketchModel, batch: &[DialogueExample], config: &TrainConfig) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    let mut sum = LossBreakdown::default();
    for ex in batch {
        let prep = model.prepare(ex, config.max_turns);
        let mut g = Graph::new(&model.store);
        let (_, parts) = example_loss(&mut g, model, &prep, config.lambda_global, config.lambda_local, &mut Dropout::inference())?;
        sum += parts;
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    /// Perplexity of the dropout-perturbed training sketches seen this
    /// epoch.
    pub train_ppl: f64,
    pub val_ppl: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Written after every improvement.
    pub checkpoint_path: Option<PathBuf>,
    /// One JSON object per epoch.
    pub metrics_path: Option<PathBuf>,
    pub vocab: Option<Vocabulary>,
    pub pretrained: Option<PretrainedVectors>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best validation perplexity.
    pub model: SketchModel,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
    /// Mean per-example loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub best_val_ppl: f64,
}

/// Batches of indices: seeded shuffle, then pools of 50 batches sorted by
/// history length and cut into batches, then a shuffle of batch order.
fn bucketed_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for pool in order.chunks(batch_size * 50) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| lengths[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// Trains a fresh model on `train` and early-stops on `validation`.
pub fn train(
    train: &[DialogueExample],
    validation: &[DialogueExample],
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::EmptyDataset("validation split is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let start = Instant::now();
    let vocab = match &options.vocab {
        Some(v) => v.clone(),
        None => build_vocabulary(train, config.min_count)?,
    };
    let mut model = SketchModel::new(config.model.clone(), vocab, config.seed, options.pretrained.as_ref())?;
    let prep_train: Vec<PreparedExample> = train.iter().map(|ex| model.prepare(ex, config.max_turns)).collect();
    let prep_val: Vec<PreparedExample> = validation.iter().map(|ex| model.prepare(ex, config.max_turns)).collect();
    let lengths: Vec<usize> = prep_train.iter().map(|p| p.history.len()).collect();

    let mut opt = OptimizerState::new(&model.store, AdamConfig { lr: config.lr, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut metrics_file = match &options.metrics_path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut since_best = 0;
    let mut step = 0usize;
    let max_steps = config.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 1..=config.max_epochs {
        let (mut epoch_loss, mut epoch_nll, mut epoch_tokens) = (0.0, 0.0, 0usize);
        for batch in bucketed_batches(&lengths, config.batch_size, &mut rng) {
            let items: Vec<(&PreparedExample, u64)> = batch
                .iter()
                .map(|&i| (&prep_train[i], mix(config.seed, step as u64, i as u64)))
                .collect();
            let (parts, mut grads) = batch_gradients(&model.store, &items, config.chunks, |g, (ex, seed)| {
                let mut dropout = Dropout::training(config.model.dropout, *seed);
                example_loss(g, &model, ex, config.lambda_global, config.lambda_local, &mut dropout)
            })
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { step, loss: f64::NAN },
                e => e,
            })?;
            let mut sum = LossBreakdown::default();
            for p in parts {
                sum += p;
            }
            let mean = sum.total / items.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Diverged { step, loss: mean });
            }
            grads.scale(1.0 / items.len() as f64);
            grads.clip_global_norm(config.clip_norm);
            opt.step(&mut model.store, &grads)?;
            step += 1;
            step_losses.push(mean);
            epoch_loss += sum.total;
            epoch_nll += sum.sketch_nll;
            epoch_tokens += sum.tokens;
            if step >= max_steps {
                let m = finish_epoch(&model, &prep_val, epoch, step, epoch_loss, epoch_nll, epoch_tokens, train.len(), start)?;
                record(&mut history, &mut metrics_file, m)?;
                update_best(&mut best, &mut since_best, &model, config, &opt, &history, options)?;
                break 'epochs;
            }
        }
        let m = finish_epoch(&model, &prep_val, epoch, step, epoch_loss, epoch_nll, epoch_tokens, train.len(), start)?;
        record(&mut history, &mut metrics_file, m)?;
        update_best(&mut best, &mut since_best, &model, config, &opt, &history, options)?;
        if since_best >= config.patience {
            break;
        }
    }
    let (best_val_ppl, mut checkpoint) = best.ok_or_else(|| Error::InvalidArgument("no epochs were run".into()))?;
    checkpoint.metrics = history.iter().map(serde_json::to_value).collect::<std::result::Result<_, _>>()?;
    if let Some(path) = &options.checkpoint_path {
        checkpoint.save(path)?;
    }
    let best_model = checkpoint.to_model()?;
    Ok(TrainOutcome { model: best_model, checkpoint, history, step_losses, best_val_ppl })
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch(
    model: &SketchModel,
    val: &[PreparedExample],
    epoch: usize,
    step: usize,
    loss: f64,
    nll: f64,
    tokens: usize,
    examples: usize,
    start: Instant,
) -> Result<EpochMetrics> {
    Ok(EpochMetrics {
        epoch,
        step,
        train_loss: loss / examples as f64,
        train_ppl: (nll / tokens.max(1) as f64).exp(),
        val_ppl: corpus_perplexity_prepared(model, val)?,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn record(
    history: &mut Vec<EpochMetrics>,
    file: &mut Option<std::io::BufWriter<std::fs::File>>,
    m: EpochMetrics,
) -> Result<()> {
    log::info!(
        "epoch {} step {}: train loss {:.4}, train ppl {:.3}, val ppl {:.3}",
        m.epoch,
        m.step,
        m.train_loss,
        m.train_ppl,
        m.val_ppl
    );
    if let Some(f) = file {
        serde_json::to_writer(&mut *f, &m)?;
        f.write_all(b"\n")?;
        f.flush()?;
    }
    history.push(m);
    Ok(())
}

fn update_best(
    best: &mut Option<(f64, Checkpoint)>,
    since_best: &mut usize,
    model: &SketchModel,
    config: &TrainConfig,
    opt: &OptimizerState,
    history: &[EpochMetrics],
    options: &TrainOptions,
) -> Result<()> {
    let val = history.last().expect("recorded").val_ppl;
    if !val.is_finite() {
        return Err(Error::Diverged { step: history.last().map_or(0, |m| m.step), loss: val });
    }
    if best.as_ref().is_none_or(|(b, _)| val < *b) {
        let mut ck = Checkpoint::from_model(model, Some(config.clone()), Some(opt.clone()));
        ck.metrics = history.iter().map(serde_json::to_value).collect::<std::result::Result<_, _>>()?;
        if let Some(path) = &options.checkpoint_path {
            ck.save(path)?;
        }
        *best = Some((val, ck));
        *since_best = 0;
    } else {
        *since_best += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{generate, SyntheticConfig};
    use crate::model::test_support::*;
    use crate::model::Variant;
    use crate::numeric::Precision;
    use approx::assert_relative_eq;

    fn small_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig { variant: Variant::SfA, d_emb: 12, d_hid: 12, dropout: 0.1, ..ModelConfig::default() },
            lr: 5e-3,
            batch_size: 8,
            max_epochs: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_is_additive_and_parts_sum() {
        let model = tiny_model(Variant::SfAR, 8, Precision::F64, 1);
        let ex = papaya_example();
        let stop = crate::corpus::StopWordSet::default();
        let other = DialogueExample::new(&["my name is george"], &["hi"], "george is my name .", &stop);
        let cfg = TrainConfig { lambda_global: 0.5, lambda_local: 2.0, ..TrainConfig::default() };
        let a = compute_loss(&model, std::slice::from_ref(&ex), &cfg).unwrap();
        let b = compute_loss(&model, std::slice::from_ref(&other), &cfg).unwrap();
        let ab = compute_loss(&model, &[ex, other], &cfg).unwrap();
        assert_relative_eq!(ab.total, a.total + b.total, max_relative = 1e-12);
        assert_eq!(ab.tokens, a.tokens + b.tokens);
        assert_relative_eq!(
            a.total,
            a.sketch_nll + 0.5 * a.pointer_global + 2.0 * a.pointer_local,
            max_relative = 1e-12
        );
        assert!(a.pointer_global > 0.0 && a.pointer_local > 0.0);
        assert!(compute_loss(&model, &[], &cfg).is_err());
    }

    #[test]
    fn batches_cover_every_index_once() {
        let lengths: Vec<usize> = (0..103).map(|i| (i * 37) % 11).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batches = bucketed_batches(&lengths, 10, &mut rng);
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.len() <= 10));
    }

    #[test]
    fn training_is_deterministic_and_keeps_best() {
        let data = generate(&SyntheticConfig { dialogues: 12, seed: 1, ..SyntheticConfig::default() });
        let (tr, va) = data.split_at(30);
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions { metrics_path: Some(dir.path().join("m.jsonl")), ..TrainOptions::default() };
        let a = train(tr, va, &small_config(), &opts).unwrap();
        let b = train(tr, va, &small_config(), &TrainOptions::default()).unwrap();
        assert_eq!(a.step_losses, b.step_losses);
        assert_eq!(a.history.len(), 3);
        let min = a.history.iter().map(|m| m.val_ppl).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_val_ppl, min);
        let prep: Vec<_> = va.iter().map(|e| a.model.prepare(e, Some(10))).collect();
        assert_relative_eq!(corpus_perplexity_prepared(&a.model, &prep).unwrap(), min, max_relative = 1e-12);
        let lines = std::fs::read_to_string(dir.path().join("m.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 3);
        let first: EpochMetrics = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first.epoch, 1);
    }

    #[test]
    fn divergence_reports_step() {
        let data = generate(&SyntheticConfig { dialogues: 4, seed: 2, ..SyntheticConfig::default() });
        let mut cfg = small_config();
        cfg.lr = f64::NAN;
        let err = train(&data, &data, &cfg, &TrainOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 1, .. }), "{err}");
    }
}
