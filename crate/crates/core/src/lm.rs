//! Recurrent language model used to score slot-filled candidates, and the
//! minimum-score ranking rule.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::encoder::{embed_row, normal_init};
use crate::model::LstmCell;
use crate::numeric::{
    batch_gradients, log_softmax, AdamConfig, Graph, OptimizerState, ParamId, ParamStore, Precision, Var,
};

/// Scores a word sequence; lower is more fluent.
pub trait CandidateScorer: Send + Sync {
    fn score(&self, tokens: &[String]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of sequences held out for early stopping. Corpora with
    /// fewer than ten sequences are evaluated on the training set.
    pub holdout: f64,
    pub clip: f64,
    pub seed: u64,
    pub chunks: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            dim: 64,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            patience: 2,
            holdout: 0.1,
            clip: 5.0,
            seed: 0,
            chunks: 4,
        }
    }
}

/// Embedding, one recurrent layer and an output projection tied to the
/// embedding table.
#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub vocab: Vocabulary,
    pub store: ParamStore,
    embedding: ParamId,
    cell: LstmCell,
}

impl LanguageModel {
    pub fn new(vocab: Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("language model dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(Precision::F32);
        let embedding = normal_init(&mut store, "lm.embedding", vocab.len(), dim, 0.1, &mut rng)?;
        store.param_mut(embedding).row_mut(PAD).fill(0.0);
        LstmCell::init(&mut store, "lm", dim, dim, &mut rng)?;
        Self::from_store(vocab, store)
    }

    pub fn from_store(vocab: Vocabulary, store: ParamStore) -> Result<Self> {
        let embedding = store.id("lm.embedding")?;
        let cell = LstmCell::resolve(&store, "lm")?;
        let emb = store.param(embedding);
        if emb.rows != vocab.len() {
            return Err(Error::Shape(format!(
                "language model embedding has {} rows, vocabulary has {}",
                emb.rows,
                vocab.len()
            )));
        }
        if cell.hidden_size(&store) != emb.cols || cell.input_size(&store) != emb.cols {
            return Err(Error::Shape("language model cell does not match embedding".into()));
        }
        Ok(LanguageModel { vocab, store, embedding, cell })
    }

    pub fn dim(&self) -> usize {
        self.store.param(self.embedding).cols
    }

    /// Next-token logits after consuming EOS followed by `inputs`; one
    /// entry per input position including the start.
    fn logits(&self, g: &mut Graph<'_>, inputs: &[usize]) -> Result<Vec<Var>> {
        let d = self.dim();
        let mut h = g.zeros(d);
        let mut c = g.zeros(d);
        let emb = g.param(self.embedding);
        let mut out = Vec::with_capacity(inputs.len() + 1);
        for &tok in std::iter::once(&EOS).chain(inputs) {
            let x = embed_row(g, self.embedding, tok)?;
            (h, c) = self.cell.step(g, x, h, c)?;
            out.push(g.matvec(emb, h)?);
        }
        Ok(out)
    }

    fn sequence_loss(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Var> {
        let logits = self.logits(g, &ids[..ids.len() - 1])?;
        let losses = logits
            .into_iter()
            .zip(ids)
            .map(|(l, &t)| g.cross_entropy_logits(l, t))
            .collect::<Result<Vec<_>>>()?;
        g.sum_all(&losses)
    }

    /// `-ln P(ids[t] | EOS, ids[..t])` for every position.
    pub fn step_nlls(&self, ids: &[usize]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty sequence".into()));
        }
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, &ids[..ids.len() - 1])?;
        logits
            .iter()
            .zip(ids)
            .map(|(&l, &t)| {
                let lp = log_softmax(g.value(l))?;
                lp.get(t)
                    .map(|x| -x)
                    .ok_or(Error::TokenOutOfRange { id: t, size: lp.len() })
            })
            .collect()
    }

    /// Distribution over the next token after EOS and `prefix`.
    pub fn next_distribution(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, prefix)?;
        let last = *logits.last().expect("at least the start step");
        crate::numeric::softmax(g.value(last))
    }

    /// `s = exp(mean_t -ln P(ids[t] | ...))`, the first token conditioned
    /// on EOS.
    pub fn lm_score(&self, ids: &[usize]) -> Result<f64> {
        let nll = self.step_nlls(ids)?;
        Ok((nll.iter().sum::<f64>() / nll.len() as f64).exp())
    }

    /// Token-averaged perplexity; every sequence is scored with EOS
    /// appended.
    pub fn perplexity(&self, sequences: &[Vec<usize>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in sequences {
            let ids = with_eos(s);
            let nll = self.step_nlls(&ids)?;
            total += nll.iter().sum::<f64>();
            count += nll.len();
        }
        if count == 0 {
            return Err(Error::EmptyDataset("no sequences to score".into()));
        }
        Ok((total / count as f64).exp())
    }
}

impl CandidateScorer for LanguageModel {
    /// Encodes with the shared vocabulary and appends EOS.
    fn score(&self, tokens: &[String]) -> Result<f64> {
        self.lm_score(&with_eos(&self.vocab.encode(tokens)))
    }
}

fn with_eos(ids: &[usize]) -> Vec<usize> {
    let mut v = ids.to_vec();
    v.push(EOS);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmEpoch {
    pub epoch: usize,
    pub train_ppl: f64,
    pub heldout_ppl: f64,
}

#[derive(Debug, Clone)]
pub struct LmTraining {
    pub model: LanguageModel,
    pub history: Vec<LmEpoch>,
}

/// Next-token cross-entropy training over `responses`, each followed by
/// EOS. Keeps the parameters with the lowest held-out perplexity and stops
/// after `patience` epochs without improvement.
pub fn train_lm(responses: &[Vec<String>], vocab: &Vocabulary, config: &LmConfig) -> Result<LmTraining> {
    if responses.is_empty() {
        return Err(Error::EmptyDataset("no responses to train on".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seqs: Vec<Vec<usize>> = responses.iter().map(|r| vocab.encode(r)).collect();
    let (train, heldout) = if seqs.len() >= 10 {
        seqs.shuffle(&mut rng);
        let n_hold = ((seqs.len() as f64 * config.holdout).round() as usize).clamp(1, seqs.len() - 1);
        let heldout = seqs.split_off(seqs.len() - n_hold);
        (seqs, heldout)
    } else {
        (seqs.clone(), seqs)
    };
    if train.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "corpus of {} sequences is smaller than the batch size {}",
            train.len(),
            config.batch_size
        )));
    }
    let mut model = LanguageModel::new(vocab.clone(), config.dim, config.seed)?;
    let mut opt = OptimizerState::new(&model.store, AdamConfig { lr: config.lr, ..AdamConfig::default() });
    let mut best = (model.perplexity(&heldout)?, model.store.clone());
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let items: Vec<Vec<usize>> = batch.iter().map(|&i| with_eos(&train[i])).collect();
            let (losses, mut grads) = batch_gradients(&model.store, &items, config.chunks, |g, ids| {
                let loss = model.sequence_loss(g, ids)?;
                Ok((loss, g.scalar(loss)))
            })?;
            let batch_loss: f64 = losses.iter().sum();
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { step, loss: batch_loss });
            }
            total += batch_loss;
            count += items.iter().map(Vec::len).sum::<usize>();
            grads.scale(1.0 / items.len() as f64);
            grads.clip_global_norm(config.clip);
            opt.step(&mut model.store, &grads)?;
            step += 1;
        }
        let heldout_ppl = model.perplexity(&heldout)?;
        history.push(LmEpoch {
            epoch,
            train_ppl: (total / count as f64).exp(),
            heldout_ppl,
        });
        if heldout_ppl < best.0 {
            best = (heldout_ppl, model.store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    model.store = best.1;
    Ok(LmTraining { model, history })
}

/// A filled response with its score and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub tokens: Vec<String>,
    pub score: f64,
    /// Index of the beam whose sketch produced this candidate.
    pub beam: usize,
    /// Rare-word index placed in each slot, left to right.
    pub fill: Vec<usize>,
}

/// Ascending score, then lower beam index, then lexicographic tokens.
pub fn compare_candidates(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then(a.beam.cmp(&b.beam))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Index of the minimum-score candidate under [`compare_candidates`].
pub fn rank(candidates: &[ScoredCandidate]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("cannot rank an empty candidate list".into()));
    }
    if let Some(c) = candidates.iter().find(|c| c.score.is_nan()) {
        return Err(Error::NonFinite(format!("candidate score for {:?}", c.tokens)));
    }
    let mut best = 0;
    for i in 1..candidates.len() {
        if compare_candidates(&candidates[i], &candidates[best]) == Ordering::Less {
            best = i;
        }
    }
    Ok(best)
}

/// Candidate indices sorted best first.
pub fn rank_order(candidates: &[ScoredCandidate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| compare_candidates(&candidates[a], &candidates[b]));
    idx
}
