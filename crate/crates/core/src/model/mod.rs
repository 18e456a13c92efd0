//! The sketch generation network: shared embeddings, recurrent encoder,
//! persona memory, attention decoder and the pointer heads used to fill
//! slots without reranking.

pub mod decoder;
pub mod encoder;
pub mod memory;
pub mod pointer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueExample, PersonaTrait, Vocabulary, EOS, EOS_TOKEN};
use crate::embeddings::PretrainedVectors;
use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamId, ParamStore, Precision, Var};

pub use decoder::{DecoderState, DecoderStepOutput, SequenceLoss};
pub use encoder::{EmbeddingTable, EncoderOutput, LstmCell};
pub use memory::{MemoryBank, MemoryEntry, MemoryReadout};
pub use pointer::{GlobalPointer, LocalPointer};

/// The four model variants. `R` variants train exactly like their base
/// variant and differ only in how slots are filled at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SF")]
    Sf,
    #[serde(rename = "SF-A")]
    SfA,
    #[serde(rename = "SF-R")]
    SfR,
    #[serde(rename = "SF-A-R")]
    SfAR,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sf, Variant::SfA, Variant::SfR, Variant::SfAR];

    pub fn attention(self) -> bool {
        matches!(self, Variant::SfA | Variant::SfAR)
    }

    pub fn rerank(self) -> bool {
        matches!(self, Variant::SfR | Variant::SfAR)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sf => "SF",
            Variant::SfA => "SF-A",
            Variant::SfR => "SF-R",
            Variant::SfAR => "SF-A-R",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_emb: usize,
    pub d_hid: usize,
    /// Conversation and persona encoders share weights.
    pub share_encoder: bool,
    pub dropout: f64,
    pub dropout_embeddings: bool,
    pub dropout_context: bool,
    /// Recompute the global pointer at every decoding step instead of once
    /// from the initial decoder state.
    pub pointer_per_step: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::SfAR,
            d_emb: 300,
            d_hid: 300,
            share_encoder: true,
            dropout: 0.4,
            dropout_embeddings: true,
            dropout_context: true,
            pointer_per_step: false,
        }
    }
}

/// Dropout configuration for one forward pass. `rng == None` means
/// inference mode.
pub struct Dropout {
    pub p: f64,
    pub rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn inference() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn training(p: f64, seed: u64) -> Self {
        Dropout {
            p,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, v: Var, enabled: bool) -> Result<Var> {
        match (&mut self.rng, enabled) {
            (Some(rng), true) if self.p > 0.0 => g.dropout(v, self.p, true, rng),
            _ => Ok(v),
        }
    }
}

/// Parameter handles resolved by name.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub embedding: ParamId,
    pub encoder: LstmCell,
    pub persona_encoder: LstmCell,
    pub c1: ParamId,
    pub c2: ParamId,
    pub decoder: LstmCell,
    pub w_init: ParamId,
    pub b_init: ParamId,
    pub w_attn: ParamId,
    pub b_attn: ParamId,
    pub w_ctx: ParamId,
    pub b_ctx: ParamId,
    pub adapter: Option<ParamId>,
    pub w_gate: ParamId,
    pub sentinel: ParamId,
}

impl ModelParams {
    fn resolve(store: &ParamStore, config: &ModelConfig) -> Result<Self> {
        let persona_prefix = if config.share_encoder { "encoder" } else { "persona_encoder" };
        Ok(ModelParams {
            embedding: store.id("embedding")?,
            encoder: LstmCell::resolve(store, "encoder")?,
            persona_encoder: LstmCell::resolve(store, persona_prefix)?,
            c1: store.id("memory.c1")?,
            c2: store.id("memory.c2")?,
            decoder: LstmCell::resolve(store, "decoder")?,
            w_init: store.id("decoder.w_init")?,
            b_init: store.id("decoder.b_init")?,
            w_attn: store.id("decoder.w_attn")?,
            b_attn: store.id("decoder.b_attn")?,
            w_ctx: store.id("decoder.w_ctx")?,
            b_ctx: store.id("decoder.b_ctx")?,
            adapter: store.get("decoder.adapter"),
            w_gate: store.id("pointer.w_gate")?,
            sentinel: store.id("pointer.sentinel")?,
        })
    }
}

/// A complete sketch model: configuration, vocabulary and weights.
#[derive(Debug, Clone)]
pub struct SketchModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub params: ModelParams,
    /// Rows of the embedding table initialized from pretrained vectors.
    pub pretrained_rows: Vec<bool>,
}

impl SketchModel {
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        seed: u64,
        pretrained: Option<&PretrainedVectors>,
    ) -> Result<Self> {
        Self::with_precision(config, vocab, seed, pretrained, Precision::F32)
    }

    pub fn with_precision(
        config: ModelConfig,
        vocab: Vocabulary,
        seed: u64,
        pretrained: Option<&PretrainedVectors>,
        precision: Precision,
    ) -> Result<Self> {
        if config.d_emb == 0 || config.d_hid == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument("dropout must be in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(precision);
        let (v, e, h) = (vocab.len(), config.d_emb, config.d_hid);
        let table = EmbeddingTable::init(&mut store, "embedding", &vocab, e, pretrained, &mut rng)?;
        LstmCell::init(&mut store, "encoder", e, h, &mut rng)?;
        if !config.share_encoder {
            LstmCell::init(&mut store, "persona_encoder", e, h, &mut rng)?;
        }
        encoder::normal_init(&mut store, "memory.c1", v, h, 0.1, &mut rng)?;
        encoder::normal_init(&mut store, "memory.c2", v, h, 0.1, &mut rng)?;
        LstmCell::init(&mut store, "decoder", e, h, &mut rng)?;
        store.glorot("decoder.w_init", 2 * h, h, &mut rng)?;
        store.zeros("decoder.b_init", 1, h)?;
        store.glorot("decoder.w_attn", h, h, &mut rng)?;
        store.zeros("decoder.b_attn", 1, h)?;
        store.glorot("decoder.w_ctx", 3 * h, h, &mut rng)?;
        store.zeros("decoder.b_ctx", 1, h)?;
        if h != e {
            store.glorot("decoder.adapter", h, e, &mut rng)?;
        }
        store.glorot("pointer.w_gate", e + h, h, &mut rng)?;
        store.zeros("pointer.sentinel", 1, 1)?;
        Self::from_parts(config, vocab, store, table.pretrained)
    }

    /// Reassembles a model from stored weights, checking shapes.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        store: ParamStore,
        pretrained_rows: Vec<bool>,
    ) -> Result<Self> {
        let params = ModelParams::resolve(&store, &config)?;
        let emb = store.param(params.embedding);
        if emb.rows != vocab.len() || emb.cols != config.d_emb {
            return Err(Error::Shape(format!(
                "embedding is {}x{}, expected {}x{}",
                emb.rows,
                emb.cols,
                vocab.len(),
                config.d_emb
            )));
        }
        let c1 = store.param(params.c1);
        if c1.rows != vocab.len() || c1.cols != config.d_hid {
            return Err(Error::Shape("memory matrix shape".into()));
        }
        let pretrained_rows = if pretrained_rows.len() == vocab.len() {
            pretrained_rows
        } else {
            vec![false; vocab.len()]
        };
        Ok(SketchModel {
            config,
            vocab,
            store,
            params,
            pretrained_rows,
        })
    }

    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable {
            id: self.params.embedding,
            pretrained: self.pretrained_rows.clone(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_values()
    }
}

/// Encoder, memory and initial decoder state for one dialogue context.
#[derive(Debug, Clone)]
pub struct Context {
    pub enc: EncoderOutput,
    pub readout: MemoryReadout,
    pub init: DecoderState,
}

/// An example converted to vocabulary ids, with pointer supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub history: Vec<usize>,
    pub traits: Vec<Vec<usize>>,
    pub bank: MemoryBank,
    /// Sketch ids followed by EOS.
    pub targets: Vec<usize>,
    /// Per target step: the bank entry that fills the slot, or
    /// `bank.len()` (the sentinel) where no persona word is expected.
    pub local_labels: Vec<usize>,
    /// Per bank entry: 1 when its word occurs in the response.
    pub global_labels: Vec<f64>,
    /// Target tokens that fell back to UNK.
    pub unk_targets: usize,
}

impl SketchModel {
    pub fn encode_ids(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens)
    }

    /// Trait token ids; an empty trait becomes a lone EOS.
    pub fn encode_traits(&self, personas: &[PersonaTrait]) -> Vec<Vec<usize>> {
        personas
            .iter()
            .map(|p| {
                if p.tokens.is_empty() {
                    vec![EOS]
                } else {
                    self.vocab.encode(&p.tokens)
                }
            })
            .collect()
    }

    pub fn prepare(&self, ex: &DialogueExample, max_turns: Option<usize>) -> PreparedExample {
        let history = self.vocab.encode(&ex.history_tokens(max_turns));
        let traits = self.encode_traits(&ex.personas);
        let bank = MemoryBank::from_personas(&ex.personas, &self.vocab);
        let (mut targets, unk_targets) = self.vocab.encode_counting_unk(&ex.sketch.tokens);
        targets.push(EOS);
        let mut local_labels = vec![bank.len(); targets.len()];
        for (&pos, src) in ex.sketch.slot_positions.iter().zip(&ex.sketch.slot_sources) {
            if let Some(i) = bank.index_of(src.persona, src.rare_word) {
                local_labels[pos] = i;
            }
        }
        let global_labels = bank
            .entries
            .iter()
            .map(|e| if ex.response.contains(&e.word) { 1.0 } else { 0.0 })
            .collect();
        PreparedExample {
            history,
            traits,
            bank,
            targets,
            local_labels,
            global_labels,
            unk_targets,
        }
    }

    /// Runs both encoders and the memory readout, and initializes the
    /// decoder.
    pub fn encode_context(
        &self,
        g: &mut Graph<'_>,
        history: &[usize],
        traits: &[Vec<usize>],
        bank: &MemoryBank,
        dropout: &mut Dropout,
    ) -> Result<Context> {
        let p = &self.params;
        let drop_emb = self.config.dropout_embeddings;
        let mut map = |g: &mut Graph<'_>, x: Var| dropout.apply(g, x, drop_emb);
        let conv = encoder::encode_sequence(g, history, &p.encoder, p.embedding, &mut map)?;
        let persona_finals = if traits.is_empty() {
            Vec::new()
        } else {
            encoder::encode_personas(g, traits, &p.persona_encoder, p.embedding, &mut map)?
        };
        let enc = EncoderOutput::new(g, conv, persona_finals)?;
        let readout = memory::memory_readout(g, enc.conv_final, bank, p.c1, p.c2)?;
        let init = decoder::init_decoder_state(g, enc.conv_final, readout.h_mem, p.w_init, p.b_init)?;
        Ok(Context { enc, readout, init })
    }

    /// Encoder-side tokens in the order the encoder saw them.
    pub fn history_words(&self, history: &[usize]) -> Vec<String> {
        history
            .iter()
            .map(|&i| self.vocab.word(i).unwrap_or(EOS_TOKEN).to_string())
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::corpus::{DialogueExample, StopWordSet};

    pub fn tiny_vocab(extra: usize) -> Vocabulary {
        let mut words: Vec<String> = [
            "i", "am", "a", "bee", "farmer", "papaya", "food", "my", "name", "is", "george", "hi",
            "what's", "up", "?", ".", "do", "you", "like", "love", "favorite",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        words.extend((0..extra).map(|i| format!("w{i}")));
        Vocabulary::from_words(words)
    }

    pub fn tiny_model(variant: Variant, d: usize, precision: Precision, seed: u64) -> SketchModel {
        let config = ModelConfig {
            variant,
            d_emb: d,
            d_hid: d,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        SketchModel::with_precision(config, tiny_vocab(25), seed, None, precision).unwrap()
    }

    pub fn papaya_example() -> DialogueExample {
        DialogueExample::new(
            &["i am a bee farmer", "my favorite food is papaya"],
            &["hi what's up ?"],
            "i love papaya food .",
            &StopWordSet::default(),
        )
    }
}
