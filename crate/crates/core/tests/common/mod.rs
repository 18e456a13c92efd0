#![allow(dead_code)]

use sketchfill::corpus::synthetic::{generate, SyntheticConfig};
use sketchfill::corpus::{build_vocabulary, DialogueExample};
use sketchfill::lm::LanguageModel;
use sketchfill::model::{ModelConfig, SketchModel, Variant};

pub fn synthetic(dialogues: usize, seed: u64) -> Vec<DialogueExample> {
    generate(&SyntheticConfig { dialogues, seed, ..SyntheticConfig::default() })
}

/// Untrained model over the vocabulary of a small synthetic corpus.
pub fn small_model(variant: Variant, d: usize, seed: u64) -> (SketchModel, Vec<DialogueExample>) {
    let data = synthetic(20, seed);
    let vocab = build_vocabulary(&data, 1).unwrap();
    let config = ModelConfig { variant, d_emb: d, d_hid: d, dropout: 0.0, ..ModelConfig::default() };
    (SketchModel::new(config, vocab, seed, None).unwrap(), data)
}

pub fn small_lm(model: &SketchModel, seed: u64) -> LanguageModel {
    LanguageModel::new(model.vocab.clone(), 8, seed).unwrap()
}
