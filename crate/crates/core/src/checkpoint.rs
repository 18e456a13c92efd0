//! Binary checkpoint format: the 5-byte magic `SFAR1`, a little-endian u64
//! byte length, a UTF-8 JSON metadata block, then every tensor as
//! row-major little-endian f32 in directory order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, LmConfig};
use crate::model::{ModelConfig, SketchModel};
use crate::numeric::{AdamConfig, OptimizerState, ParamStore, Precision};
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 5] = b"SFAR1";
const MAGIC_PREFIX: &[u8; 4] = b"SFAR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointConfig {
    Sketch {
        model: ModelConfig,
        train: Option<TrainConfig>,
    },
    Lm {
        lm: LmConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorGroup {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: TensorGroup,
    rows: usize,
    cols: usize,
    /// Element offset into the data section.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerMeta {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    config: CheckpointConfig,
    vocab: Vocabulary,
    tensors: Vec<TensorEntry>,
    pretrained_rows: Vec<bool>,
    optimizer: Option<OptimizerMeta>,
    metrics: Vec<serde_json::Value>,
}

/// Weights plus everything needed to rebuild the model. Values are stored
/// as f32; loading yields an f32-precision store.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub pretrained_rows: Vec<bool>,
    pub optimizer: Option<OptimizerState>,
    pub metrics: Vec<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &SketchModel, train: Option<TrainConfig>, optimizer: Option<OptimizerState>) -> Self {
        Checkpoint {
            config: CheckpointConfig::Sketch { model: model.config.clone(), train },
            vocab: model.vocab.clone(),
            store: model.store.clone(),
            pretrained_rows: model.pretrained_rows.clone(),
            optimizer,
            metrics: Vec::new(),
        }
    }

    pub fn from_lm(lm: &LanguageModel, config: LmConfig) -> Self {
        Checkpoint {
            config: CheckpointConfig::Lm { lm: config },
            vocab: lm.vocab.clone(),
            store: lm.store.clone(),
            pretrained_rows: Vec::new(),
            optimizer: None,
            metrics: Vec::new(),
        }
    }

    pub fn to_model(&self) -> Result<SketchModel> {
        match &self.config {
            CheckpointConfig::Sketch { model, .. } => SketchModel::from_parts(
                model.clone(),
                self.vocab.clone(),
                self.store.clone(),
                self.pretrained_rows.clone(),
            ),
            CheckpointConfig::Lm { .. } => Err(Error::Checkpoint("expected a sketch model, found a language model".into())),
        }
    }

    pub fn to_lm(&self) -> Result<LanguageModel> {
        match &self.config {
            CheckpointConfig::Lm { .. } => LanguageModel::from_store(self.vocab.clone(), self.store.clone()),
            CheckpointConfig::Sketch { .. } => Err(Error::Checkpoint("expected a language model, found a sketch model".into())),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut data: Vec<&[f64]> = Vec::new();
        let mut offset = 0;
        let mut add = |name: &str, group, rows, cols, values: &'_ [f64], tensors: &mut Vec<TensorEntry>| {
            tensors.push(TensorEntry { name: name.to_string(), group, rows, cols, offset });
            offset += values.len();
        };
        for (_, p) in self.store.iter() {
            add(&p.name, TensorGroup::Param, p.rows, p.cols, &p.data, &mut tensors);
            data.push(&p.data);
        }
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != self.store.len() || opt.v.len() != self.store.len() {
                return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
            }
            for (group, moments) in [(TensorGroup::AdamM, &opt.m), (TensorGroup::AdamV, &opt.v)] {
                for ((_, p), values) in self.store.iter().zip(moments) {
                    if values.len() != p.data.len() {
                        return Err(Error::Checkpoint(format!("optimizer moment shape for {}", p.name)));
                    }
                    add(&p.name, group, p.rows, p.cols, values, &mut tensors);
                    data.push(values);
                }
            }
        }
        let meta = Metadata {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors,
            pretrained_rows: self.pretrained_rows.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta { config: o.config, step: o.step }),
            metrics: self.metrics.clone(),
        };
        let json = serde_json::to_vec(&meta)?;
        let mut out = Vec::with_capacity(13 + json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for values in data {
            for &x in values {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Checkpoint("file is truncated".into());
        if bytes.len() < MAGIC.len() {
            return Err(truncated());
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            if &bytes[..4] == MAGIC_PREFIX {
                return Err(Error::VersionMismatch {
                    found: String::from_utf8_lossy(&bytes[..5]).into_owned(),
                    expected: String::from_utf8_lossy(MAGIC).into_owned(),
                });
            }
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let len_bytes: [u8; 8] = bytes.get(5..13).ok_or_else(truncated)?.try_into().expect("8 bytes");
        let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| truncated())?;
        let json = bytes.get(13..13usize.checked_add(len).ok_or_else(truncated)?).ok_or_else(truncated)?;
        let meta: Metadata = serde_json::from_slice(json)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let body = &bytes[13 + len..];
        let total: usize = meta.tensors.iter().map(|t| t.rows * t.cols).sum();
        if body.len() < total * 4 {
            return Err(truncated());
        }
        if body.len() > total * 4 {
            return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
        }
        let mut store = ParamStore::new(Precision::F32);
        let mut m = Vec::new();
        let mut v = Vec::new();
        let mut expected_offset = 0;
        for t in &meta.tensors {
            if t.offset != expected_offset {
                return Err(Error::Checkpoint(format!("tensor {} has offset {}, expected {expected_offset}", t.name, t.offset)));
            }
            let n = t.rows * t.cols;
            let values: Vec<f64> = body[t.offset * 4..(t.offset + n) * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            expected_offset += n;
            match t.group {
                TensorGroup::Param => {
                    store.add(&t.name, t.rows, t.cols, values)?;
                }
                TensorGroup::AdamM => m.push(values),
                TensorGroup::AdamV => v.push(values),
            }
        }
        let optimizer = match meta.optimizer {
            Some(o) => {
                if m.len() != store.len() || v.len() != store.len() {
                    return Err(Error::Checkpoint("optimizer moments do not match parameters".into()));
                }
                Some(OptimizerState { config: o.config, step: o.step, m, v })
            }
            None => None,
        };
        Ok(Checkpoint {
            config: meta.config,
            vocab: meta.vocab,
            store,
            pretrained_rows: meta.pretrained_rows,
            optimizer,
            metrics: meta.metrics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
