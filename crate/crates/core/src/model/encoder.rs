use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Vocabulary, PAD, RESERVED};
use crate::embeddings::PretrainedVectors;
use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub id: ParamId,
    /// One flag per vocabulary row; reserved rows are never pretrained.
    pub pretrained: Vec<bool>,
}

pub(crate) fn normal_init<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> Result<ParamId> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    store.add(name, rows, cols, data)
}

impl EmbeddingTable {
    /// Rows for words found in `pretrained` are copied from it; everything
    /// else, including reserved symbols, is drawn from N(0, 0.1²). The PAD
    /// row is zero.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab: &Vocabulary,
        dim: usize,
        pretrained: Option<&PretrainedVectors>,
        rng: &mut R,
    ) -> Result<Self> {
        if let Some(p) = pretrained {
            if p.dim() != dim {
                return Err(Error::Shape(format!(
                    "pretrained vectors have dimension {}, model expects {dim}",
                    p.dim()
                )));
            }
        }
        let id = normal_init(store, name, vocab.len(), dim, 0.1, rng)?;
        let mut flags = vec![false; vocab.len()];
        let param = store.param_mut(id);
        param.row_mut(PAD).fill(0.0);
        if let Some(p) = pretrained {
            for (row, word) in vocab.words().iter().enumerate().skip(RESERVED.len()) {
                if let Some(v) = p.get(word) {
                    param.row_mut(row).copy_from_slice(v);
                    flags[row] = true;
                }
            }
        }
        store.normalize(id);
        Ok(EmbeddingTable { id, pretrained: flags })
    }

    /// Row lookup. PAD maps to the zero vector with no gradient.
    pub fn embed(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Vec<Var>> {
        ids.iter().map(|&id| self.embed_one(g, id)).collect()
    }

    pub fn embed_one(&self, g: &mut Graph<'_>, id: usize) -> Result<Var> {
        embed_row(g, self.id, id)
    }
}

pub(crate) fn embed_row(g: &mut Graph<'_>, table: ParamId, id: usize) -> Result<Var> {
    let p = g.params().param(table);
    if id >= p.rows {
        return Err(Error::TokenOutOfRange { id, size: p.rows });
    }
    if id == PAD {
        let cols = p.cols;
        return Ok(g.zeros(cols));
    }
    g.row(table, id)
}

/// Single-layer four-gate recurrent cell. Gate order in the packed
/// weights is input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

impl LstmCell {
    /// Glorot-uniform weights, zero bias except the forget gate at 1.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_hid: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_x = store.glorot(&format!("{prefix}.lstm.w_x"), d_in, 4 * d_hid, rng)?;
        let w_h = store.glorot(&format!("{prefix}.lstm.w_h"), d_hid, 4 * d_hid, rng)?;
        let mut bias = vec![0.0; 4 * d_hid];
        bias[d_hid..2 * d_hid].fill(1.0);
        let b = store.add(&format!("{prefix}.lstm.b"), 1, 4 * d_hid, bias)?;
        Ok(LstmCell { w_x, w_h, b })
    }

    pub fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(LstmCell {
            w_x: store.id(&format!("{prefix}.lstm.w_x"))?,
            w_h: store.id(&format!("{prefix}.lstm.w_h"))?,
            b: store.id(&format!("{prefix}.lstm.b"))?,
        })
    }

    pub fn hidden_size(&self, store: &ParamStore) -> usize {
        store.param(self.w_h).rows
    }

    pub fn input_size(&self, store: &ParamStore) -> usize {
        store.param(self.w_x).rows
    }

    /// One recurrent update: returns `(h', c')`.
    pub fn step(&self, g: &mut Graph<'_>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let d = self.hidden_size(g.params());
        let w_x = g.param(self.w_x);
        let w_h = g.param(self.w_h);
        let b = g.param(self.b);
        let zx = g.vecmat(x, w_x)?;
        let zh = g.vecmat(h, w_h)?;
        let z = g.add(zx, zh)?;
        let z = g.add(z, b)?;
        let i = g.slice(z, 0, d)?;
        let f = g.slice(z, d, d)?;
        let cand = g.slice(z, 2 * d, d)?;
        let o = g.slice(z, 3 * d, d)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}

/// Hidden states of one encoded sequence.
#[derive(Debug, Clone)]
pub struct SequenceStates {
    pub states: Vec<Var>,
    pub final_h: Var,
    pub final_c: Var,
}

/// Left-to-right unrolling from a zero state. Each embedded input may be
/// transformed (e.g. dropout) by `map_input` before the recurrent step.
pub fn encode_sequence(
    g: &mut Graph<'_>,
    ids: &[usize],
    cell: &LstmCell,
    table: ParamId,
    map_input: &mut dyn FnMut(&mut Graph<'_>, Var) -> Result<Var>,
) -> Result<SequenceStates> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
    }
    let d = cell.hidden_size(g.params());
    let mut h = g.zeros(d);
    let mut c = g.zeros(d);
    let mut states = Vec::with_capacity(ids.len());
    for &id in ids {
        let x = embed_row(g, table, id)?;
        let x = map_input(g, x)?;
        (h, c) = cell.step(g, x, h, c)?;
        states.push(h);
    }
    Ok(SequenceStates { states, final_h: h, final_c: c })
}

/// Encodes end-padded sequences in lockstep. At PAD positions the state is
/// carried over unchanged, so real positions match unpadded encoding.
pub fn encode_batch(
    g: &mut Graph<'_>,
    batch: &[Vec<usize>],
    cell: &LstmCell,
    table: ParamId,
) -> Result<Vec<SequenceStates>> {
    let width = batch.iter().map(Vec::len).max().unwrap_or(0);
    if width == 0 {
        return Err(Error::InvalidArgument("cannot encode an empty batch".into()));
    }
    let d = cell.hidden_size(g.params());
    let mut hs: Vec<Var> = (0..batch.len()).map(|_| g.zeros(d)).collect();
    let mut cs: Vec<Var> = (0..batch.len()).map(|_| g.zeros(d)).collect();
    let mut states: Vec<Vec<Var>> = vec![Vec::with_capacity(width); batch.len()];
    for t in 0..width {
        for (b, seq) in batch.iter().enumerate() {
            let id = seq.get(t).copied().unwrap_or(PAD);
            if id != PAD {
                let x = embed_row(g, table, id)?;
                (hs[b], cs[b]) = cell.step(g, x, hs[b], cs[b])?;
            }
            states[b].push(hs[b]);
        }
    }
    Ok(states
        .into_iter()
        .zip(hs.into_iter().zip(cs))
        .map(|(states, (final_h, final_c))| SequenceStates { states, final_h, final_c })
        .collect())
}

/// Encodes each trait independently and keeps only the final hidden state.
pub fn encode_personas(
    g: &mut Graph<'_>,
    traits: &[Vec<usize>],
    cell: &LstmCell,
    table: ParamId,
    map_input: &mut dyn FnMut(&mut Graph<'_>, Var) -> Result<Var>,
) -> Result<Vec<Var>> {
    if traits.is_empty() {
        return Err(Error::InvalidArgument("persona has no traits".into()));
    }
    traits
        .iter()
        .map(|t| encode_sequence(g, t, cell, table, map_input).map(|s| s.final_h))
        .collect()
}

/// Everything the decoder reads from the encoder side.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub conv_states: Vec<Var>,
    /// `conv_states` stacked as a T × d_hid matrix.
    pub conv_keys: Var,
    pub conv_final: Var,
    pub persona_finals: Vec<Var>,
    /// `persona_finals` stacked as an N × d_hid matrix; `None` with no traits.
    pub persona_keys: Option<Var>,
}

impl EncoderOutput {
    pub fn new(g: &mut Graph<'_>, conv: SequenceStates, persona_finals: Vec<Var>) -> Result<Self> {
        let conv_keys = g.stack(&conv.states)?;
        let persona_keys = if persona_finals.is_empty() {
            None
        } else {
            Some(g.stack(&persona_finals)?)
        };
        Ok(EncoderOutput {
            conv_final: conv.final_h,
            conv_states: conv.states,
            conv_keys,
            persona_finals,
            persona_keys,
        })
    }
}
