use crate::corpus::EOS;
use crate::error::{Error, Result};
use crate::numeric::{log_softmax, softmax, Graph, ParamId, Var};

use super::encoder::{embed_row, EncoderOutput};
use super::{Dropout, SketchModel};

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderStepOutput {
    pub logits: Var,
    pub state: DecoderState,
    /// Combined context `c_u` before the output projection.
    pub context: Var,
    pub conv_attn: Option<Var>,
    pub pers_attn: Option<Var>,
}

impl DecoderStepOutput {
    pub fn dist(&self, g: &Graph<'_>) -> Result<Vec<f64>> {
        softmax(g.value(self.logits))
    }

    pub fn log_dist(&self, g: &Graph<'_>) -> Result<Vec<f64>> {
        log_softmax(g.value(self.logits))
    }
}

/// `h₀ = tanh(W_init [h_enc ; h_mem] + b_init)`, `c₀ = 0`.
pub fn init_decoder_state(
    g: &mut Graph<'_>,
    h_enc_final: Var,
    h_mem: Var,
    w_init: ParamId,
    b_init: ParamId,
) -> Result<DecoderState> {
    let joined = g.concat(&[h_enc_final, h_mem]);
    let w = g.param(w_init);
    let b = g.param(b_init);
    let z = g.linear(joined, w, b)?;
    let h = g.tanh(z);
    let d = g.size(h);
    let c = g.zeros(d);
    Ok(DecoderState { h, c })
}

/// Dot-product attention of `W_a h_d + b_a` against the rows of `keys`.
/// Returns `(context, weights)`; masked positions get zero weight.
pub fn attend(
    g: &mut Graph<'_>,
    h_d: Var,
    keys: Var,
    mask: Option<&[bool]>,
    w_a: ParamId,
    b_a: ParamId,
) -> Result<(Var, Var)> {
    let (rows, _) = g.shape(keys);
    if rows == 0 {
        return Err(Error::InvalidArgument("attention over zero keys".into()));
    }
    let w = g.param(w_a);
    let b = g.param(b_a);
    let query = g.linear(h_d, w, b)?;
    let scores = g.matvec(keys, query)?;
    let weights = match mask {
        Some(m) => g.masked_softmax(scores, m)?,
        None => g.softmax(scores)?,
    };
    let context = g.vecmat(weights, keys)?;
    Ok((context, weights))
}

/// One decoding step from the previous token. With attention disabled the
/// two attention contexts are zero vectors, so `W_ac` keeps its shape.
pub fn decode_step(
    g: &mut Graph<'_>,
    model: &SketchModel,
    y_prev: usize,
    state: DecoderState,
    enc: &EncoderOutput,
    conv_mask: Option<&[bool]>,
    dropout: &mut Dropout,
) -> Result<DecoderStepOutput> {
    let p = &model.params;
    let cfg = &model.config;
    let x = embed_row(g, p.embedding, y_prev)?;
    let x = dropout.apply(g, x, cfg.dropout_embeddings)?;
    let (h, c) = p.decoder.step(g, x, state.h, state.c)?;
    let d = cfg.d_hid;
    let (conv_ctx, conv_attn, pers_ctx, pers_attn) = if cfg.variant.attention() {
        let (cc, ca) = attend(g, h, enc.conv_keys, conv_mask, p.w_attn, p.b_attn)?;
        let (pc, pa) = match enc.persona_keys {
            Some(keys) => {
                let (pc, pa) = attend(g, h, keys, None, p.w_attn, p.b_attn)?;
                (pc, Some(pa))
            }
            None => (g.zeros(d), None),
        };
        (cc, Some(ca), pc, pa)
    } else {
        let z1 = g.zeros(d);
        let z2 = g.zeros(d);
        (z1, None, z2, None)
    };
    let joined = g.concat(&[h, conv_ctx, pers_ctx]);
    let w = g.param(p.w_ctx);
    let b = g.param(p.b_ctx);
    let z = g.linear(joined, w, b)?;
    let context = g.tanh(z);
    let mut out = dropout.apply(g, context, cfg.dropout_context)?;
    if let Some(adapter) = p.adapter {
        let a = g.param(adapter);
        out = g.vecmat(out, a)?;
    }
    let emb = g.param(p.embedding);
    let logits = g.matvec(emb, out)?;
    Ok(DecoderStepOutput {
        logits,
        state: DecoderState { h, c },
        context,
        conv_attn,
        pers_attn,
    })
}

/// Per-token teacher-forced losses of one target sequence.
#[derive(Debug, Clone)]
pub struct SequenceLoss {
    pub token_losses: Vec<Var>,
    pub total: Var,
    /// Decoder output of each step, in target order.
    pub steps: Vec<DecoderStepOutput>,
}

/// Feeds the targets one by one starting from EOS and accumulates
/// `-log P(target)` at every step.
pub fn teacher_forced_nll(
    g: &mut Graph<'_>,
    model: &SketchModel,
    targets: &[usize],
    init: DecoderState,
    enc: &EncoderOutput,
    dropout: &mut Dropout,
) -> Result<SequenceLoss> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty target sequence".into()));
    }
    let mut state = init;
    let mut prev = EOS;
    let mut token_losses = Vec::with_capacity(targets.len());
    let mut steps = Vec::with_capacity(targets.len());
    for &t in targets {
        let step = decode_step(g, model, prev, state, enc, None, dropout)?;
        token_losses.push(g.cross_entropy_logits(step.logits, t)?);
        state = step.state;
        prev = t;
        steps.push(step);
    }
    let total = g.sum_all(&token_losses)?;
    Ok(SequenceLoss { token_losses, total, steps })
}
