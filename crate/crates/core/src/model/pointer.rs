//! Global-to-local memory pointer: a sigmoid gate per memory entry masks
//! the persona memory, then a per-step softmax over the masked entries
//! plus a sentinel picks the word to copy into each slot.

use crate::corpus::{PERSONA_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::numeric::{softmax, Graph, ParamId, Var};

use super::decoder::DecoderStepOutput;
use super::encoder::embed_row;
use super::{Context, MemoryBank, PreparedExample, SketchModel};

#[derive(Debug, Clone, Copy)]
pub struct GlobalPointer {
    /// One gate in (0, 1) per bank entry.
    pub gates: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LocalPointer {
    /// Bank-entry logits followed by the sentinel logit.
    pub logits: Var,
}

impl LocalPointer {
    pub fn dist(&self, g: &Graph<'_>) -> Result<Vec<f64>> {
        softmax(g.value(self.logits))
    }
}

/// `g_i = sigmoid(⟨[y ; h_d] · W_gate, e_i⟩)` over the rows `e_i` of `keys`.
pub fn global_pointer(
    g: &mut Graph<'_>,
    y_emb: Var,
    h_d: Var,
    keys: Var,
    w_gate: ParamId,
) -> Result<GlobalPointer> {
    let joined = g.concat(&[y_emb, h_d]);
    let w = g.param(w_gate);
    let q = g.vecmat(joined, w)?;
    let scores = g.matvec(keys, q)?;
    Ok(GlobalPointer { gates: g.sigmoid(scores) })
}

/// Summed binary cross-entropy between gates and 0/1 labels.
pub fn global_pointer_loss(g: &mut Graph<'_>, gp: GlobalPointer, labels: &[f64]) -> Result<Var> {
    g.bce(gp.gates, labels.to_vec())
}

/// `e_i ← e_i × g_i`.
pub fn mask_memory(g: &mut Graph<'_>, keys: Var, gp: GlobalPointer) -> Result<Var> {
    g.scale_rows(keys, gp.gates)
}

/// Softmax over `⟨h_d, e_i⟩` for every masked entry plus a trainable
/// sentinel logit meaning "no memory word here".
pub fn local_pointer(
    g: &mut Graph<'_>,
    h_d: Var,
    masked_keys: Option<Var>,
    sentinel: ParamId,
) -> Result<LocalPointer> {
    let s = g.param(sentinel);
    let logits = match masked_keys {
        Some(keys) => {
            let scores = g.matvec(keys, h_d)?;
            g.concat(&[scores, s])
        }
        None => g.concat(&[s]),
    };
    Ok(LocalPointer { logits })
}

/// Local pointer distributions for a decoded sequence. `steps[t]` is the
/// decoder output that predicted token `t`; `prev_tokens[t]` the token it
/// consumed.
pub fn pointer_distributions(
    g: &mut Graph<'_>,
    model: &SketchModel,
    ctx: &Context,
    bank: &MemoryBank,
    steps: &[DecoderStepOutput],
    prev_tokens: &[usize],
) -> Result<(Vec<LocalPointer>, Vec<GlobalPointer>)> {
    let p = &model.params;
    let keys = if bank.is_empty() { None } else { Some(bank.embed(g, p.c1)?) };
    let mut locals = Vec::with_capacity(steps.len());
    let mut globals = Vec::new();
    let mut masked = None;
    for (t, step) in steps.iter().enumerate() {
        if let Some(keys) = keys {
            if t == 0 || model.config.pointer_per_step {
                let (y, h) = if model.config.pointer_per_step {
                    (embed_row(g, p.embedding, prev_tokens[t])?, step.state.h)
                } else {
                    (embed_row(g, p.embedding, prev_tokens[0])?, ctx.init.h)
                };
                let gp = global_pointer(g, y, h, keys, p.w_gate)?;
                masked = Some(mask_memory(g, keys, gp)?);
                globals.push(gp);
            }
        }
        locals.push(local_pointer(g, step.state.h, masked, p.sentinel)?);
    }
    Ok((locals, globals))
}

/// Global and local pointer losses for a teacher-forced example.
pub fn pointer_losses(
    g: &mut Graph<'_>,
    model: &SketchModel,
    ex: &PreparedExample,
    ctx: &Context,
    steps: &[DecoderStepOutput],
) -> Result<Option<(Var, Var)>> {
    if ex.bank.is_empty() {
        return Ok(None);
    }
    let mut prev = Vec::with_capacity(ex.targets.len());
    prev.push(crate::corpus::EOS);
    prev.extend_from_slice(&ex.targets[..ex.targets.len() - 1]);
    let (locals, globals) = pointer_distributions(g, model, ctx, &ex.bank, steps, &prev)?;
    let global_terms = globals
        .into_iter()
        .map(|gp| global_pointer_loss(g, gp, &ex.global_labels))
        .collect::<Result<Vec<_>>>()?;
    let loss_g = g.sum_all(&global_terms)?;
    let local_terms = locals
        .iter()
        .zip(&ex.local_labels)
        .map(|(lp, &label)| g.cross_entropy_logits(lp.logits, label))
        .collect::<Result<Vec<_>>>()?;
    let loss_l = g.sum_all(&local_terms)?;
    Ok(Some((loss_g, loss_l)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerFill {
    pub tokens: Vec<String>,
    /// Bank index chosen for each slot, left to right.
    pub choices: Vec<Option<usize>>,
    /// Set when a slot had to be filled with UNK.
    pub flagged: bool,
}

/// Replaces every slot with the bank word of highest local-pointer
/// probability, ignoring the sentinel. Ties go to the lowest entry index.
/// `dists[u]` is the distribution at sketch position `u`.
pub fn fill_with_pointer(sketch: &[String], dists: &[Vec<f64>], bank: &MemoryBank) -> Result<PointerFill> {
    let mut out = PointerFill {
        tokens: Vec::with_capacity(sketch.len()),
        choices: Vec::new(),
        flagged: false,
    };
    for (u, tok) in sketch.iter().enumerate() {
        if tok != PERSONA_TOKEN {
            out.tokens.push(tok.clone());
            continue;
        }
        if bank.is_empty() {
            out.tokens.push(UNK_TOKEN.to_string());
            out.choices.push(None);
            out.flagged = true;
            continue;
        }
        let dist = dists
            .get(u)
            .ok_or_else(|| Error::InvalidArgument(format!("no pointer distribution at slot {u}")))?;
        if dist.len() < bank.len() {
            return Err(Error::Shape("pointer distribution shorter than bank".into()));
        }
        let mut best = 0;
        for i in 1..bank.len() {
            if dist[i] > dist[best] {
                best = i;
            }
        }
        out.tokens.push(bank.entries[best].word.clone());
        out.choices.push(Some(best));
    }
    Ok(out)
}
