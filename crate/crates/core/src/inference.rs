//! Response generation: beam search over sketches, persona selection,
//! slot filling and candidate ranking.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{history_tokens, PersonaTrait, EOS, EOS_TOKEN, PAD, PERSONA_SLOT, PERSONA_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::lm::{rank, CandidateScorer, ScoredCandidate};
use crate::model::decoder::{decode_step, teacher_forced_nll};
use crate::model::pointer::{fill_with_pointer, pointer_distributions};
use crate::model::{Context, Dropout, MemoryBank, SketchModel, Variant};
use crate::numeric::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Enumerate fills from the selected persona and keep the candidate
    /// with the lowest language-model score.
    Rerank,
    /// Fill the top beam with the local memory pointer.
    Pointer,
}

impl FillMode {
    pub fn for_variant(variant: Variant) -> Self {
        if variant.rerank() {
            FillMode::Rerank
        } else {
            FillMode::Pointer
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub beam_size: usize,
    /// Decoding steps before a hypothesis is cut off.
    pub max_len: usize,
    /// Tokens that must precede EOS.
    pub min_len: usize,
    /// Candidates enumerated per beam.
    pub candidate_cap: usize,
    pub fill_mode: FillMode,
    /// Conversation turns fed to the encoder, most recent last.
    pub max_turns: Option<usize>,
    /// Forbid emitting the previous token again.
    pub block_repeats: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            beam_size: 7,
            max_len: 30,
            min_len: 1,
            candidate_cap: 50,
            fill_mode: FillMode::Rerank,
            max_turns: Some(10),
            block_repeats: false,
        }
    }
}

impl GenerationConfig {
    pub fn for_variant(variant: Variant) -> Self {
        GenerationConfig {
            fill_mode: FillMode::for_variant(variant),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::InvalidArgument("beam size must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidArgument("max length must be at least 1".into()));
        }
        if self.candidate_cap < self.beam_size {
            return Err(Error::InvalidArgument("candidate cap must be at least the beam size".into()));
        }
        Ok(())
    }
}

/// A decoded sketch. Finished hypotheses end with EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Persona attention at each decoding step; empty without attention.
    pub pers_attn: Vec<Vec<f64>>,
    /// Conversation attention at each decoding step; empty without
    /// attention.
    pub conv_attn: Vec<Vec<f64>>,
    pub finished: bool,
}

/// Length-capped beam search from the context's initial state. Each round
/// expands every live hypothesis by every non-PAD token and keeps the
/// `beam_size` best expansions (higher probability first, then earlier
/// parent, then lower token id); expansions ending in EOS are set aside.
/// EOS is not expanded before `min_len` tokens. Search stops once
/// `beam_size` hypotheses have finished. Hypotheses
/// still live at `max_len` get EOS appended without extra score.
pub fn beam_search(
    g: &mut Graph<'_>,
    model: &SketchModel,
    ctx: &Context,
    config: &GenerationConfig,
) -> Result<Vec<Hypothesis>> {
    config.validate()?;
    let b = config.beam_size;
    let mut dropout = Dropout::inference();
    let mut live = vec![(
        Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            pers_attn: Vec::new(),
            conv_attn: Vec::new(),
            finished: false,
        },
        ctx.init,
    )];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..config.max_len {
        let mut expansions: Vec<(f64, usize, usize)> = Vec::new();
        let mut outputs = Vec::with_capacity(live.len());
        for (parent, (hyp, state)) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(EOS);
            let step = decode_step(g, model, prev, *state, &ctx.enc, None, &mut dropout)?;
            let logp = step.log_dist(g)?;
            for (tok, lp) in logp.iter().enumerate() {
                let blocked = (config.block_repeats && tok == prev && !hyp.tokens.is_empty())
                    || (tok == EOS && hyp.tokens.len() < config.min_len);
                if tok == PAD || blocked {
                    continue;
                }
                expansions.push((hyp.log_prob + lp, parent, tok));
            }
            outputs.push(step);
        }
        expansions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(b);
        for &(lp, parent, tok) in expansions.iter().take(b) {
            let step = &outputs[parent];
            let mut hyp = live[parent].0.clone();
            hyp.tokens.push(tok);
            hyp.log_prob = lp;
            if let Some(pa) = step.pers_attn {
                hyp.pers_attn.push(g.value(pa).to_vec());
            }
            if let Some(ca) = step.conv_attn {
                hyp.conv_attn.push(g.value(ca).to_vec());
            }
            if tok == EOS {
                hyp.finished = true;
                finished.push(hyp);
            } else {
                next.push((hyp, step.state));
            }
        }
        live = next;
        if finished.len() >= b || live.is_empty() {
            break;
        }
    }
    for (mut hyp, _) in live {
        hyp.tokens.push(EOS);
        hyp.finished = true;
        finished.push(hyp);
    }
    finished.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens)));
    finished.truncate(b);
    Ok(finished)
}

/// Persona whose trait received the most attention at the first slot.
/// Without attention traces the persona with the largest summed memory
/// weight is used. `None` when the sketch has no slot or there are no
/// personas.
pub fn select_persona(
    hyp: &Hypothesis,
    memory_p: Option<&[f64]>,
    bank: &MemoryBank,
    n_personas: usize,
) -> Option<usize> {
    let u = hyp.tokens.iter().position(|&t| t == PERSONA_SLOT)?;
    if let Some(w) = hyp.pers_attn.get(u).filter(|w| !w.is_empty()) {
        return Some(argmax(w));
    }
    if n_personas == 0 {
        return None;
    }
    let mut mass = vec![0.0; n_personas];
    if let Some(p) = memory_p {
        for (e, w) in bank.entries.iter().zip(p) {
            if e.persona < n_personas {
                mass[e.persona] += w;
            }
        }
    }
    Some(argmax(&mass))
}

/// First index of the maximum.
fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..x.len() {
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}

/// A sketch with its slots filled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledCandidate {
    pub tokens: Vec<String>,
    /// Rare-word index placed in each slot, left to right.
    pub fill: Vec<usize>,
    /// Set when slots were filled with UNK for lack of rare words.
    pub flagged: bool,
}

/// Every assignment of `rare_words` to the slots of `sketch`, in
/// lexicographic order of rare-word indices: arrangements without
/// repetition when there are at least as many words as slots, with
/// repetition otherwise. At most `cap` candidates are produced.
pub fn fill_candidates(sketch: &[String], rare_words: &[String], cap: usize) -> Vec<FilledCandidate> {
    let slots: Vec<usize> = sketch
        .iter()
        .enumerate()
        .filter(|(_, t)| *t == PERSONA_TOKEN)
        .map(|(i, _)| i)
        .collect();
    let k = slots.len();
    if k == 0 {
        return vec![FilledCandidate { tokens: sketch.to_vec(), fill: Vec::new(), flagged: false }];
    }
    if rare_words.is_empty() {
        let tokens = sketch
            .iter()
            .map(|t| if t == PERSONA_TOKEN { UNK_TOKEN.to_string() } else { t.clone() })
            .collect();
        return vec![FilledCandidate { tokens, fill: Vec::new(), flagged: true }];
    }
    let m = rare_words.len();
    let distinct = m >= k;
    let mut out = Vec::new();
    let mut assignment = Vec::with_capacity(k);
    let mut used = vec![false; m];
    enumerate_fills(k, m, distinct, cap, &mut assignment, &mut used, &mut |fill: &[usize]| {
        let mut tokens = sketch.to_vec();
        for (&pos, &w) in slots.iter().zip(fill) {
            tokens[pos] = rare_words[w].clone();
        }
        out.push(FilledCandidate { tokens, fill: fill.to_vec(), flagged: false });
    });
    out
}

fn enumerate_fills(
    k: usize,
    m: usize,
    distinct: bool,
    cap: usize,
    assignment: &mut Vec<usize>,
    used: &mut [bool],
    emit: &mut dyn FnMut(&[usize]),
) -> usize {
    if assignment.len() == k {
        emit(assignment);
        return 1;
    }
    let mut produced = 0;
    for w in 0..m {
        if produced >= cap {
            break;
        }
        if distinct && used[w] {
            continue;
        }
        used[w] = true;
        assignment.push(w);
        produced += enumerate_fills(k, m, distinct, cap - produced, assignment, used, emit);
        assignment.pop();
        used[w] = false;
    }
    produced
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamRecord {
    /// Sketch tokens without the final EOS.
    pub sketch: Vec<String>,
    pub log_prob: f64,
    /// Persona chosen to fill this beam's slots.
    pub persona: Option<usize>,
}

/// Everything produced along the way to a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugRecord {
    pub fill_mode: FillMode,
    pub beams: Vec<BeamRecord>,
    /// Scored candidates pooled over all beams; empty in pointer mode
    /// without a scorer.
    pub candidates: Vec<ScoredCandidate>,
    /// Index into `candidates` of the returned response.
    pub winner: Option<usize>,
    /// Beam the response was built from; the attention rows and
    /// `decoder_tokens` describe its decoding steps.
    pub beam: usize,
    pub persona: Option<usize>,
    pub flagged: bool,
    pub conv_attn: Vec<Vec<f64>>,
    pub pers_attn: Vec<Vec<f64>>,
    pub memory_p: Vec<f64>,
    pub encoder_tokens: Vec<String>,
    pub decoder_tokens: Vec<String>,
    pub traits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub response: Vec<String>,
    pub debug: DebugRecord,
}

fn strip_eos(tokens: &[String]) -> Vec<String> {
    match tokens.last() {
        Some(t) if t == EOS_TOKEN => tokens[..tokens.len() - 1].to_vec(),
        _ => tokens.to_vec(),
    }
}

/// Generates a reply to `turns` as the agent described by `personas`.
/// Rerank mode requires a scorer.
pub fn generate_response(
    model: &SketchModel,
    scorer: Option<&dyn CandidateScorer>,
    personas: &[PersonaTrait],
    turns: &[Vec<String>],
    config: &GenerationConfig,
) -> Result<Generation> {
    config.validate()?;
    if config.fill_mode == FillMode::Rerank && scorer.is_none() {
        return Err(Error::InvalidArgument("rerank fill mode needs a language model".into()));
    }
    let history = model.encode_ids(&history_tokens(turns, config.max_turns));
    let traits = model.encode_traits(personas);
    let bank = MemoryBank::from_personas(personas, &model.vocab);
    let mut g = Graph::new(&model.store);
    let ctx = model.encode_context(&mut g, &history, &traits, &bank, &mut Dropout::inference())?;
    let memory_p = ctx.readout.p.map(|p| g.value(p).to_vec()).unwrap_or_default();
    let hyps = beam_search(&mut g, model, &ctx, config)?;
    let words = |ids: &[usize]| -> Result<Vec<String>> { model.vocab.decode(ids) };
    let mut beams = Vec::with_capacity(hyps.len());
    for h in &hyps {
        beams.push(BeamRecord {
            sketch: strip_eos(&words(&h.tokens)?),
            log_prob: h.log_prob,
            persona: select_persona(h, ctx.readout.p.map(|_| memory_p.as_slice()), &bank, personas.len()),
        });
    }

    let (response, candidates, winner, beam, flagged) = match config.fill_mode {
        FillMode::Rerank => {
            let scorer = scorer.expect("checked above");
            let mut pool: Vec<(usize, FilledCandidate)> = Vec::new();
            for (bi, rec) in beams.iter().enumerate() {
                let rare: &[String] = rec.persona.map_or(&[], |i| personas[i].rare_words.as_slice());
                for c in fill_candidates(&rec.sketch, rare, config.candidate_cap) {
                    pool.push((bi, c));
                }
            }
            let scores: Vec<Result<f64>> = pool.par_iter().map(|(_, c)| scorer.score(&c.tokens)).collect();
            let mut candidates = Vec::with_capacity(pool.len());
            let mut flags = Vec::with_capacity(pool.len());
            for ((bi, c), s) in pool.into_iter().zip(scores) {
                flags.push(c.flagged);
                candidates.push(ScoredCandidate { tokens: c.tokens, score: s?, beam: bi, fill: c.fill });
            }
            let w = rank(&candidates)?;
            let beam = candidates[w].beam;
            (candidates[w].tokens.clone(), candidates, Some(w), beam, flags[w])
        }
        FillMode::Pointer => {
            let top = &hyps[0];
            let mut dropout = Dropout::inference();
            let seq = teacher_forced_nll(&mut g, model, &top.tokens, ctx.init, &ctx.enc, &mut dropout)?;
            let mut prev = vec![EOS];
            prev.extend_from_slice(&top.tokens[..top.tokens.len() - 1]);
            let (locals, _) = pointer_distributions(&mut g, model, &ctx, &bank, &seq.steps, &prev)?;
            let dists = locals.iter().map(|l| l.dist(&g)).collect::<Result<Vec<_>>>()?;
            let fill = fill_with_pointer(&beams[0].sketch, &dists, &bank)?;
            let mut candidates = Vec::new();
            let mut winner = None;
            if let Some(s) = scorer {
                candidates.push(ScoredCandidate {
                    tokens: fill.tokens.clone(),
                    score: s.score(&fill.tokens)?,
                    beam: 0,
                    fill: fill
                        .choices
                        .iter()
                        .filter_map(|c| c.map(|i| bank.entries[i].rare_index))
                        .collect(),
                });
                winner = Some(0);
            }
            (fill.tokens, candidates, winner, 0, fill.flagged)
        }
    };

    let chosen = &hyps[beam];
    let steps = chosen.tokens.len().min(config.max_len);
    let debug = DebugRecord {
        fill_mode: config.fill_mode,
        persona: beams[beam].persona,
        beams,
        candidates,
        winner,
        beam,
        flagged,
        conv_attn: chosen.conv_attn.clone(),
        pers_attn: chosen.pers_attn.clone(),
        memory_p,
        encoder_tokens: model.history_words(&history),
        decoder_tokens: words(&chosen.tokens[..steps])?,
        traits: personas.iter().map(|p| p.text.clone()).collect(),
    };
    Ok(Generation { response, debug })
}

/// Attention matrices with their axis labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    /// Decoder steps × encoder positions.
    pub conv_attn: Vec<Vec<f64>>,
    /// Decoder steps × persona traits.
    pub pers_attn: Vec<Vec<f64>>,
    /// Memory readout weight per rare-word entry.
    pub memory_p: Vec<f64>,
    pub decoder_tokens: Vec<String>,
    pub encoder_tokens: Vec<String>,
    pub traits: Vec<String>,
}

impl From<&DebugRecord> for AttentionExport {
    fn from(r: &DebugRecord) -> Self {
        AttentionExport {
            conv_attn: r.conv_attn.clone(),
            pers_attn: r.pers_attn.clone(),
            memory_p: r.memory_p.clone(),
            decoder_tokens: r.decoder_tokens.clone(),
            encoder_tokens: r.encoder_tokens.clone(),
            traits: r.traits.clone(),
        }
    }
}

pub fn export_attention(record: &DebugRecord, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &AttentionExport::from(record))?;
    Ok(())
}

pub fn load_attention(path: &Path) -> Result<AttentionExport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
