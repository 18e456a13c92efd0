use serde::{Deserialize, Serialize};

use crate::corpus::{PersonaTrait, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamId, Var};

use super::encoder::embed_row;

/// One rare word of one persona trait.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub persona: usize,
    pub rare_index: usize,
    pub token: usize,
    pub word: String,
}

/// Persona rare words in (trait, position) order. Words repeated across
/// traits get one entry per trait.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBank {
    pub entries: Vec<MemoryEntry>,
}

impl MemoryBank {
    pub fn from_personas(personas: &[PersonaTrait], vocab: &Vocabulary) -> Self {
        let entries = personas
            .iter()
            .enumerate()
            .flat_map(|(p, tr)| {
                tr.rare_words.iter().enumerate().map(move |(r, w)| MemoryEntry {
                    persona: p,
                    rare_index: r,
                    token: vocab.id(w),
                    word: w.clone(),
                })
            })
            .collect();
        MemoryBank { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, persona: usize, rare_index: usize) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.persona == persona && e.rare_index == rare_index)
    }

    pub fn tokens(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.token).collect()
    }

    /// Rows of `table` for every entry, stacked as an R × d matrix.
    pub fn embed(&self, g: &mut Graph<'_>, table: ParamId) -> Result<Var> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("memory bank is empty".into()));
        }
        let rows = self
            .entries
            .iter()
            .map(|e| embed_row(g, table, e.token))
            .collect::<Result<Vec<_>>>()?;
        g.stack(&rows)
    }
}

#[derive(Debug, Clone)]
pub struct MemoryReadout {
    pub h_mem: Var,
    /// Attention over bank entries; `None` for an empty bank.
    pub p: Option<Var>,
}

/// `p = softmax(C¹[x_r] · query)`, `h_mem = query + Σ_r p_r C²[x_r]`.
/// An empty bank reads out the query unchanged.
pub fn memory_readout(
    g: &mut Graph<'_>,
    query: Var,
    bank: &MemoryBank,
    c1: ParamId,
    c2: ParamId,
) -> Result<MemoryReadout> {
    if bank.is_empty() {
        return Ok(MemoryReadout { h_mem: query, p: None });
    }
    let keys = bank.embed(g, c1)?;
    let scores = g.matvec(keys, query)?;
    let p = g.softmax(scores)?;
    let values = bank.embed(g, c2)?;
    let o = g.vecmat(p, values)?;
    let h_mem = g.add(query, o)?;
    Ok(MemoryReadout { h_mem, p: Some(p) })
}
