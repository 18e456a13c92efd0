use rayon::prelude::*;

use super::{Gradients, Graph, ParamStore, Var};
use crate::error::Result;

/// Runs `f` on every item, back-propagates each returned loss, and sums the
/// gradients. Items are split into at most `chunks` contiguous runs that
/// are processed in parallel; each run accumulates in item order and runs
/// are reduced in order, so the result is independent of scheduling.
/// Per-item side values are returned in item order.
pub fn batch_gradients<T, S, F>(
    store: &ParamStore,
    items: &[T],
    chunks: usize,
    f: F,
) -> Result<(Vec<S>, Gradients)>
where
    T: Sync,
    S: Send,
    F: Fn(&mut Graph<'_>, &T) -> Result<(Var, S)> + Sync,
{
    if items.is_empty() {
        return Ok((Vec::new(), Gradients::new()));
    }
    let size = items.len().div_ceil(chunks.max(1));
    let partials: Vec<Result<(Vec<S>, Gradients)>> = items
        .par_chunks(size)
        .map(|run| {
            let mut grads = Gradients::new();
            let mut side = Vec::with_capacity(run.len());
            for item in run {
                let mut g = Graph::new(store);
                let (loss, s) = f(&mut g, item)?;
                g.backward(loss, &mut grads)?;
                side.push(s);
            }
            Ok((side, grads))
        })
        .collect();
    let mut total = Gradients::new();
    let mut side = Vec::with_capacity(items.len());
    for p in partials {
        let (s, g) = p?;
        side.extend(s);
        total.accumulate(&g);
    }
    Ok((side, total))
}
