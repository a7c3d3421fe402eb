//! Adaptive memory generation: learned softmax weights over the query,
//! target and distractor memory.

use crate::error::Result;
use crate::numerics::{Graph, Tensor, Var};
use crate::pipeline::model::{MemoryBank, MemoryEntry, Model};

pub struct AmgOutput {
    pub bank: MemoryBank,
    /// `[1, 3]`, `[1, 2]` without distractors, absent when nothing was mined.
    pub weights: Option<Var>,
}

fn pool(g: &mut Graph, entries: &[MemoryEntry]) -> Result<Var> {
    let tokens: Vec<Var> = entries.iter().map(|e| e.tokens).collect();
    let all = if tokens.len() == 1 {
        tokens[0]
    } else {
        g.concat_rows(&tokens)?
    };
    Ok(g.mean_rows(all))
}

/// Builds the next bank from the original query memory plus mined entries.
pub fn amg_fuse(
    g: &mut Graph,
    model: &Model,
    m_init: &MemoryEntry,
    targets: &[MemoryEntry],
    distractors: &[MemoryEntry],
) -> Result<AmgOutput> {
    if targets.is_empty() && distractors.is_empty() {
        return Ok(AmgOutput {
            bank: MemoryBank::new(vec![MemoryEntry {
                scale: None,
                ..*m_init
            }])?,
            weights: None,
        });
    }
    let init = g.mean_rows(m_init.tokens);
    let reduced_t = if targets.is_empty() {
        g.input(Tensor::zeros(&[1, model.dim / 2]))
    } else {
        let p = pool(g, targets)?;
        model.reduce_t.forward(g, p)?
    };
    let weights = if distractors.is_empty() {
        let x = g.concat_cols(&[init, reduced_t])?;
        let logits = model.head2.forward(g, x)?;
        g.softmax(logits)
    } else {
        let p = pool(g, distractors)?;
        let reduced_d = model.reduce_d.forward(g, p)?;
        let x = g.concat_cols(&[init, reduced_t, reduced_d])?;
        let logits = model.head3.forward(g, x)?;
        g.softmax(logits)
    };
    let w1 = g.slice_cols(weights, 0, 1)?;
    let w2 = g.slice_cols(weights, 1, 1)?;
    let mut entries = vec![m_init.with_scale(w1)];
    entries.extend(targets.iter().map(|t| t.with_scale(w2)));
    if !distractors.is_empty() {
        let w3 = g.slice_cols(weights, 2, 1)?;
        entries.extend(distractors.iter().map(|d| d.with_scale(w3)));
    }
    Ok(AmgOutput {
        bank: MemoryBank::new(entries)?,
        weights: Some(weights),
    })
}
