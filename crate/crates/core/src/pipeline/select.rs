//! Target and distractor mining over decoded candidates, and the final
//! per-frame choice.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mask::RleMask;
use crate::pipeline::model::{binarize_candidate, FrameCandidates};

/// One chosen candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub frame: usize,
    pub candidate: usize,
    pub iou_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<f64>,
}

/// Index of the highest `iou_score`; the lowest index wins ties.
pub fn best_candidate(fc: &FrameCandidates) -> usize {
    let mut best = 0;
    for (i, c) in fc.candidates.iter().enumerate().skip(1) {
        if c.iou_score > fc.candidates[best].iou_score {
            best = i;
        }
    }
    best
}

/// Per-frame best candidates with `iou_score >= tau_t`, the top `n_t` by score
/// (earlier frame first on ties).
pub fn tfg_select(frames: &[FrameCandidates], n_t: usize, tau_t: f64) -> Vec<Selection> {
    let mut picks: Vec<Selection> = frames
        .iter()
        .filter(|fc| !fc.candidates.is_empty())
        .map(|fc| {
            let b = best_candidate(fc);
            Selection {
                frame: fc.frame_index,
                candidate: b,
                iou_score: fc.candidates[b].iou_score,
                divergence: None,
            }
        })
        .filter(|s| s.iou_score >= tau_t)
        .collect();
    picks.sort_by(|a, b| {
        b.iou_score
            .total_cmp(&a.iou_score)
            .then(a.frame.cmp(&b.frame))
    });
    picks.truncate(n_t);
    picks
}

/// Alternatives to each frame's best candidate whose divergence from it
/// exceeds `tau_d` and whose score exceeds `tau_s`, ranked by
/// `divergence * iou_score` across the video (earlier frame, then lower
/// candidate index on ties), top `n_d` kept.
pub fn dfg_select(
    frames: &[FrameCandidates],
    patch: usize,
    n_d: usize,
    tau_d: f64,
    tau_s: f64,
) -> Result<Vec<Selection>> {
    let mut picks = Vec::new();
    for fc in frames.iter().filter(|fc| !fc.candidates.is_empty()) {
        let b = best_candidate(fc);
        let best_mask = binarize_candidate(&fc.candidates[b], patch)?;
        for (i, c) in fc.candidates.iter().enumerate() {
            if i == b || c.iou_score <= tau_s {
                continue;
            }
            let div = best_mask.divergence(&binarize_candidate(c, patch)?)?;
            if div > tau_d {
                picks.push(Selection {
                    frame: fc.frame_index,
                    candidate: i,
                    iou_score: c.iou_score,
                    divergence: Some(div),
                });
            }
        }
    }
    let key = |s: &Selection| s.divergence.unwrap_or(0.0) * s.iou_score;
    picks.sort_by(|a, b| {
        key(b)
            .total_cmp(&key(a))
            .then(a.frame.cmp(&b.frame))
            .then(a.candidate.cmp(&b.candidate))
    });
    picks.truncate(n_d);
    Ok(picks)
}

/// Best candidate per frame, kept only when its occlusion score is positive.
pub fn finalize_predictions(
    frames: &[FrameCandidates],
    patch: usize,
) -> Result<Vec<Option<RleMask>>> {
    frames
        .iter()
        .map(|fc| {
            if fc.candidates.is_empty() {
                return Ok(None);
            }
            let c = &fc.candidates[best_candidate(fc)];
            if c.occlusion_score > 0.0 {
                binarize_candidate(c, patch).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}
