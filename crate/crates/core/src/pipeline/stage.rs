//! Stage composition, per-clip evolution and whole-video inference.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{ResponseSet, RleMask};
use crate::numerics::{Graph, ParamStore, Var};
use crate::par::{self, Execution};
use crate::pipeline::amg::amg_fuse;
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::model::{
    binarize_candidate, CandidateVars, FrameCandidates, Geometry, MaskCandidate, MemoryBank,
    MemoryEntry, MemoryKind, Model,
};
use crate::pipeline::select::{dfg_select, finalize_predictions, tfg_select, Selection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageProvenance {
    pub stage: usize,
    pub targets: Vec<Selection>,
    pub distractors: Vec<Selection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amg_weights: Option<Vec<f64>>,
}

pub struct StageOutput {
    /// Graph handles per clip frame, for the training losses.
    pub candidate_vars: Vec<Vec<CandidateVars>>,
    pub candidates: Vec<FrameCandidates>,
    pub provenance: StageProvenance,
    /// The next stage's memory; absent after the final stage.
    pub bank: Option<MemoryBank>,
}

/// The session-wide inputs of one stage.
pub struct StageContext<'a> {
    pub model: &'a Model,
    pub cfg: &'a PipelineConfig,
    pub geo: Geometry,
    /// Encoder features of each clip frame.
    pub features: &'a [Var],
    /// Absolute index of the first clip frame.
    pub offset: usize,
    pub m_init: MemoryEntry,
}

pub fn run_stage(
    g: &mut Graph,
    ctx: &StageContext,
    bank: &MemoryBank,
    stage: usize,
    is_final: bool,
) -> Result<StageOutput> {
    if ctx.features.is_empty() {
        return Err(Error::Empty("clip has no frames".into()));
    }
    if ctx.features.len() > ctx.cfg.clip_len {
        return Err(Error::Config(format!(
            "clip of {} frames exceeds clip length {}",
            ctx.features.len(),
            ctx.cfg.clip_len
        )));
    }
    let attended = ctx
        .features
        .iter()
        .map(|&f| ctx.model.memory_attention(g, f, bank))
        .collect::<Result<Vec<_>>>()?;
    let enhanced = ctx.model.stt_block(g, &attended)?;
    let mut candidate_vars = Vec::with_capacity(enhanced.len());
    let mut candidates = Vec::with_capacity(enhanced.len());
    for (i, &f) in enhanced.iter().enumerate() {
        let vars = ctx.model.decode_masks(g, f)?;
        candidates.push(FrameCandidates {
            frame_index: ctx.offset + i,
            candidates: vars
                .iter()
                .map(|c| MaskCandidate::from_vars(g, c, &ctx.geo))
                .collect::<Result<_>>()?,
        });
        candidate_vars.push(vars);
    }
    let mut provenance = StageProvenance {
        stage,
        targets: Vec::new(),
        distractors: Vec::new(),
        amg_weights: None,
    };
    if is_final {
        return Ok(StageOutput {
            candidate_vars,
            candidates,
            provenance,
            bank: None,
        });
    }
    let cfg = ctx.cfg;
    provenance.targets = tfg_select(&candidates, cfg.n_t, cfg.tau_t);
    provenance.distractors = dfg_select(&candidates, ctx.geo.patch, cfg.n_d, cfg.tau_d, cfg.tau_s)?;
    let encode = |g: &mut Graph, sel: &Selection, kind| -> Result<MemoryEntry> {
        let local = sel.frame - ctx.offset;
        let mask = binarize_candidate(&candidates[local].candidates[sel.candidate], ctx.geo.patch)?;
        ctx.model
            .encode_memory(g, ctx.features[local], &mask, &ctx.geo, kind)
    };
    let targets = provenance
        .targets
        .iter()
        .map(|s| encode(g, s, MemoryKind::Target))
        .collect::<Result<Vec<_>>>()?;
    let distractors = provenance
        .distractors
        .iter()
        .map(|s| encode(g, s, MemoryKind::Distractor))
        .collect::<Result<Vec<_>>>()?;
    let fused = amg_fuse(g, ctx.model, &ctx.m_init, &targets, &distractors)?;
    provenance.amg_weights = fused.weights.map(|w| g.value(w).data().to_vec());
    Ok(StageOutput {
        candidate_vars,
        candidates,
        provenance,
        bank: Some(fused.bank),
    })
}

/// The visual query: a frame from outside the video and its object mask.
#[derive(Clone, Copy)]
pub struct Query<'a> {
    pub frame: &'a Image,
    pub mask: &'a RleMask,
}

/// All stages over one clip; every stage fuses from the query memory.
pub fn run_clip(
    g: &mut Graph,
    model: &Model,
    cfg: &PipelineConfig,
    frames: &[Image],
    offset: usize,
    query: Query,
) -> Result<Vec<StageOutput>> {
    if query.mask.is_empty() {
        return Err(Error::Empty("query mask is empty".into()));
    }
    let first = frames
        .first()
        .ok_or_else(|| Error::Empty("clip has no frames".into()))?;
    let geo = Geometry::new(cfg, first.height(), first.width())?;
    let qgeo = Geometry::new(cfg, query.frame.height(), query.frame.width())?;
    let qf = model.encode_frame(g, query.frame, &qgeo)?;
    let m_init = model.encode_memory(g, qf, query.mask, &qgeo, MemoryKind::QueryInit)?;
    let features = frames
        .iter()
        .map(|f| model.encode_frame(g, f, &geo))
        .collect::<Result<Vec<_>>>()?;
    let ctx = StageContext {
        model,
        cfg,
        geo,
        features: &features,
        offset,
        m_init,
    };
    let mut bank = MemoryBank::new(vec![m_init])?;
    let mut outputs = Vec::with_capacity(cfg.stages);
    for k in 0..cfg.stages {
        let out = run_stage(g, &ctx, &bank, k, k + 1 == cfg.stages)?;
        if let Some(b) = &out.bank {
            bank = b.clone();
        }
        outputs.push(out);
    }
    Ok(outputs)
}

/// Consecutive non-overlapping clips of at most `clip_len` frames.
pub fn clip_ranges(num_frames: usize, clip_len: usize) -> Vec<Range<usize>> {
    let clip_len = clip_len.max(1);
    (0..num_frames)
        .step_by(clip_len)
        .map(|s| s..(s + clip_len).min(num_frames))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipProvenance {
    pub start: usize,
    pub len: usize,
    pub stages: Vec<StageProvenance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    pub response: ResponseSet,
    pub clips: Vec<ClipProvenance>,
}

pub fn infer_video(
    store: &ParamStore,
    cfg: &PipelineConfig,
    video_id: &str,
    frames: &[Image],
    query: Query,
    exec: Execution,
) -> Result<VideoPrediction> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Empty(format!("video {video_id} has no frames")));
    }
    if query.mask.is_empty() {
        return Err(Error::Empty(format!("query mask of {video_id} is empty")));
    }
    let (h, w) = (frames[0].height(), frames[0].width());
    if frames.iter().any(|f| (f.height(), f.width()) != (h, w)) {
        return Err(Error::Dimension(format!(
            "frames of {video_id} differ in size"
        )));
    }
    let ranges = clip_ranges(frames.len(), cfg.clip_len);
    let clips = par::try_map(exec, &ranges, |_, r| -> Result<_> {
        let mut g = Graph::new();
        let model = Model::load(&mut g, store, cfg)?;
        let stages = run_clip(&mut g, &model, cfg, &frames[r.clone()], r.start, query)?;
        let last = stages.last().expect("at least one stage");
        let masks = finalize_predictions(&last.candidates, cfg.patch_size)?;
        let prov = ClipProvenance {
            start: r.start,
            len: r.len(),
            stages: stages.into_iter().map(|s| s.provenance).collect(),
        };
        Ok((masks, prov))
    })?;
    let mut per_frame = Vec::with_capacity(frames.len());
    let mut provenance = Vec::with_capacity(clips.len());
    for (masks, prov) in clips {
        per_frame.extend(masks);
        provenance.push(prov);
    }
    Ok(VideoPrediction {
        response: ResponseSet::from_frames(video_id, h, w, per_frame)?,
        clips: provenance,
    })
}
