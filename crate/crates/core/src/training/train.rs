//! Whole-scene training: every stage on every clip, gamma-weighted loss,
//! AdamW updates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{ResponseSet, RleMask};
use crate::numerics::{adamw_step, AdamWConfig, Graph, ParamStore, Tensor, Var};
use crate::par::{self, Execution};
use crate::pipeline::{clip_ranges, init_params, run_clip, Geometry, Model, PipelineConfig, Query};
use crate::training::losses::{frame_loss, total_loss_var, LossBreakdown, LossWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub adamw: AdamWConfig,
    /// Stage weights; must have one entry per stage.
    pub gamma: Vec<f64>,
    pub loss_weights: LossWeights,
    /// Record every `log_interval` steps (the first and last always).
    pub log_interval: usize,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            adamw: AdamWConfig::default(),
            gamma: vec![0.5, 1.0],
            loss_weights: LossWeights::default(),
            log_interval: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, cfg: &PipelineConfig) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.gamma.len() != cfg.stages {
            return Err(Error::Config(format!(
                "{} stage weights for {} stages",
                self.gamma.len(),
                cfg.stages
            )));
        }
        if !(self.adamw.lr >= 0.0 && self.adamw.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.adamw.lr)));
        }
        Ok(())
    }
}

/// Loss before the update of `step`; the point after the last step is the
/// trained model's loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: LossBreakdown,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,total,dice,mask_bce,iou_head,occ_bce\n");
    for p in curve {
        let l = &p.loss;
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            p.step, l.total, l.dice, l.mask_bce, l.iou_head, l.occlusion_bce
        ));
    }
    out
}

/// One training example: a video, its query and ground truth.
#[derive(Clone, Copy)]
pub struct Example<'a> {
    pub frames: &'a [Image],
    pub query: Query<'a>,
    pub gt: &'a ResponseSet,
}

/// Builds the loss of one clip inside `g`; the breakdown is gamma-weighted.
pub fn clip_loss(
    g: &mut Graph,
    model: &Model,
    cfg: &PipelineConfig,
    tcfg: &TrainConfig,
    ex: Example,
    clip: std::ops::Range<usize>,
) -> Result<(Var, LossBreakdown)> {
    let frames = &ex.frames[clip.clone()];
    let geo = Geometry::new(cfg, frames[0].height(), frames[0].width())?;
    let gt = ex.gt.frame_map();
    let empty = RleMask::empty(ex.gt.height(), ex.gt.width());
    let stages = run_clip(g, model, cfg, frames, clip.start, ex.query)?;
    let mut per_stage = Vec::with_capacity(stages.len());
    let mut breakdown = LossBreakdown::default();
    for (k, out) in stages.iter().enumerate() {
        let mut losses = Vec::with_capacity(out.candidate_vars.len());
        for (i, vars) in out.candidate_vars.iter().enumerate() {
            let mask = gt.get(&(clip.start + i)).copied().unwrap_or(&empty);
            let l = frame_loss(g, vars, mask, &geo, &tcfg.loss_weights)?;
            breakdown = breakdown + l.breakdown * tcfg.gamma[k];
            losses.push(l.total);
        }
        per_stage.push(losses);
    }
    Ok((total_loss_var(g, &per_stage, &tcfg.gamma)?, breakdown))
}

/// Loss and parameter gradients over all clips; clips are independent and
/// reduced in clip order.
pub fn loss_and_grads(
    store: &ParamStore,
    cfg: &PipelineConfig,
    tcfg: &TrainConfig,
    ex: Example,
    exec: Execution,
) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
    if ex.frames.is_empty() {
        return Err(Error::Empty("training video has no frames".into()));
    }
    let ranges = clip_ranges(ex.frames.len(), cfg.clip_len);
    let parts = par::try_map(exec, &ranges, |_, r| -> Result<_> {
        let mut g = Graph::new();
        let model = Model::load(&mut g, store, cfg)?;
        let (loss, breakdown) = clip_loss(&mut g, &model, cfg, tcfg, ex, r.clone())?;
        let grads = g.backward(loss)?.param_grads(&g, store);
        Ok((breakdown, grads))
    })?;
    let mut total = LossBreakdown::default();
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    for (b, gr) in parts {
        total = total + b;
        for (name, t) in gr {
            match grads.get_mut(&name) {
                Some(acc) => acc.add_assign(&t),
                None => {
                    grads.insert(name, t);
                }
            }
        }
    }
    Ok((total, grads))
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub store: ParamStore,
    pub curve: Vec<CurvePoint>,
}

/// Trains `store` on one example for `tcfg.steps` AdamW steps.
pub fn train(
    mut store: ParamStore,
    cfg: &PipelineConfig,
    tcfg: &TrainConfig,
    ex: Example,
    exec: Execution,
) -> Result<TrainOutput> {
    cfg.validate()?;
    tcfg.validate(cfg)?;
    let interval = tcfg.log_interval.max(1);
    let mut curve = Vec::new();
    for step in 0..=tcfg.steps {
        let (loss, grads) = loss_and_grads(&store, cfg, tcfg, ex, exec)?;
        if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                loss: loss.total,
            });
        }
        if step % interval == 0 || step == tcfg.steps {
            curve.push(CurvePoint { step, loss });
        }
        if step < tcfg.steps {
            adamw_step(&mut store, &grads, &tcfg.adamw)?;
        }
    }
    Ok(TrainOutput { store, curve })
}

/// Fresh parameters from `tcfg.seed`, trained on one example.
pub fn overfit_train(
    cfg: &PipelineConfig,
    tcfg: &TrainConfig,
    ex: Example,
    exec: Execution,
) -> Result<TrainOutput> {
    let init = init_params(&PipelineConfig {
        seed: tcfg.seed,
        ..cfg.clone()
    })?;
    train(init, cfg, tcfg, ex, exec)
}
