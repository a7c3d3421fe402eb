//! Finite-difference check of the composed pipeline loss at toy size.

use crate::error::Result;
use crate::numerics::{grad_check, AdamWConfig, GradCheckReport};
use crate::pipeline::{init_params, Model, PipelineConfig, Query};
use crate::synth::{generate_scene, SceneConfig};
use crate::training::train::{clip_loss, Example, TrainConfig};

/// Step used by [`composed_gradcheck`].
pub const COMPOSED_STEP: f64 = 1e-3;

/// 8x8 frames, patch 2, `d = 8`, all thresholds at zero so that mining and
/// memory fusion are active on every clip.
pub fn toy_config(stages: usize) -> PipelineConfig {
    let mut gamma = vec![1.0; stages];
    if stages >= 2 {
        gamma[stages - 2] = 0.5;
    }
    PipelineConfig {
        stages,
        clip_len: 3,
        patch_size: 2,
        model_dim: 8,
        gamma,
        tau_t: 0.0,
        tau_d: 0.0,
        tau_s: 0.0,
        ..Default::default()
    }
}

/// Central-difference check of `clip_loss` over every parameter of the
/// toy network on a three-frame scene.
pub fn composed_gradcheck(stages: usize, per_param: usize, seed: u64) -> Result<GradCheckReport> {
    let scene = generate_scene(
        "toy",
        &SceneConfig {
            height: 8,
            width: 8,
            num_frames: 3,
            num_occurrences: 2,
            coverage: 0.5,
            target_scale: 0.45,
            seed,
            ..Default::default()
        },
    )?;
    let cfg = PipelineConfig {
        seed,
        ..toy_config(stages)
    };
    let tcfg = TrainConfig {
        steps: 1,
        adamw: AdamWConfig::default(),
        gamma: cfg.gamma.clone(),
        ..Default::default()
    };
    let store = init_params(&cfg)?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let ex = Example {
        frames: &scene.frames,
        query: Query {
            frame: &scene.query_frame,
            mask: &scene.query_mask,
        },
        gt: &scene.gt,
    };
    grad_check(&store, &names, COMPOSED_STEP, per_param, |g, st| {
        let model = Model::load(g, st, &cfg)?;
        Ok(clip_loss(g, &model, &cfg, &tcfg, ex, 0..3)?.0)
    })
}
