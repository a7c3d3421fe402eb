use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Candidates decoded per frame.
pub const CANDIDATES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Number of stages K.
    pub stages: usize,
    /// Clip length L in frames.
    pub clip_len: usize,
    pub candidates: usize,
    pub n_t: usize,
    pub n_d: usize,
    pub tau_t: f64,
    pub tau_d: f64,
    pub tau_s: f64,
    pub patch_size: usize,
    pub model_dim: usize,
    pub heads: usize,
    /// Per-stage loss weights, one per stage.
    pub gamma: Vec<f64>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: 2,
            clip_len: 7,
            candidates: CANDIDATES,
            n_t: 2,
            n_d: 1,
            tau_t: 0.5,
            tau_d: 0.5,
            tau_s: 0.7,
            patch_size: 8,
            model_dim: 32,
            heads: 2,
            gamma: vec![0.5, 1.0],
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.stages == 0 {
            return fail("stage count must be at least 1".into());
        }
        if self.gamma.len() != self.stages {
            return fail(format!(
                "{} loss weights for {} stages",
                self.gamma.len(),
                self.stages
            ));
        }
        if self.candidates != CANDIDATES {
            return fail(format!("candidate count is fixed at {CANDIDATES}"));
        }
        if self.clip_len == 0 {
            return fail("clip length must be at least 1".into());
        }
        for (name, v) in [
            ("tau_t", self.tau_t),
            ("tau_d", self.tau_d),
            ("tau_s", self.tau_s),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return fail("loss weights must be finite and non-negative".into());
        }
        if self.patch_size == 0 {
            return fail("patch size must be positive".into());
        }
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(4) {
            return fail(format!(
                "model dim {} must be a positive multiple of 4",
                self.model_dim
            ));
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "model dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            ));
        }
        Ok(())
    }

    /// Checks that frames of this size split into whole patches.
    pub fn check_frame(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if height == 0
            || width == 0
            || !height.is_multiple_of(self.patch_size)
            || !width.is_multiple_of(self.patch_size)
        {
            return Err(Error::Dimension(format!(
                "frame {height}x{width} is not divisible by patch size {}",
                self.patch_size
            )));
        }
        Ok((height / self.patch_size, width / self.patch_size))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
