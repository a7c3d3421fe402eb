//! The toy network: patch encoder, memory encoder, memory attention, the
//! spatio-temporal transformer block and the multi-candidate mask decoder.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{Bitmap, RleMask};
use crate::numerics::layers::{Attention, Linear, Mlp};
use crate::numerics::params::{seeded_init, ParamSpec, ParamStore};
use crate::numerics::{Graph, Tensor, Var};
use crate::pipeline::config::{PipelineConfig, CANDIDATES};

/// Frame and feature-grid sizes for one video.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl Geometry {
    pub fn new(cfg: &PipelineConfig, height: usize, width: usize) -> Result<Self> {
        let (grid_h, grid_w) = cfg.check_frame(height, width)?;
        Ok(Geometry {
            height,
            width,
            patch: cfg.patch_size,
            grid_h,
            grid_w,
        })
    }

    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    QueryInit,
    Target,
    Distractor,
}

/// Encoded memory tokens `[tokens, d]` with an optional one-element scale.
/// No scale means 1.
#[derive(Clone, Copy, Debug)]
pub struct MemoryEntry {
    pub tokens: Var,
    pub kind: MemoryKind,
    pub scale: Option<Var>,
}

impl MemoryEntry {
    pub fn with_scale(self, scale: Var) -> Self {
        MemoryEntry {
            scale: Some(scale),
            ..self
        }
    }
}

#[derive(Clone, Debug)]
pub struct MemoryBank {
    entries: Vec<MemoryEntry>,
}

impl MemoryBank {
    pub fn new(entries: Vec<MemoryEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("memory bank has no entries".into()));
        }
        if !entries.iter().any(|e| e.kind == MemoryKind::QueryInit) {
            return Err(Error::Config("memory bank lacks a query entry".into()));
        }
        Ok(MemoryBank { entries })
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn count(&self, kind: MemoryKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }
}

/// Graph handles for one decoded candidate.
#[derive(Clone, Copy, Debug)]
pub struct CandidateVars {
    /// `[tokens, 1]`
    pub logits: Var,
    /// `[1, 1]`, sigmoid output
    pub iou: Var,
    /// `[1, 1]`, raw logit
    pub occlusion: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskCandidate {
    /// `[grid_h, grid_w]`
    pub mask_logits: Tensor,
    pub iou_score: f64,
    pub occlusion_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameCandidates {
    pub frame_index: usize,
    pub candidates: Vec<MaskCandidate>,
}

impl MaskCandidate {
    pub fn from_vars(g: &Graph, c: &CandidateVars, geo: &Geometry) -> Result<Self> {
        Ok(MaskCandidate {
            mask_logits: g.value(c.logits).reshape(&[geo.grid_h, geo.grid_w])?,
            iou_score: g.value(c.iou).item(),
            occlusion_score: g.value(c.occlusion).item(),
        })
    }
}

/// Logits `> 0`, each cell replicated to a `patch x patch` block.
pub fn binarize_candidate(c: &MaskCandidate, patch: usize) -> Result<RleMask> {
    let (gh, gw) = match c.mask_logits.shape() {
        &[h, w] => (h, w),
        s => return Err(Error::Shape(format!("mask logits of shape {s:?}"))),
    };
    let (h, w) = (gh * patch, gw * patch);
    let mut bits = vec![false; h * w];
    for (i, &l) in c.mask_logits.data().iter().enumerate() {
        if l > 0.0 {
            let (gy, gx) = (i / gw, i % gw);
            for y in gy * patch..(gy + 1) * patch {
                bits[y * w + gx * patch..y * w + (gx + 1) * patch].fill(true);
            }
        }
    }
    Ok(RleMask::encode(&Bitmap::new(h, w, bits)?))
}

/// Non-overlapping patches flattened as `(dy, dx, channel)`, scaled to `[0, 1]`.
pub fn patchify(img: &Image, geo: &Geometry) -> Result<Tensor> {
    if (img.height(), img.width()) != (geo.height, geo.width) {
        return Err(Error::Dimension(format!(
            "frame {}x{} in a {}x{} video",
            img.height(),
            img.width(),
            geo.height,
            geo.width
        )));
    }
    let p = geo.patch;
    let mut data = Vec::with_capacity(geo.tokens() * 3 * p * p);
    for gy in 0..geo.grid_h {
        for gx in 0..geo.grid_w {
            for dy in 0..p {
                for dx in 0..p {
                    let px = img.pixel(gy * p + dy, gx * p + dx);
                    data.extend(px.iter().map(|&v| v as f64 / 255.0));
                }
            }
        }
    }
    Tensor::matrix(geo.tokens(), 3 * p * p, data)
}

/// 2D sinusoidal encoding: the first half of the channels encodes the row,
/// the second half the column, each as `sin, cos` pairs of `d/4` frequencies.
pub fn positional_encoding(grid_h: usize, grid_w: usize, dim: usize) -> Tensor {
    let q = dim / 4;
    let mut data = Vec::with_capacity(grid_h * grid_w * dim);
    for y in 0..grid_h {
        for x in 0..grid_w {
            let mut row = vec![0.0; dim];
            for i in 0..q {
                let freq = 1.0 / libm::pow(10000.0, i as f64 / q as f64);
                row[i] = libm::sin(y as f64 * freq);
                row[q + i] = libm::cos(y as f64 * freq);
                row[2 * q + i] = libm::sin(x as f64 * freq);
                row[3 * q + i] = libm::cos(x as f64 * freq);
            }
            data.extend(row);
        }
    }
    Tensor::matrix(grid_h * grid_w, dim, data).expect("sizes agree")
}

/// Foreground fraction of each patch, `[tokens, 1]`.
pub fn mask_fraction(mask: &RleMask, geo: &Geometry) -> Result<Tensor> {
    if mask.dims() != (geo.height, geo.width) {
        return Err(Error::Dimension(format!(
            "mask {}x{} for a {}x{} frame",
            mask.height(),
            mask.width(),
            geo.height,
            geo.width
        )));
    }
    let p = geo.patch;
    let mut counts = vec![0usize; geo.tokens()];
    for (start, end) in mask.foreground_intervals() {
        for i in start..end {
            let (y, x) = (i / geo.width, i % geo.width);
            counts[(y / p) * geo.grid_w + x / p] += 1;
        }
    }
    let area = (p * p) as f64;
    Tensor::matrix(
        geo.tokens(),
        1,
        counts.into_iter().map(|c| c as f64 / area).collect(),
    )
}

pub fn param_specs(cfg: &PipelineConfig) -> Vec<ParamSpec> {
    let d = cfg.model_dim;
    let p = cfg.patch_size;
    let mut v = Linear::specs("enc", 3 * p * p, d);
    v.extend(Linear::specs("mem", d + 1, d));
    v.extend(Attention::specs("mem_att", d));
    v.extend(Attention::specs("stt.att", d));
    v.extend(Mlp::specs("stt.mlp", d, 2 * d, d));
    for h in 0..CANDIDATES {
        v.extend(Linear::specs(&format!("dec.mask{h}"), d, 1));
        v.extend(Mlp::specs(&format!("dec.score{h}"), 2 * d, d, 2));
    }
    v.extend(Mlp::specs("amg.reduce_t", d, d, d / 2));
    v.extend(Mlp::specs("amg.reduce_d", d, d, d / 2));
    v.extend(Mlp::specs("amg.head3", 2 * d, d, 3));
    v.extend(Mlp::specs("amg.head2", d + d / 2, d, 2));
    v
}

pub fn init_params(cfg: &PipelineConfig) -> Result<ParamStore> {
    cfg.validate()?;
    seeded_init(&param_specs(cfg), cfg.seed)
}

/// Parameter handles of the whole network inside one graph.
#[derive(Clone, Copy, Debug)]
pub struct Model {
    pub dim: usize,
    pub enc: Linear,
    pub mem: Linear,
    pub mem_att: Attention,
    pub stt_att: Attention,
    pub stt_mlp: Mlp,
    pub mask_heads: [Linear; CANDIDATES],
    pub score_heads: [Mlp; CANDIDATES],
    pub reduce_t: Mlp,
    pub reduce_d: Mlp,
    pub head3: Mlp,
    pub head2: Mlp,
}

impl Model {
    pub fn load(g: &mut Graph, store: &ParamStore, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let enc = Linear::load(g, store, "enc")?;
        let expect = 3 * cfg.patch_size * cfg.patch_size;
        if g.value(enc.w).shape() != [expect, cfg.model_dim] {
            return Err(Error::Config(format!(
                "parameters do not match patch size {} and model dim {}",
                cfg.patch_size, cfg.model_dim
            )));
        }
        let mut mask_heads = [enc; CANDIDATES];
        let mut score_heads = Vec::with_capacity(CANDIDATES);
        for h in 0..CANDIDATES {
            mask_heads[h] = Linear::load(g, store, &format!("dec.mask{h}"))?;
            score_heads.push(Mlp::load(g, store, &format!("dec.score{h}"))?);
        }
        Ok(Model {
            dim: cfg.model_dim,
            enc,
            mem: Linear::load(g, store, "mem")?,
            mem_att: Attention::load(g, store, "mem_att", cfg.heads)?,
            stt_att: Attention::load(g, store, "stt.att", cfg.heads)?,
            stt_mlp: Mlp::load(g, store, "stt.mlp")?,
            mask_heads,
            score_heads: score_heads.try_into().expect("one per candidate"),
            reduce_t: Mlp::load(g, store, "amg.reduce_t")?,
            reduce_d: Mlp::load(g, store, "amg.reduce_d")?,
            head3: Mlp::load(g, store, "amg.head3")?,
            head2: Mlp::load(g, store, "amg.head2")?,
        })
    }

    /// Frame features `[tokens, d]`.
    pub fn encode_frame(&self, g: &mut Graph, img: &Image, geo: &Geometry) -> Result<Var> {
        let x = g.input(patchify(img, geo)?);
        let y = self.enc.forward(g, x)?;
        let pe = g.input(positional_encoding(geo.grid_h, geo.grid_w, self.dim));
        g.add(y, pe)
    }

    pub fn encode_memory(
        &self,
        g: &mut Graph,
        features: Var,
        mask: &RleMask,
        geo: &Geometry,
        kind: MemoryKind,
    ) -> Result<MemoryEntry> {
        let m = g.input(mask_fraction(mask, geo)?);
        let x = g.concat_cols(&[features, m])?;
        Ok(MemoryEntry {
            tokens: self.mem.forward(g, x)?,
            kind,
            scale: None,
        })
    }

    /// `f + Attn(f, bank, bank)` with entry scales acting as a prior over keys.
    pub fn memory_attention(&self, g: &mut Graph, features: Var, bank: &MemoryBank) -> Result<Var> {
        let tokens: Vec<Var> = bank.entries.iter().map(|e| e.tokens).collect();
        let kv = if tokens.len() == 1 {
            tokens[0]
        } else {
            g.concat_rows(&tokens)?
        };
        let prior = if bank.entries.iter().any(|e| e.scale.is_some()) {
            let mut parts = Vec::with_capacity(bank.entries.len());
            for e in &bank.entries {
                let n = g.value(e.tokens).rows();
                let s = match e.scale {
                    Some(s) => s,
                    None => g.constant(1.0),
                };
                parts.push(g.broadcast(s, n)?);
            }
            Some(if parts.len() == 1 {
                parts[0]
            } else {
                g.concat_cols(&parts)?
            })
        } else {
            None
        };
        let a = self.mem_att.forward(g, features, kv, kv, prior)?;
        g.add(features, a)
    }

    /// Self-attention and MLP with residuals over all tokens of the clip.
    pub fn stt_block(&self, g: &mut Graph, frames: &[Var]) -> Result<Vec<Var>> {
        if frames.is_empty() {
            return Err(Error::Empty("clip has no frames".into()));
        }
        let n = g.value(frames[0]).rows();
        let x = if frames.len() == 1 {
            frames[0]
        } else {
            g.concat_rows(frames)?
        };
        let a = self.stt_att.forward(g, x, x, x, None)?;
        let x = g.add(x, a)?;
        let m = self.stt_mlp.forward(g, x)?;
        let x = g.add(x, m)?;
        (0..frames.len())
            .map(|i| g.slice_rows(x, i * n, n))
            .collect()
    }

    pub fn decode_masks(&self, g: &mut Graph, features: Var) -> Result<Vec<CandidateVars>> {
        let n = g.value(features).rows();
        let pooled = g.mean_rows(features);
        let mut out = Vec::with_capacity(CANDIDATES);
        for h in 0..CANDIDATES {
            let logits = self.mask_heads[h].forward(g, features)?;
            let probs = g.sigmoid(logits);
            let probs = g.reshape(probs, &[1, n])?;
            let masked = g.matmul(probs, features)?;
            let masked = g.scale(masked, 1.0 / n as f64);
            let x = g.concat_cols(&[pooled, masked])?;
            let s = self.score_heads[h].forward(g, x)?;
            let iou = g.slice_cols(s, 0, 1)?;
            let iou = g.sigmoid(iou);
            let occlusion = g.slice_cols(s, 1, 1)?;
            out.push(CandidateVars {
                logits,
                iou,
                occlusion,
            });
        }
        Ok(out)
    }
}
