//! Per-frame mask losses and the stage-weighted total.

use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::RleMask;
use crate::numerics::{Graph, Tensor, Var};
use crate::pipeline::{binarize_candidate, mask_fraction, CandidateVars, Geometry, MaskCandidate};

/// Component weights inside one frame's total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dice: f64,
    pub mask_bce: f64,
    pub iou_head: f64,
    pub occlusion: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            dice: 1.0,
            mask_bce: 1.0,
            iou_head: 1.0,
            occlusion: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dice: f64,
    pub mask_bce: f64,
    pub iou_head: f64,
    pub occlusion_bce: f64,
    pub total: f64,
}

impl Add for LossBreakdown {
    type Output = LossBreakdown;
    fn add(self, o: LossBreakdown) -> LossBreakdown {
        LossBreakdown {
            dice: self.dice + o.dice,
            mask_bce: self.mask_bce + o.mask_bce,
            iou_head: self.iou_head + o.iou_head,
            occlusion_bce: self.occlusion_bce + o.occlusion_bce,
            total: self.total + o.total,
        }
    }
}

impl Mul<f64> for LossBreakdown {
    type Output = LossBreakdown;
    fn mul(self, k: f64) -> LossBreakdown {
        LossBreakdown {
            dice: self.dice * k,
            mask_bce: self.mask_bce * k,
            iou_head: self.iou_head * k,
            occlusion_bce: self.occlusion_bce * k,
            total: self.total * k,
        }
    }
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.dice,
            self.mask_bce,
            self.iou_head,
            self.occlusion_bce,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `1 - 2 sum(p g) / (sum(p) + sum(g))`; 0 when both are all zero.
pub fn soft_dice(p: &[f64], g: &[f64]) -> f64 {
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let denom: f64 = p.iter().sum::<f64>() + g.iter().sum::<f64>();
    if denom == 0.0 {
        0.0
    } else {
        1.0 - 2.0 * inter / denom
    }
}

/// Per-patch targets `[tokens, 1]`: 1 where at least half the patch is
/// foreground.
pub fn downsample_gt(mask: &RleMask, geo: &Geometry) -> Result<Tensor> {
    Ok(mask_fraction(mask, geo)?.map(|f| if f >= 0.5 { 1.0 } else { 0.0 }))
}

/// Pixel IoU of every binarized candidate with `gt`, and the index of the
/// best one (lowest index on ties).
pub fn route(
    candidates: &[MaskCandidate],
    gt: &RleMask,
    patch: usize,
) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidates to supervise".into()));
    }
    let ious = candidates
        .iter()
        .map(|c| binarize_candidate(c, patch)?.iou(gt))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &v) in ious.iter().enumerate().skip(1) {
        if v > ious[best] {
            best = i;
        }
    }
    Ok((best, ious))
}

pub struct FrameLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Loss of one frame's candidates against its ground truth (empty when the
/// target is absent).
pub fn frame_loss(
    g: &mut Graph,
    candidates: &[CandidateVars],
    gt: &RleMask,
    geo: &Geometry,
    weights: &LossWeights,
) -> Result<FrameLoss> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidates to supervise".into()));
    }
    let n = candidates.len();
    let occ: Vec<Var> = candidates.iter().map(|c| c.occlusion).collect();
    let occ = g.concat_rows(&occ)?;
    let present = if gt.is_empty() { 0.0 } else { 1.0 };
    let occ_bce = g.bce_with_logits(occ, Tensor::filled(&[n, 1], present))?;
    let occ_term = g.scale(occ_bce, weights.occlusion);
    if gt.is_empty() {
        let breakdown = LossBreakdown {
            occlusion_bce: g.value(occ_bce).item(),
            total: g.value(occ_term).item(),
            ..Default::default()
        };
        return Ok(FrameLoss {
            total: occ_term,
            breakdown,
        });
    }

    let decoded = candidates
        .iter()
        .map(|c| MaskCandidate::from_vars(g, c, geo))
        .collect::<Result<Vec<_>>>()?;
    let (best, actual) = route(&decoded, gt, geo.patch)?;
    let target = downsample_gt(gt, geo)?;
    let target_sum = target.sum();

    let logits = candidates[best].logits;
    let p = g.sigmoid(logits);
    let t = g.input(target.clone());
    let pt = g.mul(p, t)?;
    let inter = g.sum(pt);
    let psum = g.sum(p);
    let denom = g.add_const(psum, target_sum);
    let ratio = g.div(inter, denom)?;
    let neg = g.scale(ratio, -2.0);
    let dice = g.add_const(neg, 1.0);
    let bce = g.bce_with_logits(logits, target)?;

    let ious: Vec<Var> = candidates.iter().map(|c| c.iou).collect();
    let ious = g.concat_rows(&ious)?;
    let actual = g.input(Tensor::matrix(n, 1, actual)?);
    let diff = g.sub(ious, actual)?;
    let abs = g.abs(diff);
    let iou_l1 = g.mean(abs);

    let parts = [
        g.scale(dice, weights.dice),
        g.scale(bce, weights.mask_bce),
        g.scale(iou_l1, weights.iou_head),
    ];
    let mut total = occ_term;
    for part in parts {
        total = g.add(total, part)?;
    }
    let breakdown = LossBreakdown {
        dice: g.value(dice).item(),
        mask_bce: g.value(bce).item(),
        iou_head: g.value(iou_l1).item(),
        occlusion_bce: g.value(occ_bce).item(),
        total: g.value(total).item(),
    };
    Ok(FrameLoss { total, breakdown })
}

/// `sum_k gamma_k stage_sums[k]`.
pub fn total_loss(stage_sums: &[f64], gamma: &[f64]) -> Result<f64> {
    check_gamma(stage_sums.len(), gamma)?;
    Ok(stage_sums.iter().zip(gamma).map(|(s, g)| s * g).sum())
}

/// Graph form of [`total_loss`] over per-stage, per-frame losses.
pub fn total_loss_var(g: &mut Graph, stages: &[Vec<Var>], gamma: &[f64]) -> Result<Var> {
    check_gamma(stages.len(), gamma)?;
    let mut total = g.constant(0.0);
    for (frames, &gk) in stages.iter().zip(gamma) {
        for &l in frames {
            let w = g.scale(l, gk);
            total = g.add(total, w)?;
        }
    }
    Ok(total)
}

fn check_gamma(stages: usize, gamma: &[f64]) -> Result<()> {
    if stages != gamma.len() {
        return Err(Error::Config(format!(
            "{} stage weights for {} stages",
            gamma.len(),
            stages
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::PipelineConfig;

    fn geo(h: usize, w: usize, patch: usize) -> Geometry {
        let cfg = PipelineConfig {
            patch_size: patch,
            ..Default::default()
        };
        Geometry::new(&cfg, h, w).unwrap()
    }

    fn cands(g: &mut Graph, logits: &[Vec<f64>], iou: &[f64], occ: &[f64]) -> Vec<CandidateVars> {
        logits
            .iter()
            .zip(iou.iter().zip(occ))
            .map(|(l, (&i, &o))| CandidateVars {
                logits: g.input(Tensor::matrix(l.len(), 1, l.clone()).unwrap()),
                iou: g.input(Tensor::scalar(i).reshape(&[1, 1]).unwrap()),
                occlusion: g.input(Tensor::scalar(o).reshape(&[1, 1]).unwrap()),
            })
            .collect()
    }

    #[test]
    fn dice_examples() {
        assert_eq!(soft_dice(&[1.0, 0.0, 1.0, 0.0], &[1.0, 0.0, 1.0, 0.0]), 0.0);
        assert_eq!(soft_dice(&[0.5; 4], &[1.0, 1.0, 0.0, 0.0]), 0.5);
        assert_eq!(soft_dice(&[0.0; 3], &[0.0; 3]), 0.0);
        assert_eq!(soft_dice(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
    }

    #[test]
    fn uniform_half_probability_dice_in_graph() {
        let geo = geo(2, 2, 1);
        let gt = RleMask::encode_slice(2, 2, &[1, 1, 0, 0]).unwrap();
        let mut g = Graph::new();
        let c = cands(&mut g, &vec![vec![0.0; 4]; 3], &[0.5; 3], &[0.0; 3]);
        let l = frame_loss(&mut g, &c, &gt, &geo, &LossWeights::default()).unwrap();
        assert!((l.breakdown.dice - 0.5).abs() < 1e-15);
        assert!((l.breakdown.mask_bce - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_gt_only_occlusion() {
        let geo = geo(4, 4, 2);
        let gt = RleMask::empty(4, 4);
        let mut g = Graph::new();
        let c = cands(
            &mut g,
            &[vec![3.0; 4], vec![-1.0; 4], vec![0.2; 4]],
            &[0.9, 0.1, 0.4],
            &[2.0, -1.0, 0.0],
        );
        let l = frame_loss(&mut g, &c, &gt, &geo, &LossWeights::default()).unwrap();
        let b = l.breakdown;
        assert_eq!((b.dice, b.mask_bce, b.iou_head), (0.0, 0.0, 0.0));
        assert!(b.occlusion_bce > 0.0);
        assert_eq!(b.total, b.occlusion_bce);
        let grads = g.backward(l.total).unwrap();
        assert!(grads.get(c[0].logits).is_none());
        assert!(grads.get(c[0].occlusion).is_some());
    }

    #[test]
    fn routing_picks_best_actual_iou() {
        let geo = geo(4, 4, 2);
        // gt covers the top-left patch only
        let mut bits = vec![0u8; 16];
        for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            bits[y * 4 + x] = 1;
        }
        let gt = RleMask::encode_slice(4, 4, &bits).unwrap();
        let mut g = Graph::new();
        let c = cands(
            &mut g,
            &[
                vec![1.0; 4],
                vec![1.0, -1.0, -1.0, -1.0],
                vec![1.0, -1.0, -1.0, -1.0],
            ],
            &[0.25, 1.0, 0.0],
            &[1.0; 3],
        );
        let l = frame_loss(&mut g, &c, &gt, &geo, &LossWeights::default()).unwrap();
        // candidate 1 wins (ties with 2, lower index); iou head errors 0, 0, 1
        assert!((l.breakdown.iou_head - 1.0 / 3.0).abs() < 1e-15);
        let grads = g.backward(l.total).unwrap();
        assert!(grads.get(c[1].logits).is_some());
        assert!(grads.get(c[0].logits).is_none());
        assert!(grads.get(c[2].logits).is_none());
    }

    #[test]
    fn components_non_negative_and_sum() {
        let geo = geo(4, 4, 2);
        let gt =
            RleMask::encode_slice(4, 4, &[1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]).unwrap();
        let w = LossWeights {
            dice: 0.5,
            mask_bce: 2.0,
            iou_head: 3.0,
            occlusion: 0.25,
        };
        for s in 0..20 {
            let v = |k: usize| ((s * 7 + k) as f64 * 0.61).sin() * 4.0;
            let mut g = Graph::new();
            let logits: Vec<Vec<f64>> = (0..3)
                .map(|c| (0..4).map(|i| v(c * 4 + i)).collect())
                .collect();
            let c = cands(&mut g, &logits, &[0.3, 0.6, 0.9], &[v(20), v(21), v(22)]);
            let b = frame_loss(&mut g, &c, &gt, &geo, &w).unwrap().breakdown;
            assert!(b.dice >= 0.0 && b.dice <= 1.0);
            assert!(b.mask_bce >= 0.0 && b.iou_head >= 0.0 && b.occlusion_bce >= 0.0);
            let expect =
                0.5 * b.dice + 2.0 * b.mask_bce + 3.0 * b.iou_head + 0.25 * b.occlusion_bce;
            assert!((b.total - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gt_downsampling_threshold() {
        let geo = geo(2, 4, 2);
        // left patch 2/4 on, right patch 1/4 on
        let gt = RleMask::encode_slice(2, 4, &[1, 1, 0, 1, 0, 0, 0, 0]).unwrap();
        assert_eq!(downsample_gt(&gt, &geo).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(&[2.0, 3.0], &[0.5, 1.0]).unwrap(), 4.0);
        assert_eq!(total_loss(&[2.0, 3.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(total_loss(&[1.25], &[0.5]).unwrap(), 0.625);
        assert!(matches!(
            total_loss(&[1.0], &[0.5, 1.0]),
            Err(Error::Config(_))
        ));
        let a = total_loss(&[0.7, 1.9], &[0.5, 1.0]).unwrap();
        let b = total_loss(&[0.7, 1.9], &[1.0, 2.0]).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn total_loss_var_matches() {
        let mut g = Graph::new();
        let frames: Vec<Var> = [1.0, 0.5, 0.25, 2.0]
            .iter()
            .map(|&v| g.input(Tensor::scalar(v)))
            .collect();
        let t = total_loss_var(
            &mut g,
            &[frames[..2].to_vec(), frames[2..].to_vec()],
            &[0.5, 1.0],
        )
        .unwrap();
        assert_eq!(g.value(t).item(), 0.5 * 1.5 + 2.25);
        assert!(total_loss_var(&mut g, std::slice::from_ref(&frames), &[0.5, 1.0]).is_err());
    }
}
