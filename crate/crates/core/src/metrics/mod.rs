//! Spatio-temporal evaluation of response sets.
//!
//! Per video we compute the pixel-level spatio-temporal IoU, the frame-set
//! temporal IoU, recovery, and success; the dataset report averages these
//! over videos (stAP/tAP families, Rec, Succ) overall and per object-size
//! subset.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::ResponseSet;
use crate::par::{self, Execution};

pub use report::{report_csv, report_json};

pub const RECOVERY_IOU: f64 = 0.5;
pub const SUCCESS_ST_IOU: f64 = 0.2;
pub const AP_THRESHOLDS: [f64; 2] = [0.5, 0.75];

fn check_dims(gt: &ResponseSet, pred: &ResponseSet) -> Result<()> {
    if gt.dims() != pred.dims() {
        return Err(Error::Dimension(format!(
            "video {}: gt is {:?} but prediction is {:?}",
            gt.video_id(),
            gt.dims(),
            pred.dims()
        )));
    }
    Ok(())
}

/// Spatio-temporal IoU: summed per-frame intersections over summed unions.
pub fn st_iou(gt: &ResponseSet, pred: &ResponseSet) -> Result<f64> {
    check_dims(gt, pred)?;
    let pred_frames = pred.frame_map();
    let mut inter = 0usize;
    for (t, g) in gt.frames() {
        if let Some(p) = pred_frames.get(&t) {
            inter += g.intersection_area(p)?;
        }
    }
    let gt_area: usize = gt.frames().map(|(_, m)| m.area()).sum();
    let pred_area: usize = pred.frames().map(|(_, m)| m.area()).sum();
    let union = gt_area + pred_area - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Temporal IoU over the sets of frames carrying a mask.
pub fn t_iou(gt: &ResponseSet, pred: &ResponseSet) -> f64 {
    let g: BTreeSet<usize> = gt.frames().map(|(t, _)| t).collect();
    let p: BTreeSet<usize> = pred.frames().map(|(t, _)| t).collect();
    let union = g.union(&p).count();
    if union == 0 {
        return 1.0;
    }
    g.intersection(&p).count() as f64 / union as f64
}

/// Percentage of ground-truth frames whose predicted mask has IoU > 0.5.
/// A frame without a prediction counts as IoU 0.
pub fn recovery(gt: &ResponseSet, pred: &ResponseSet) -> Result<f64> {
    check_dims(gt, pred)?;
    let total = gt.frame_count();
    if total == 0 {
        return Ok(100.0);
    }
    let pred_frames = pred.frame_map();
    let mut recovered = 0usize;
    for (t, g) in gt.frames() {
        if let Some(p) = pred_frames.get(&t) {
            if g.iou(p)? > RECOVERY_IOU {
                recovered += 1;
            }
        }
    }
    Ok(100.0 * recovered as f64 / total as f64)
}

pub fn success(gt: &ResponseSet, pred: &ResponseSet) -> Result<bool> {
    Ok(st_iou(gt, pred)? > SUCCESS_ST_IOU)
}

/// Object-size subsets, keyed by mean ground-truth mask area.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Small,
    Medium,
    Large,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Small, Subset::Medium, Subset::Large];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Small => "small",
            Subset::Medium => "medium",
            Subset::Large => "large",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Small is `[0, small_max)`, Medium `[small_max, medium_max)`, Large the rest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetBounds {
    pub small_max: f64,
    pub medium_max: f64,
}

impl Default for SubsetBounds {
    fn default() -> Self {
        SubsetBounds {
            small_max: 3.6e3,
            medium_max: 4.0e4,
        }
    }
}

impl SubsetBounds {
    pub fn classify(&self, mean_area: f64) -> Subset {
        if mean_area < self.small_max {
            Subset::Small
        } else if mean_area < self.medium_max {
            Subset::Medium
        } else {
            Subset::Large
        }
    }
}

/// Mean ground-truth mask area over annotated frames (0 when there are none).
pub fn mean_gt_area(gt: &ResponseSet) -> f64 {
    let n = gt.frame_count();
    if n == 0 {
        return 0.0;
    }
    gt.frames().map(|(_, m)| m.area() as f64).sum::<f64>() / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub video_id: String,
    pub st_iou: f64,
    pub t_iou: f64,
    /// Percentage in `[0, 100]`.
    pub recovery: f64,
    pub success: bool,
    pub mean_gt_area: f64,
}

impl VideoEval {
    pub fn compute(gt: &ResponseSet, pred: &ResponseSet) -> Result<Self> {
        let st = st_iou(gt, pred)?;
        Ok(VideoEval {
            video_id: gt.video_id().to_string(),
            st_iou: st,
            t_iou: t_iou(gt, pred),
            recovery: recovery(gt, pred)?,
            success: st > SUCCESS_ST_IOU,
            mean_gt_area: mean_gt_area(gt),
        })
    }
}

/// Dataset-level metrics, all as percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub st_ap: f64,
    pub st_ap50: f64,
    pub st_ap75: f64,
    pub t_ap: f64,
    pub t_ap50: f64,
    pub t_ap75: f64,
    pub rec: f64,
    pub succ: f64,
    pub video_count: usize,
}

impl MetricSummary {
    /// Field values in report column order.
    pub fn values(&self) -> [f64; 8] {
        [
            self.st_ap,
            self.st_ap50,
            self.st_ap75,
            self.t_ap,
            self.t_ap50,
            self.t_ap75,
            self.rec,
            self.succ,
        ]
    }

    pub const FIELD_NAMES: [&'static str; 8] = [
        "stAP", "stAP50", "stAP75", "tAP", "tAP50", "tAP75", "Rec", "Succ",
    ];
}

fn thresholded(iou: f64, tau: f64) -> f64 {
    if iou >= tau {
        iou
    } else {
        0.0
    }
}

/// Averages per-video scores. Videos are summed in `video_id` order so the
/// result does not depend on input order.
pub fn aggregate_metrics(evals: &[VideoEval]) -> Result<MetricSummary> {
    if evals.is_empty() {
        return Err(Error::Empty("no videos to aggregate".into()));
    }
    let mut sorted: Vec<&VideoEval> = evals.iter().collect();
    sorted.sort_by(|a, b| {
        a.video_id
            .cmp(&b.video_id)
            .then(a.st_iou.total_cmp(&b.st_iou))
            .then(a.t_iou.total_cmp(&b.t_iou))
            .then(a.recovery.total_cmp(&b.recovery))
    });
    let n = sorted.len() as f64;
    let mean = |f: &dyn Fn(&VideoEval) -> f64| sorted.iter().map(|e| f(e)).sum::<f64>() / n;
    let [lo, hi] = AP_THRESHOLDS;
    Ok(MetricSummary {
        st_ap: 100.0 * mean(&|e| e.st_iou),
        st_ap50: 100.0 * mean(&|e| thresholded(e.st_iou, lo)),
        st_ap75: 100.0 * mean(&|e| thresholded(e.st_iou, hi)),
        t_ap: 100.0 * mean(&|e| e.t_iou),
        t_ap50: 100.0 * mean(&|e| thresholded(e.t_iou, lo)),
        t_ap75: 100.0 * mean(&|e| thresholded(e.t_iou, hi)),
        rec: mean(&|e| e.recovery),
        succ: 100.0 * mean(&|e| if e.success { 1.0 } else { 0.0 }),
        video_count: sorted.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: MetricSummary,
    /// Only non-empty subsets appear.
    pub per_subset: BTreeMap<Subset, MetricSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunEvaluation {
    pub report: MetricReport,
    pub videos: Vec<VideoEval>,
}

pub fn report_from_evals(evals: &[VideoEval], bounds: &SubsetBounds) -> Result<MetricReport> {
    let overall = aggregate_metrics(evals)?;
    let mut buckets: BTreeMap<Subset, Vec<VideoEval>> = BTreeMap::new();
    for e in evals {
        buckets
            .entry(bounds.classify(e.mean_gt_area))
            .or_default()
            .push(e.clone());
    }
    let per_subset = buckets
        .into_iter()
        .map(|(s, v)| Ok((s, aggregate_metrics(&v)?)))
        .collect::<Result<_>>()?;
    Ok(MetricReport {
        overall,
        per_subset,
    })
}

/// Evaluates every ground-truth video against its prediction.
pub fn evaluate_run(
    gt: &[ResponseSet],
    pred: &[ResponseSet],
    bounds: &SubsetBounds,
    exec: Execution,
) -> Result<RunEvaluation> {
    let by_id: BTreeMap<&str, &ResponseSet> = pred.iter().map(|p| (p.video_id(), p)).collect();
    let missing: Vec<String> = gt
        .iter()
        .filter(|g| !by_id.contains_key(g.video_id()))
        .map(|g| g.video_id().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let videos = par::try_map(exec, gt, |_, g| VideoEval::compute(g, by_id[g.video_id()]))?;
    let report = report_from_evals(&videos, bounds)?;
    Ok(RunEvaluation { report, videos })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{Bitmap, Masklet, RleMask};
    use proptest::prelude::*;

    fn block(r0: usize, c0: usize) -> RleMask {
        let mut bm = Bitmap::zeros(4, 4).unwrap();
        for r in r0..r0 + 2 {
            for c in c0..c0 + 2 {
                bm.set(r, c, true);
            }
        }
        RleMask::encode(&bm)
    }

    fn response(id: &str, start: usize, masks: Vec<RleMask>) -> ResponseSet {
        ResponseSet::new(id, 4, 4, vec![Masklet::new(start, masks).unwrap()]).unwrap()
    }

    fn eval(id: &str, st: f64, t: f64) -> VideoEval {
        VideoEval {
            video_id: id.into(),
            st_iou: st,
            t_iou: t,
            recovery: 100.0 * st,
            success: st > SUCCESS_ST_IOU,
            mean_gt_area: 0.0,
        }
    }

    #[test]
    fn worked_example() {
        let gt = response("v", 1, vec![block(0, 0), block(0, 0)]);
        let pred = response("v", 2, vec![block(0, 1), block(0, 1)]);
        assert!((st_iou(&gt, &pred).unwrap() - 1.0 / 7.0).abs() < 1e-12);
        assert!((t_iou(&gt, &pred) - 1.0 / 3.0).abs() < 1e-12);
        assert!(!success(&gt, &pred).unwrap());
    }

    #[test]
    fn identity_and_empty() {
        let gt = response("v", 1, vec![block(0, 0), block(1, 1)]);
        let empty = ResponseSet::empty("v", 4, 4);
        assert_eq!(st_iou(&gt, &gt).unwrap(), 1.0);
        assert_eq!(t_iou(&gt, &gt), 1.0);
        assert_eq!(recovery(&gt, &gt).unwrap(), 100.0);
        assert!(success(&gt, &gt).unwrap());
        assert_eq!(st_iou(&gt, &empty).unwrap(), 0.0);
        assert_eq!(t_iou(&gt, &empty), 0.0);
        assert_eq!(recovery(&gt, &empty).unwrap(), 0.0);
        assert!(!success(&gt, &empty).unwrap());
        assert_eq!(st_iou(&empty, &empty).unwrap(), 1.0);
        assert_eq!(t_iou(&empty, &empty), 1.0);
        assert_eq!(recovery(&empty, &gt).unwrap(), 100.0);
    }

    #[test]
    fn dimension_mismatch() {
        let gt = response("v", 0, vec![block(0, 0)]);
        let other = ResponseSet::empty("v", 5, 4);
        assert!(matches!(st_iou(&gt, &other), Err(Error::Dimension(_))));
    }

    fn from_cells(cells: &[(usize, usize)]) -> RleMask {
        let mut bm = Bitmap::zeros(4, 4).unwrap();
        for &(r, c) in cells {
            bm.set(r, c, true);
        }
        RleMask::encode(&bm)
    }

    #[test]
    fn recovery_counts_frames_above_half() {
        // gt: 4x2 bar of 8 px in columns 0-1
        let g = from_cells(&[
            (0, 0),
            (0, 1),
            (1, 0),
            (1, 1),
            (2, 0),
            (2, 1),
            (3, 0),
            (3, 1),
        ]);
        // six shared pixels plus two outside: 6 / 10
        let p60 = from_cells(&[
            (0, 0),
            (0, 1),
            (1, 0),
            (1, 1),
            (2, 0),
            (2, 1),
            (0, 2),
            (1, 2),
        ]);
        // four shared pixels plus two outside: 4 / 10
        let p40 = from_cells(&[(0, 0), (0, 1), (1, 0), (1, 1), (0, 2), (1, 2)]);
        let p00 = from_cells(&[(0, 3), (1, 3), (2, 3), (3, 3)]);
        assert!((g.iou(&p60).unwrap() - 0.6).abs() < 1e-12);
        assert!((g.iou(&p40).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(g.iou(&p00).unwrap(), 0.0);
        let gt = response("v", 0, vec![g.clone(); 4]);
        let pred = response("v", 0, vec![g, p60, p40, p00]);
        assert_eq!(recovery(&gt, &pred).unwrap(), 50.0);
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate_metrics(&[eval("a", 0.6, 0.6), eval("b", 0.4, 0.4)]).unwrap();
        assert!((r.st_ap - 50.0).abs() < 1e-12);
        assert!((r.st_ap50 - 30.0).abs() < 1e-12);
        assert_eq!(r.st_ap75, 0.0);
        let r = aggregate_metrics(&[eval("a", 0.75, 0.75)]).unwrap();
        assert_eq!(r.st_ap75, 75.0);
        assert_eq!(r.t_ap75, 75.0);
        let r = aggregate_metrics(&[eval("a", 1.0, 1.0), eval("b", 1.0, 1.0)]).unwrap();
        assert!(r.values().iter().all(|&v| v == 100.0));
        assert!(matches!(aggregate_metrics(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn subset_bounds() {
        let b = SubsetBounds::default();
        assert_eq!(b.classify(100.0), Subset::Small);
        assert_eq!(b.classify(3599.9), Subset::Small);
        assert_eq!(b.classify(3600.0), Subset::Medium);
        assert_eq!(b.classify(5000.0), Subset::Medium);
        assert_eq!(b.classify(40000.0), Subset::Large);
        assert_eq!(b.classify(50000.0), Subset::Large);
    }

    #[test]
    fn missing_predictions_listed() {
        let gt = vec![
            response("a", 0, vec![block(0, 0)]),
            response("b", 0, vec![block(0, 0)]),
            response("c", 0, vec![block(0, 0)]),
        ];
        let pred = vec![gt[1].clone()];
        match evaluate_run(&gt, &pred, &SubsetBounds::default(), Execution::Sequential) {
            Err(Error::MissingPredictions(ids)) => assert_eq!(ids, vec!["a", "c"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn arb_evals() -> impl Strategy<Value = Vec<VideoEval>> {
        prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (s, t))| eval(&format!("v{i:03}"), s, t))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn thresholds_are_monotone(evals in arb_evals()) {
            let r = aggregate_metrics(&evals).unwrap();
            prop_assert!(r.st_ap75 <= r.st_ap50 && r.st_ap50 <= r.st_ap);
            prop_assert!(r.t_ap75 <= r.t_ap50 && r.t_ap50 <= r.t_ap);
            for v in r.values() {
                prop_assert!((0.0..=100.0).contains(&v));
            }
        }

        #[test]
        fn permutation_invariant(evals in arb_evals(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = evals.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate_metrics(&evals).unwrap(), aggregate_metrics(&shuffled).unwrap());
        }

        #[test]
        fn shifting_by_one_frame_never_raises_t_iou(start in 0usize..20, len in 1usize..10, delta in 0usize..12) {
            let gt = response("v", start, vec![block(0, 0); len]);
            let pred = response("v", start + delta, vec![block(0, 0); len]);
            let shifted = response("v", start + delta + 1, vec![block(0, 0); len]);
            prop_assert!(t_iou(&gt, &shifted) <= t_iou(&gt, &pred));
        }
    }
}
