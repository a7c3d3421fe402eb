//! Dataset statistics: video and response lengths, occurrence counts, mask
//! areas, relative areas and adjacent-frame IoU.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mask::ResponseSet;
use crate::synth::dataset::{load_gt, DatasetManifest};

/// Fixed-edge histogram. Bin `i` is `[edges[i], edges[i + 1])`, except the
/// last which is closed; values outside the edges land in the end bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Self {
        assert!(edges.len() >= 2, "histogram needs at least one bin");
        let counts = vec![0; edges.len() - 1];
        Histogram { edges, counts }
    }

    pub fn bin(&self, v: f64) -> usize {
        let last = self.counts.len() - 1;
        self.edges[1..last + 1]
            .iter()
            .position(|&hi| v < hi)
            .unwrap_or(last)
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin(v);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

impl Distribution {
    fn from_values(values: &[f64], edges: Vec<f64>) -> Self {
        let mut histogram = Histogram::new(edges);
        for &v in values {
            histogram.add(v);
        }
        let count = values.len();
        let (mean, min, max) = if count == 0 {
            (0.0, 0.0, 0.0)
        } else {
            (
                values.iter().sum::<f64>() / count as f64,
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        Distribution {
            count,
            mean,
            min,
            max,
            histogram,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scenes: usize,
    /// Seconds per video.
    pub video_length: Distribution,
    /// Seconds per occurrence.
    pub response_length: Distribution,
    /// Occurrences per video -> number of videos.
    pub occurrence_count: BTreeMap<usize, usize>,
    /// Pixels per ground-truth mask.
    pub mask_area: Distribution,
    /// Mask area over the first mask area of the same occurrence.
    pub relative_area: Distribution,
    /// IoU of consecutive masks within an occurrence.
    pub adjacent_iou: Distribution,
}

/// What the statistics need from one scene.
#[derive(Clone, Copy, Debug)]
pub struct SceneSummary<'a> {
    pub num_frames: usize,
    pub fps: f64,
    pub gt: &'a ResponseSet,
}

pub fn stats_from_scenes(scenes: &[SceneSummary<'_>]) -> Result<DatasetStats> {
    let mut video = Vec::new();
    let mut response = Vec::new();
    let mut occurrence_count = BTreeMap::new();
    let mut area = Vec::new();
    let mut relative = Vec::new();
    let mut adjacent = Vec::new();
    for s in scenes {
        video.push(s.num_frames as f64 / s.fps);
        *occurrence_count
            .entry(s.gt.occurrences().len())
            .or_insert(0) += 1;
        for occ in s.gt.occurrences() {
            response.push(occ.len() as f64 / s.fps);
            let first = occ.masks()[0].area() as f64;
            for m in occ.masks() {
                area.push(m.area() as f64);
                if first > 0.0 {
                    relative.push(m.area() as f64 / first);
                }
            }
            for pair in occ.masks().windows(2) {
                adjacent.push(pair[0].iou(&pair[1])?);
            }
        }
    }
    let steps = |lo: f64, step: f64, n: usize| (0..=n).map(|i| lo + step * i as f64).collect();
    Ok(DatasetStats {
        scenes: scenes.len(),
        video_length: Distribution::from_values(&video, steps(0.0, 5.0, 16)),
        response_length: Distribution::from_values(
            &response,
            vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
        ),
        occurrence_count,
        mask_area: Distribution::from_values(
            &area,
            (0..=9)
                .map(|i| if i == 0 { 0.0 } else { 4f64.powi(i) })
                .collect(),
        ),
        relative_area: Distribution::from_values(
            &relative,
            vec![0.0, 0.25, 0.5, 0.75, 0.9, 1.1, 1.25, 1.5, 2.0, 4.0],
        ),
        adjacent_iou: Distribution::from_values(
            &adjacent,
            vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 1.0],
        ),
    })
}

pub fn compute_stats(root: &Path, manifest: &DatasetManifest) -> Result<DatasetStats> {
    let gts = manifest
        .scenes
        .iter()
        .map(|e| load_gt(root, e))
        .collect::<Result<Vec<_>>>()?;
    let summaries: Vec<SceneSummary> = manifest
        .scenes
        .iter()
        .zip(&gts)
        .map(|(e, gt)| SceneSummary {
            num_frames: e.num_frames(),
            fps: e.fps,
            gt,
        })
        .collect();
    stats_from_scenes(&summaries)
}

pub fn stats_json(stats: &DatasetStats) -> String {
    let mut s = serde_json::to_string_pretty(stats).expect("stats serialize");
    s.push('\n');
    s
}

/// One row per histogram bin: `stat,lo,hi,count`; occurrence counts use
/// `lo = hi = occurrences`.
pub fn stats_csv(stats: &DatasetStats) -> String {
    let mut out = String::from("stat,lo,hi,count\n");
    let hists = [
        ("video_length", &stats.video_length),
        ("response_length", &stats.response_length),
        ("mask_area", &stats.mask_area),
        ("relative_area", &stats.relative_area),
        ("adjacent_iou", &stats.adjacent_iou),
    ];
    for (name, d) in hists {
        let h = &d.histogram;
        for (i, c) in h.counts.iter().enumerate() {
            out.push_str(&format!("{name},{},{},{c}\n", h.edges[i], h.edges[i + 1]));
        }
    }
    for (k, c) in &stats.occurrence_count {
        out.push_str(&format!("occurrence_count,{k},{k},{c}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::Execution;
    use crate::synth::dataset::{generate_scenes, SceneDistribution};
    use crate::synth::scene::{generate_scene, SceneConfig};

    #[test]
    fn histogram_binning() {
        let mut h = Histogram::new(vec![0.0, 1.0, 2.0]);
        for v in [-1.0, 0.0, 0.5, 1.0, 2.0, 7.0] {
            h.add(v);
        }
        assert_eq!(h.counts, vec![3, 3]);
    }

    #[test]
    fn sixty_frames_is_ten_seconds() {
        let cfg = SceneConfig {
            num_frames: 60,
            fps: 6.0,
            ..Default::default()
        };
        let s = generate_scene("s", &cfg).unwrap();
        let stats = stats_from_scenes(&[SceneSummary {
            num_frames: 60,
            fps: 6.0,
            gt: &s.gt,
        }])
        .unwrap();
        assert_eq!(stats.video_length.mean, 10.0);
        assert_eq!(stats.video_length.count, 1);
    }

    #[test]
    fn static_target_has_unit_adjacent_iou() {
        let cfg = SceneConfig {
            motion: 0.0,
            appearance_drift: 0.0,
            num_frames: 30,
            ..Default::default()
        };
        let s = generate_scene("s", &cfg).unwrap();
        let stats = stats_from_scenes(&[SceneSummary {
            num_frames: 30,
            fps: 6.0,
            gt: &s.gt,
        }])
        .unwrap();
        let h = &stats.adjacent_iou.histogram;
        assert!(stats.adjacent_iou.count > 0);
        assert_eq!(*h.counts.last().unwrap(), stats.adjacent_iou.count);
        assert_eq!(stats.adjacent_iou.min, 1.0);
        assert_eq!(stats.relative_area.min, 1.0);
        assert_eq!(stats.relative_area.max, 1.0);
    }

    #[test]
    fn occurrence_counts_match_annotations() {
        let dist = SceneDistribution {
            frame_sizes: vec![(32, 32)],
            num_frames: (10, 20),
            ..Default::default()
        };
        let scenes = generate_scenes(10, &dist, 9, Execution::Sequential).unwrap();
        let summaries: Vec<SceneSummary> = scenes
            .iter()
            .map(|s| SceneSummary {
                num_frames: s.frames.len(),
                fps: 6.0,
                gt: &s.gt,
            })
            .collect();
        let stats = stats_from_scenes(&summaries).unwrap();
        let mut direct = BTreeMap::new();
        for s in &scenes {
            *direct.entry(s.gt.occurrences().len()).or_insert(0) += 1;
        }
        assert_eq!(stats.occurrence_count, direct);
        let occ: usize = scenes.iter().map(|s| s.gt.occurrences().len()).sum();
        assert_eq!(stats.response_length.count, occ);
        let frames: usize = scenes.iter().map(|s| s.gt.frame_count()).sum();
        assert_eq!(stats.mask_area.histogram.total(), frames);
        assert!(stats_csv(&stats).starts_with("stat,lo,hi,count\nvideo_length,0,5,"));
    }
}
