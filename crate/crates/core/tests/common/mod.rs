#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vqs_core::mask::{Bitmap, ResponseSet, RleMask};

/// A video as one optional dense mask per frame, row-major.
#[derive(Clone, Debug)]
pub struct Dense {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Option<Vec<bool>>>,
}

impl Dense {
    pub fn from_response(r: &ResponseSet, num_frames: usize) -> Dense {
        let mut frames = vec![None; num_frames];
        for (t, m) in r.frames() {
            frames[t] = Some(m.decode().bits().to_vec());
        }
        Dense {
            id: r.video_id().to_string(),
            height: r.height(),
            width: r.width(),
            frames,
        }
    }

    pub fn to_response(&self) -> ResponseSet {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                f.as_ref().map(|bits| {
                    RleMask::encode(&Bitmap::new(self.height, self.width, bits.clone()).unwrap())
                })
            })
            .collect();
        ResponseSet::from_frames(self.id.clone(), self.height, self.width, frames).unwrap()
    }

    fn mask(&self, t: usize) -> Option<&[bool]> {
        self.frames
            .get(t)
            .and_then(|f| f.as_deref())
            .filter(|bits| bits.iter().any(|&b| b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteVideo {
    pub st_iou: f64,
    pub t_iou: f64,
    pub recovery: f64,
    pub success: bool,
    pub mean_area: f64,
}

fn count(bits: &[bool]) -> usize {
    bits.iter().filter(|&&b| b).count()
}

pub fn brute_video(gt: &Dense, pred: &Dense) -> BruteVideo {
    let n = gt.frames.len().max(pred.frames.len());
    let (mut inter, mut union) = (0usize, 0usize);
    let (mut t_inter, mut t_union) = (0usize, 0usize);
    let (mut gt_frames, mut recovered, mut gt_area) = (0usize, 0usize, 0usize);
    for t in 0..n {
        let g = gt.mask(t);
        let p = pred.mask(t);
        for i in 0..gt.height * gt.width {
            let a = g.is_some_and(|m| m[i]);
            let b = p.is_some_and(|m| m[i]);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if g.is_some() || p.is_some() {
            t_union += 1;
        }
        if g.is_some() && p.is_some() {
            t_inter += 1;
        }
        if let Some(g) = g {
            gt_frames += 1;
            gt_area += count(g);
            if let Some(p) = p {
                let i = (0..g.len()).filter(|&k| g[k] && p[k]).count();
                let u = (0..g.len()).filter(|&k| g[k] || p[k]).count();
                if i as f64 / u as f64 > 0.5 {
                    recovered += 1;
                }
            }
        }
    }
    let st = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    BruteVideo {
        st_iou: st,
        t_iou: if t_union == 0 {
            1.0
        } else {
            t_inter as f64 / t_union as f64
        },
        recovery: if gt_frames == 0 {
            100.0
        } else {
            100.0 * recovered as f64 / gt_frames as f64
        },
        success: st > 0.2,
        mean_area: if gt_frames == 0 {
            0.0
        } else {
            gt_area as f64 / gt_frames as f64
        },
    }
}

pub fn brute_subset(mean_area: f64) -> &'static str {
    if mean_area < 3600.0 {
        "small"
    } else if mean_area < 40000.0 {
        "medium"
    } else {
        "large"
    }
}

/// stAP, stAP50, stAP75, tAP, tAP50, tAP75, Rec, Succ
pub fn brute_summary(videos: &[&BruteVideo]) -> [f64; 8] {
    let n = videos.len() as f64;
    let cut = |v: f64, tau: f64| if v >= tau { v } else { 0.0 };
    let mut s = [0.0; 8];
    for v in videos {
        s[0] += v.st_iou;
        s[1] += cut(v.st_iou, 0.5);
        s[2] += cut(v.st_iou, 0.75);
        s[3] += v.t_iou;
        s[4] += cut(v.t_iou, 0.5);
        s[5] += cut(v.t_iou, 0.75);
        s[6] += v.recovery / 100.0;
        s[7] += if v.success { 1.0 } else { 0.0 };
    }
    s.map(|x| 100.0 * x / n)
}

/// Overall summary plus one per non-empty subset.
pub fn brute_report(pairs: &[(Dense, Dense)]) -> BTreeMap<&'static str, [f64; 8]> {
    let videos: Vec<BruteVideo> = pairs.iter().map(|(g, p)| brute_video(g, p)).collect();
    let mut out = BTreeMap::new();
    out.insert("overall", brute_summary(&videos.iter().collect::<Vec<_>>()));
    for name in ["small", "medium", "large"] {
        let sub: Vec<&BruteVideo> = videos
            .iter()
            .filter(|v| brute_subset(v.mean_area) == name)
            .collect();
        if !sub.is_empty() {
            out.insert(name, brute_summary(&sub));
        }
    }
    out
}

/// An imperfect prediction: frames dropped, masks shifted and speckled,
/// spurious blobs on background frames.
pub fn perturb(gt: &Dense, rng: &mut ChaCha8Rng) -> Dense {
    let (h, w) = (gt.height, gt.width);
    let style = rng.gen_range(0..6);
    let mut frames = Vec::with_capacity(gt.frames.len());
    let dy: isize = rng.gen_range(-3..=3);
    let dx: isize = rng.gen_range(-3..=3);
    for f in &gt.frames {
        if style == 0 {
            frames.push(None);
            continue;
        }
        if rng.gen_bool(0.15) {
            frames.push(None);
            continue;
        }
        let mut bits = vec![false; h * w];
        match f {
            Some(src) => {
                for r in 0..h as isize {
                    for c in 0..w as isize {
                        let (sr, sc) = (r - dy, c - dx);
                        if sr >= 0 && sc >= 0 && sr < h as isize && sc < w as isize {
                            bits[(r as usize) * w + c as usize] =
                                src[sr as usize * w + sc as usize];
                        }
                    }
                }
                let flips = rng.gen_range(0..=(h * w / 20).max(1));
                for _ in 0..flips {
                    let i = rng.gen_range(0..h * w);
                    bits[i] = !bits[i];
                }
            }
            None if rng.gen_bool(0.2) => {
                let bh = rng.gen_range(1..=h.min(8));
                let bw = rng.gen_range(1..=w.min(8));
                let r0 = rng.gen_range(0..=h - bh);
                let c0 = rng.gen_range(0..=w - bw);
                for r in r0..r0 + bh {
                    for c in c0..c0 + bw {
                        bits[r * w + c] = true;
                    }
                }
            }
            None => {}
        }
        frames.push(Some(bits));
    }
    Dense {
        id: gt.id.clone(),
        height: h,
        width: w,
        frames,
    }
}

/// Random video of small frames with random masks inside random runs.
pub fn random_dense(id: &str, rng: &mut ChaCha8Rng, h: usize, w: usize, n: usize) -> Dense {
    let density = rng.gen_range(0.05..0.9);
    let presence = rng.gen_range(0.1..0.9);
    let frames = (0..n)
        .map(|_| {
            rng.gen_bool(presence)
                .then(|| (0..h * w).map(|_| rng.gen_bool(density)).collect())
        })
        .collect();
    Dense {
        id: id.to_string(),
        height: h,
        width: w,
        frames,
    }
}
