//! Deterministic synthetic scenes: an untrimmed video with several target
//! occurrences, same-class distractors, and an external query frame.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{Masklet, ResponseSet, RleMask};
use crate::seed;
use crate::synth::raster::{hsv_to_rgb, ShapeInstance, ShapeKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    pub num_occurrences: usize,
    pub distractor_count: usize,
    pub target_shape: ShapeKind,
    /// Per-frame color and scale change, in `[0, 1]`.
    pub appearance_drift: f64,
    /// Target size as a fraction of the shorter frame side, in `(0, 0.45]`.
    pub target_scale: f64,
    /// Fraction of frames in which the target is visible, in `(0, 1]`.
    pub coverage: f64,
    /// Multiplier on all velocities and oscillation amplitudes; 0 is static.
    pub motion: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            num_frames: 60,
            num_occurrences: 3,
            distractor_count: 1,
            target_shape: ShapeKind::Disk,
            appearance_drift: 0.2,
            target_scale: 0.15,
            coverage: 0.6,
            motion: 1.0,
            fps: 6.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 {
            return fail(format!("frame size {}x{}", self.height, self.width));
        }
        if self.num_frames == 0 {
            return fail("a scene needs at least one frame".into());
        }
        if self.num_occurrences == 0 {
            return fail("a scene needs at least one occurrence".into());
        }
        if self.num_frames < 2 * self.num_occurrences - 1 {
            return fail(format!(
                "{} disjoint occurrences do not fit in {} frames",
                self.num_occurrences, self.num_frames
            ));
        }
        if !(0.0..=1.0).contains(&self.appearance_drift) {
            return fail(format!(
                "appearance drift {} outside [0, 1]",
                self.appearance_drift
            ));
        }
        if !(self.target_scale > 0.0 && self.target_scale <= 0.45) {
            return fail(format!(
                "target scale {} outside (0, 0.45]",
                self.target_scale
            ));
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return fail(format!("coverage {} outside (0, 1]", self.coverage));
        }
        if !(self.motion >= 0.0 && self.motion.is_finite()) {
            return fail(format!("motion {} must be non-negative", self.motion));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return fail(format!("fps {} must be positive", self.fps));
        }
        Ok(())
    }
}

/// Closed-form motion and appearance of one object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub kind: ShapeKind,
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub vy: f64,
    pub amp_x: f64,
    pub amp_y: f64,
    pub omega: f64,
    pub phase: f64,
    pub radius: f64,
    pub aspect: f64,
    pub rotation: f64,
    pub spin: f64,
    pub hue: f64,
    pub drift: f64,
    pub drift_phase: f64,
}

/// Reflects `v` into `[lo, hi]` (a triangle wave of period `2 (hi - lo)`).
pub fn bounce(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return (lo + hi) / 2.0;
    }
    let period = 2.0 * span;
    let r = (v - lo).rem_euclid(period);
    if r <= span {
        lo + r
    } else {
        lo + period - r
    }
}

impl Track {
    /// Largest radius the drift can reach.
    pub fn max_radius(&self) -> f64 {
        self.radius * (1.0 + 0.3 * self.drift)
    }

    /// The object at time `t` in a `height x width` frame.
    pub fn at(&self, t: f64, height: usize, width: usize) -> ShapeInstance {
        let wobble = libm::sin(0.21 * t + self.drift_phase);
        let radius = self.radius * (1.0 + 0.3 * self.drift * wobble);
        let hue = self.hue + 0.08 * self.drift * libm::sin(0.17 * t + self.drift_phase);
        let reach_x = self.max_radius();
        let reach_y = match self.kind {
            ShapeKind::Rectangle => reach_x * self.aspect,
            _ => reach_x,
        };
        let osc = libm::sin(self.omega * t + self.phase);
        let axis = |p0: f64, v: f64, amp: f64, reach: f64, size: usize| {
            let lo = reach + amp;
            let hi = size as f64 - reach - amp;
            bounce(p0 + v * t, lo, hi) + amp * osc
        };
        ShapeInstance {
            kind: self.kind,
            cx: axis(self.x0, self.vx, self.amp_x, reach_x, width),
            cy: axis(self.y0, self.vy, self.amp_y, reach_y, height),
            radius,
            aspect: self.aspect,
            rotation: self.rotation + self.spin * t,
            color: hsv_to_rgb(hue, 0.75, 0.9),
        }
    }
}

/// Everything needed to re-render a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub config: SceneConfig,
    pub target: Track,
    pub distractors: Vec<Track>,
    /// Inclusive frame ranges in which the target is visible.
    pub occurrences: Vec<(usize, usize)>,
    /// Virtual time of the query frame; always after the last video frame.
    pub query_time: usize,
    pub background: Background,
    pub query_background: Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: [u8; 3],
    pub gradient: [i16; 3],
    pub noise: u8,
    pub seed: u64,
}

impl Background {
    fn sample(rng: &mut ChaCha8Rng, seed: u64) -> Self {
        Background {
            base: [
                rng.gen_range(20..90),
                rng.gen_range(20..90),
                rng.gen_range(20..90),
            ],
            gradient: [
                rng.gen_range(-30..30),
                rng.gen_range(-30..30),
                rng.gen_range(-30..30),
            ],
            noise: rng.gen_range(2..8),
            seed,
        }
    }

    /// The background of frame `index`; noise differs per frame.
    pub fn render(&self, height: usize, width: usize, index: u64) -> Image {
        let mut rng = seed::rng(seed::indexed(self.seed, index));
        let mut data = Vec::with_capacity(height * width * 3);
        let n = self.noise as i32;
        for _y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    let g = self.gradient[c] as i32 * x as i32 / width.max(1) as i32;
                    let noise = rng.gen_range(-n..=n);
                    data.push((self.base[c] as i32 + g + noise).clamp(0, 255) as u8);
                }
            }
        }
        Image::new(height, width, data).expect("non-empty frame")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub frames: Vec<Image>,
    pub query_frame: Image,
    pub query_mask: RleMask,
    pub gt: ResponseSet,
    pub params: SceneParams,
}

/// Splits `total` into `parts` counts, each at least `min`, at random.
fn composition(rng: &mut ChaCha8Rng, total: usize, parts: usize, min: usize) -> Vec<usize> {
    let mut out = vec![min; parts];
    for _ in 0..total - min * parts {
        out[rng.gen_range(0..parts)] += 1;
    }
    out
}

/// Disjoint occurrence ranges separated by at least one frame.
fn timeline(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Vec<(usize, usize)> {
    let (n, p) = (cfg.num_frames, cfg.num_occurrences);
    let visible = ((cfg.coverage * n as f64).round() as usize).clamp(p, n - (p - 1));
    let lengths = composition(rng, visible, p, 1);
    let hidden = n - visible;
    // p - 1 inner gaps of at least one frame, plus a leading and trailing gap
    let mut gaps = composition(rng, hidden - (p - 1), p + 1, 0);
    for g in gaps.iter_mut().take(p).skip(1) {
        *g += 1;
    }
    let mut out = Vec::with_capacity(p);
    let mut t = gaps[0];
    for (i, len) in lengths.into_iter().enumerate() {
        out.push((t, t + len - 1));
        t += len + gaps[i + 1];
    }
    out
}

fn sample_track(
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    radius: f64,
    hue: f64,
    aspect: f64,
) -> Track {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let m = cfg.motion;
    let drift = cfg.appearance_drift;
    let reach = radius * (1.0 + 0.3 * drift);
    let free = (w.min(h) - 2.0 * reach).max(0.0);
    let amp = m * free * 0.15 * rng.gen_range(0.0..1.0);
    Track {
        kind: cfg.target_shape,
        x0: rng.gen_range(0.0..w),
        y0: rng.gen_range(0.0..h),
        vx: m * rng.gen_range(-1.5..1.5),
        vy: m * rng.gen_range(-1.5..1.5),
        amp_x: amp,
        amp_y: amp * rng.gen_range(0.3..1.0),
        omega: rng.gen_range(0.1..0.5),
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
        radius,
        aspect,
        rotation: rng.gen_range(0.0..std::f64::consts::TAU),
        spin: m * rng.gen_range(-0.05..0.05),
        hue,
        drift,
        drift_phase: rng.gen_range(0.0..std::f64::consts::TAU),
    }
}

pub fn sample_params(cfg: &SceneConfig) -> Result<SceneParams> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::labeled(cfg.seed, "scene"));
    let occurrences = timeline(&mut rng, cfg);
    let side = cfg.height.min(cfg.width) as f64;
    let radius = (cfg.target_scale * side * rng.gen_range(0.9..1.0)).max(2.0);
    let hue = rng.gen_range(0.0..1.0);
    let aspect = rng.gen_range(0.6..1.0);
    let target = sample_track(&mut rng, cfg, radius, hue, aspect);
    let distractors = (0..cfg.distractor_count)
        .map(|_| {
            let shift = rng.gen_range(0.25..0.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let r = (radius * rng.gen_range(0.8..1.2)).min(0.45 * side).max(2.0);
            let aspect = rng.gen_range(0.6..1.0);
            sample_track(&mut rng, cfg, r, hue + shift, aspect)
        })
        .collect();
    let query_time = cfg.num_frames + 1 + rng.gen_range(0..10);
    let background = Background::sample(&mut rng, seed::labeled(cfg.seed, "background"));
    let query_background =
        Background::sample(&mut rng, seed::labeled(cfg.seed, "query-background"));
    Ok(SceneParams {
        config: cfg.clone(),
        target,
        distractors,
        occurrences,
        query_time,
        background,
        query_background,
    })
}

impl SceneParams {
    pub fn target_visible(&self, t: usize) -> bool {
        self.occurrences.iter().any(|&(s, e)| (s..=e).contains(&t))
    }

    pub fn render_frame(&self, t: usize) -> Image {
        let (h, w) = (self.config.height, self.config.width);
        let mut img = self.background.render(h, w, t as u64);
        for d in &self.distractors {
            d.at(t as f64, h, w).paint(&mut img);
        }
        if self.target_visible(t) {
            self.target.at(t as f64, h, w).paint(&mut img);
        }
        img
    }

    pub fn target_mask(&self, t: usize) -> RleMask {
        let (h, w) = (self.config.height, self.config.width);
        self.target.at(t as f64, h, w).rasterize(h, w)
    }

    pub fn render_query(&self) -> (Image, RleMask) {
        let (h, w) = (self.config.height, self.config.width);
        let mut img = self.query_background.render(h, w, self.query_time as u64);
        let shape = self.target.at(self.query_time as f64, h, w);
        shape.paint(&mut img);
        (img, shape.rasterize(h, w))
    }

    pub fn ground_truth(&self, video_id: &str) -> Result<ResponseSet> {
        let (h, w) = (self.config.height, self.config.width);
        let occurrences = self
            .occurrences
            .iter()
            .map(|&(s, e)| Masklet::new(s, (s..=e).map(|t| self.target_mask(t)).collect()))
            .collect::<Result<Vec<_>>>()?;
        ResponseSet::new(video_id, h, w, occurrences)
    }
}

pub fn generate_scene(id: &str, cfg: &SceneConfig) -> Result<SceneRecord> {
    let params = sample_params(cfg)?;
    let frames = (0..cfg.num_frames)
        .map(|t| params.render_frame(t))
        .collect();
    let (query_frame, query_mask) = params.render_query();
    let gt = params.ground_truth(id)?;
    Ok(SceneRecord {
        id: id.to_string(),
        frames,
        query_frame,
        query_mask,
        gt,
        params,
    })
}
