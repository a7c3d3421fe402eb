//! Scene distributions and the on-disk dataset.
//!
//! ```text
//! manifest.json
//! scenes/<id>/frames/NNNN.ppm
//! scenes/<id>/query.ppm
//! scenes/<id>/gt.json
//! scenes/<id>/params.json
//! ```

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::schema::{read_response, AnnotationFile};
use crate::mask::{ResponseSet, RleMask};
use crate::par::{self, Execution};
use crate::seed;
use crate::synth::raster::ShapeKind;
use crate::synth::scene::{generate_scene, SceneConfig, SceneParams, SceneRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Inclusive ranges from which per-scene configs are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDistribution {
    /// `(height, width)` choices, drawn uniformly.
    pub frame_sizes: Vec<(usize, usize)>,
    pub num_frames: (usize, usize),
    pub num_occurrences: (usize, usize),
    pub distractor_count: (usize, usize),
    pub shapes: Vec<ShapeKind>,
    pub appearance_drift: (f64, f64),
    pub target_scale: (f64, f64),
    pub coverage: (f64, f64),
    pub motion: (f64, f64),
    pub fps: f64,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        SceneDistribution {
            frame_sizes: vec![(64, 64)],
            num_frames: (48, 96),
            num_occurrences: (1, 5),
            distractor_count: (0, 2),
            shapes: ShapeKind::ALL.to_vec(),
            appearance_drift: (0.0, 0.5),
            target_scale: (0.08, 0.3),
            coverage: (0.3, 0.8),
            motion: (0.5, 1.5),
            fps: 6.0,
        }
    }
}

impl SceneDistribution {
    /// Short videos at three frame sizes whose mean target areas fall in
    /// every area subset.
    pub fn subset_spanning() -> Self {
        SceneDistribution {
            frame_sizes: vec![(48, 48), (192, 192), (480, 480)],
            num_frames: (3, 5),
            num_occurrences: (1, 2),
            distractor_count: (0, 1),
            target_scale: (0.3, 0.45),
            appearance_drift: (0.0, 0.2),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("scene distribution: {m}")));
        let ordered = |r: (f64, f64)| r.0 <= r.1 && r.0.is_finite() && r.1.is_finite();
        if self.frame_sizes.is_empty() || self.frame_sizes.iter().any(|&(h, w)| h == 0 || w == 0) {
            return fail("frame sizes must be non-empty and positive");
        }
        if self.shapes.is_empty() {
            return fail("no shapes");
        }
        if self.num_frames.0 == 0 || self.num_frames.0 > self.num_frames.1 {
            return fail("num_frames range");
        }
        if self.num_occurrences.0 == 0 || self.num_occurrences.0 > self.num_occurrences.1 {
            return fail("num_occurrences range");
        }
        if self.distractor_count.0 > self.distractor_count.1 {
            return fail("distractor_count range");
        }
        for (name, r) in [
            ("appearance_drift", self.appearance_drift),
            ("target_scale", self.target_scale),
            ("coverage", self.coverage),
            ("motion", self.motion),
        ] {
            if !ordered(r) {
                return fail(&format!("{name} range"));
            }
        }
        let extreme = |drift, scale, coverage, motion| SceneConfig {
            num_frames: self.num_frames.0,
            num_occurrences: 1,
            appearance_drift: drift,
            target_scale: scale,
            coverage,
            motion,
            fps: self.fps,
            ..Default::default()
        };
        extreme(
            self.appearance_drift.0,
            self.target_scale.0,
            self.coverage.0,
            self.motion.0,
        )
        .validate()?;
        extreme(
            self.appearance_drift.1,
            self.target_scale.1,
            self.coverage.1,
            self.motion.1,
        )
        .validate()?;
        Ok(())
    }

    /// The config of scene `index` under `master`.
    pub fn sample(&self, master: u64, index: usize) -> SceneConfig {
        let scene_seed = seed::indexed(master, index as u64);
        let mut rng = seed::rng(seed::labeled(scene_seed, "config"));
        let (height, width) = self.frame_sizes[rng.gen_range(0..self.frame_sizes.len())];
        let num_frames = rng.gen_range(self.num_frames.0..=self.num_frames.1);
        let max_occ = self.num_occurrences.1.min(num_frames.div_ceil(2)).max(1);
        let min_occ = self.num_occurrences.0.min(max_occ);
        let mut range = |r: (f64, f64)| {
            if r.0 < r.1 {
                rng.gen_range(r.0..=r.1)
            } else {
                r.0
            }
        };
        let appearance_drift = range(self.appearance_drift);
        let target_scale = range(self.target_scale);
        let coverage = range(self.coverage);
        let motion = range(self.motion);
        SceneConfig {
            height,
            width,
            num_frames,
            num_occurrences: rng.gen_range(min_occ..=max_occ),
            distractor_count: rng.gen_range(self.distractor_count.0..=self.distractor_count.1),
            target_shape: self.shapes[rng.gen_range(0..self.shapes.len())],
            appearance_drift,
            target_scale,
            coverage,
            motion,
            fps: self.fps,
            seed: scene_seed,
        }
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// SHA-256 over the distribution, scene count and master seed.
pub fn config_digest(dist: &SceneDistribution, n_scenes: usize, seed: u64) -> String {
    let text = serde_json::json!({ "distribution": dist, "n_scenes": n_scenes, "seed": seed });
    hex::encode(Sha256::digest(text.to_string().as_bytes()))
}

/// Generates scenes in memory.
pub fn generate_scenes(
    n_scenes: usize,
    dist: &SceneDistribution,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SceneRecord>> {
    if n_scenes == 0 {
        return Err(Error::Config("n_scenes must be at least 1".into()));
    }
    dist.validate()?;
    let indices: Vec<usize> = (0..n_scenes).collect();
    par::try_map(exec, &indices, |_, &i| {
        generate_scene(&scene_id(i), &dist.sample(seed, i))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    /// Paths relative to the dataset root, in frame order.
    pub frames: Vec<String>,
    pub query: String,
    /// Virtual time of the query frame on the video clock.
    pub query_frame_index: usize,
    /// Run-length counts of the query mask.
    pub query_mask: String,
    pub gt: String,
    pub params: String,
}

impl SceneEntry {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    fn files(&self) -> impl Iterator<Item = &String> + '_ {
        self.frames
            .iter()
            .chain([&self.query, &self.gt, &self.params])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config_digest: String,
    /// SHA-256 over every referenced file, see [`content_digest`].
    pub content_digest: String,
    pub scenes: Vec<SceneEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Reads `manifest.json` from a dataset root (or the given file).
    pub fn read(path: &Path) -> Result<Self> {
        let file = manifest_path(path);
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn scene(&self, id: &str) -> Option<&SceneEntry> {
        self.scenes.iter().find(|s| s.id == id)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// The dataset root for a directory or a manifest file path.
pub fn dataset_root(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes one scene below `root` and returns its manifest entry.
pub fn write_scene(root: &Path, scene: &SceneRecord) -> Result<SceneEntry> {
    let dir = format!("scenes/{}", scene.id);
    let mut frames = Vec::with_capacity(scene.frames.len());
    for (t, img) in scene.frames.iter().enumerate() {
        let rel = format!("{dir}/frames/{t:04}.ppm");
        write_file(&root.join(&rel), &img.to_ppm())?;
        frames.push(rel);
    }
    let query = format!("{dir}/query.ppm");
    write_file(&root.join(&query), &scene.query_frame.to_ppm())?;
    let gt = format!("{dir}/gt.json");
    write_file(
        &root.join(&gt),
        AnnotationFile::from(&scene.gt).to_json().as_bytes(),
    )?;
    let params = format!("{dir}/params.json");
    let mut text = serde_json::to_string_pretty(&scene.params)?;
    text.push('\n');
    write_file(&root.join(&params), text.as_bytes())?;
    let cfg = &scene.params.config;
    Ok(SceneEntry {
        id: scene.id.clone(),
        seed: cfg.seed,
        height: cfg.height,
        width: cfg.width,
        fps: cfg.fps,
        frames,
        query,
        query_frame_index: scene.params.query_time,
        query_mask: scene.query_mask.runs_csv(),
        gt,
        params,
    })
}

/// SHA-256 over `(path, length, bytes)` of every referenced file, in sorted
/// path order.
pub fn content_digest(root: &Path, scenes: &[SceneEntry]) -> Result<String> {
    let mut files: Vec<&String> = scenes.iter().flat_map(SceneEntry::files).collect();
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let path = root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(rel.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Generates `n_scenes` scenes, writes them below `root`, then the manifest.
pub fn generate_dataset(
    root: &Path,
    n_scenes: usize,
    dist: &SceneDistribution,
    seed: u64,
    exec: Execution,
) -> Result<DatasetManifest> {
    if n_scenes == 0 {
        return Err(Error::Config("n_scenes must be at least 1".into()));
    }
    dist.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let indices: Vec<usize> = (0..n_scenes).collect();
    let scenes = par::try_map(exec, &indices, |_, &i| {
        let scene = generate_scene(&scene_id(i), &dist.sample(seed, i))?;
        write_scene(root, &scene)
    })?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed,
        config_digest: config_digest(dist, n_scenes, seed),
        content_digest: content_digest(root, &scenes)?,
        scenes,
    };
    write_file(&root.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// Whether the files on disk still hash to the manifest digest.
pub fn verify_digest(root: &Path, manifest: &DatasetManifest) -> Result<bool> {
    Ok(content_digest(root, &manifest.scenes)? == manifest.content_digest)
}

pub fn load_frames(root: &Path, entry: &SceneEntry) -> Result<Vec<Image>> {
    entry
        .frames
        .iter()
        .map(|f| Image::read(&root.join(f)))
        .collect()
}

pub fn load_query(root: &Path, entry: &SceneEntry) -> Result<(Image, RleMask)> {
    let frame = Image::read(&root.join(&entry.query))?;
    let mask = RleMask::parse_csv(entry.height, entry.width, &entry.query_mask)?;
    Ok((frame, mask))
}

pub fn load_gt(root: &Path, entry: &SceneEntry) -> Result<ResponseSet> {
    read_response(&root.join(&entry.gt))
}

pub fn load_params(root: &Path, entry: &SceneEntry) -> Result<SceneParams> {
    let path = root.join(&entry.params);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
