//! Dataset validation. Problems are collected, never raised.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::image::Image;
use crate::mask::schema::AnnotationFile;
use crate::mask::RleMask;
use crate::synth::dataset::{content_digest, DatasetManifest, SceneEntry, MANIFEST_VERSION};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    pub message: String,
}

impl Violation {
    fn new(scene: Option<&str>, frame: Option<usize>, message: impl Into<String>) -> Self {
        Violation {
            scene: scene.map(str::to_string),
            frame,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.scene, self.frame) {
            (Some(s), Some(t)) => write!(f, "{s} frame {t}: {}", self.message),
            (Some(s), None) => write!(f, "{s}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

/// Reads the manifest under `path` and validates it.
pub fn validate_dataset(path: &Path) -> Vec<Violation> {
    let root = crate::synth::dataset::dataset_root(path);
    match DatasetManifest::read(path) {
        Ok(m) => validate_manifest(&root, &m),
        Err(e) => vec![Violation::new(
            None,
            None,
            format!("unreadable manifest: {e}"),
        )],
    }
}

pub fn validate_manifest(root: &Path, manifest: &DatasetManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    if manifest.version != MANIFEST_VERSION {
        out.push(Violation::new(
            None,
            None,
            format!(
                "manifest version {} (expected {MANIFEST_VERSION})",
                manifest.version
            ),
        ));
    }
    let mut ids = BTreeSet::new();
    for entry in &manifest.scenes {
        if !ids.insert(entry.id.as_str()) {
            out.push(Violation::new(Some(&entry.id), None, "duplicate scene id"));
        }
        validate_scene(root, entry, &mut out);
    }
    match content_digest(root, &manifest.scenes) {
        Ok(d) if d == manifest.content_digest => {}
        Ok(_) => out.push(Violation::new(None, None, "content digest mismatch")),
        Err(e) => out.push(Violation::new(None, None, format!("content digest: {e}"))),
    }
    out
}

fn check_image(
    root: &Path,
    rel: &str,
    entry: &SceneEntry,
    frame: Option<usize>,
    out: &mut Vec<Violation>,
) {
    let id = Some(entry.id.as_str());
    match Image::read(&root.join(rel)) {
        Ok(img) if (img.height(), img.width()) != (entry.height, entry.width) => {
            out.push(Violation::new(
                id,
                frame,
                format!(
                    "{rel} is {}x{}, expected {}x{}",
                    img.height(),
                    img.width(),
                    entry.height,
                    entry.width
                ),
            ))
        }
        Ok(_) => {}
        Err(e) => out.push(Violation::new(id, frame, e.to_string())),
    }
}

fn validate_scene(root: &Path, entry: &SceneEntry, out: &mut Vec<Violation>) {
    let id = Some(entry.id.as_str());
    let n = entry.num_frames();
    if n == 0 {
        out.push(Violation::new(id, None, "scene has no frames"));
    }
    for (t, rel) in entry.frames.iter().enumerate() {
        check_image(root, rel, entry, Some(t), out);
    }
    check_image(root, &entry.query, entry, None, out);
    if entry.query_frame_index < n {
        out.push(Violation::new(
            id,
            None,
            format!(
                "query frame index {} lies inside the video",
                entry.query_frame_index
            ),
        ));
    }
    match RleMask::parse_csv(entry.height, entry.width, &entry.query_mask) {
        Ok(m) if m.is_empty() => out.push(Violation::new(id, None, "query mask is empty")),
        Ok(_) => {}
        Err(e) => out.push(Violation::new(id, None, format!("query mask: {e}"))),
    }
    if !root.join(&entry.params).is_file() {
        out.push(Violation::new(
            id,
            None,
            format!("missing {}", entry.params),
        ));
    }
    let ann = match AnnotationFile::read(&root.join(&entry.gt)) {
        Ok(a) => a,
        Err(e) => {
            out.push(Violation::new(
                id,
                None,
                format!("unreadable annotation: {e}"),
            ));
            return;
        }
    };
    if (ann.height, ann.width) != (entry.height, entry.width) {
        out.push(Violation::new(
            id,
            None,
            format!(
                "annotation is {}x{}, expected {}x{}",
                ann.height, ann.width, entry.height, entry.width
            ),
        ));
        return;
    }
    let mut structural = false;
    for (i, occ) in ann.occurrences.iter().enumerate() {
        if occ.end < occ.start {
            out.push(Violation::new(
                id,
                Some(occ.start),
                format!("occurrence {i} ends before it starts"),
            ));
            structural = true;
            continue;
        }
        if occ.masks.len() != occ.end - occ.start + 1 {
            out.push(Violation::new(
                id,
                Some(occ.start),
                format!(
                    "occurrence {i} spans {} frames but has {} masks",
                    occ.end - occ.start + 1,
                    occ.masks.len()
                ),
            ));
            structural = true;
        }
        if occ.end >= n {
            out.push(Violation::new(
                id,
                Some(occ.end),
                format!("occurrence {i} extends past the last frame"),
            ));
        }
        for (j, text) in occ.masks.iter().enumerate() {
            match RleMask::parse_csv(ann.height, ann.width, text) {
                Ok(m) if m.is_empty() => out.push(Violation::new(
                    id,
                    Some(occ.start + j),
                    "empty mask inside an occurrence",
                )),
                Ok(_) => {}
                Err(e) => {
                    out.push(Violation::new(id, Some(occ.start + j), e.to_string()));
                    structural = true;
                }
            }
        }
    }
    for (i, a) in ann.occurrences.iter().enumerate() {
        for (j, b) in ann.occurrences.iter().enumerate().skip(i + 1) {
            if a.start <= b.end && b.start <= a.end {
                out.push(Violation::new(
                    id,
                    Some(a.start.max(b.start)),
                    format!("temporal overlap between occurrences {i} and {j}"),
                ));
                structural = true;
            } else if b.start < a.start {
                out.push(Violation::new(
                    id,
                    Some(b.start),
                    format!("occurrences {i} and {j} are unsorted"),
                ));
                structural = true;
            }
        }
    }
    if !structural {
        if let Err(e) = ann.to_response() {
            out.push(Violation::new(id, None, e.to_string()));
        }
    }
}
