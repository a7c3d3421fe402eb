//! Prediction manifests: one annotation per video plus selection provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::schema::AnnotationFile;
use crate::mask::ResponseSet;
use crate::pipeline::stage::{ClipProvenance, VideoPrediction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    #[serde(flatten)]
    pub annotation: AnnotationFile,
    #[serde(default)]
    pub provenance: Vec<ClipProvenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionManifest {
    pub config_digest: String,
    pub checkpoint_digest: String,
    pub seed: u64,
    pub predictions: Vec<PredictionEntry>,
}

impl PredictionManifest {
    pub fn new(
        config_digest: String,
        checkpoint_digest: String,
        seed: u64,
        videos: &[VideoPrediction],
    ) -> Self {
        let mut predictions: Vec<PredictionEntry> = videos
            .iter()
            .map(|v| PredictionEntry {
                annotation: AnnotationFile::from(&v.response),
                provenance: v.clips.clone(),
            })
            .collect();
        predictions.sort_by(|a, b| a.annotation.video_id.cmp(&b.annotation.video_id));
        PredictionManifest {
            config_digest,
            checkpoint_digest,
            seed,
            predictions,
        }
    }

    pub fn responses(&self) -> Result<Vec<ResponseSet>> {
        self.predictions
            .iter()
            .map(|p| p.annotation.to_response())
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
