//! JSON annotation schema shared by ground truth and predictions.
//!
//! ```json
//! {"video_id": "...", "height": H, "width": W,
//!  "occurrences": [{"start": s, "end": e, "masks": ["<runs-csv>", ...]}]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{Masklet, ResponseSet, RleMask};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceRecord {
    pub start: usize,
    pub end: usize,
    pub masks: Vec<String>,
}

/// Unvalidated on-disk form of a [`ResponseSet`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub video_id: String,
    pub height: usize,
    pub width: usize,
    pub occurrences: Vec<OccurrenceRecord>,
}

impl From<&ResponseSet> for AnnotationFile {
    fn from(r: &ResponseSet) -> Self {
        AnnotationFile {
            video_id: r.video_id().to_string(),
            height: r.height(),
            width: r.width(),
            occurrences: r
                .occurrences()
                .iter()
                .map(|m| OccurrenceRecord {
                    start: m.start(),
                    end: m.end(),
                    masks: m.masks().iter().map(RleMask::runs_csv).collect(),
                })
                .collect(),
        }
    }
}

impl AnnotationFile {
    pub fn to_response(&self) -> Result<ResponseSet> {
        let mut occurrences = Vec::with_capacity(self.occurrences.len());
        for (i, occ) in self.occurrences.iter().enumerate() {
            if occ.end < occ.start {
                return Err(Error::InvalidResponse(format!(
                    "video {}: occurrence {i} ends ({}) before it starts ({})",
                    self.video_id, occ.end, occ.start
                )));
            }
            if occ.masks.len() != occ.end - occ.start + 1 {
                return Err(Error::InvalidResponse(format!(
                    "video {}: occurrence {i} spans {} frames but has {} masks",
                    self.video_id,
                    occ.end - occ.start + 1,
                    occ.masks.len()
                )));
            }
            let masks = occ
                .masks
                .iter()
                .enumerate()
                .map(|(j, text)| {
                    RleMask::parse_csv(self.height, self.width, text).map_err(|e| {
                        Error::CorruptMask(format!(
                            "video {} frame {}: {e}",
                            self.video_id,
                            occ.start + j
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            occurrences.push(Masklet::new(occ.start, masks)?);
        }
        ResponseSet::new(self.video_id.clone(), self.height, self.width, occurrences)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("annotation serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_response(path: &Path, response: &ResponseSet) -> Result<()> {
    std::fs::write(path, AnnotationFile::from(response).to_json()).map_err(|e| Error::io(path, e))
}

pub fn read_response(path: &Path) -> Result<ResponseSet> {
    AnnotationFile::read(path)?.to_response()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_mismatch_rejected() {
        let file = AnnotationFile {
            video_id: "v".into(),
            height: 2,
            width: 2,
            occurrences: vec![OccurrenceRecord {
                start: 1,
                end: 2,
                masks: vec!["0,4".into()],
            }],
        };
        assert!(matches!(file.to_response(), Err(Error::InvalidResponse(_))));
    }

    #[test]
    fn corrupt_mask_names_frame() {
        let file = AnnotationFile {
            video_id: "v".into(),
            height: 2,
            width: 2,
            occurrences: vec![OccurrenceRecord {
                start: 3,
                end: 4,
                masks: vec!["0,4".into(), "1,2".into()],
            }],
        };
        let err = file.to_response().unwrap_err().to_string();
        assert!(err.contains("frame 4"), "{err}");
    }
}
