use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mask::RleMask;

/// One temporally contiguous occurrence of the target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Masklet {
    start: usize,
    end: usize,
    masks: Vec<RleMask>,
}

impl Masklet {
    pub fn new(start: usize, masks: Vec<RleMask>) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::InvalidResponse("masklet has no masks".into()))?;
        let dims = first.dims();
        if let Some(i) = masks.iter().position(|m| m.dims() != dims) {
            return Err(Error::Dimension(format!(
                "masklet frame {} has dims {:?}, expected {:?}",
                start + i,
                masks[i].dims(),
                dims
            )));
        }
        Ok(Masklet {
            start,
            end: start + masks.len() - 1,
            masks,
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Inclusive.
    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[RleMask] {
        &self.masks
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &RleMask)> + '_ {
        self.masks
            .iter()
            .enumerate()
            .map(move |(i, m)| (self.start + i, m))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.masks[0].dims()
    }
}

/// The full spatio-temporal response for one video: sorted, disjoint masklets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponseSet {
    video_id: String,
    height: usize,
    width: usize,
    occurrences: Vec<Masklet>,
}

impl ResponseSet {
    pub fn new(
        video_id: impl Into<String>,
        height: usize,
        width: usize,
        occurrences: Vec<Masklet>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        for (i, m) in occurrences.iter().enumerate() {
            if m.dims() != (height, width) {
                return Err(Error::Dimension(format!(
                    "video {video_id}: occurrence {i} has dims {:?}, expected {:?}",
                    m.dims(),
                    (height, width)
                )));
            }
        }
        for pair in occurrences.windows(2) {
            if pair[1].start() <= pair[0].end() {
                return Err(Error::InvalidResponse(format!(
                    "video {video_id}: temporal overlap or unsorted masklets at frames {}..={} and {}..={}",
                    pair[0].start(),
                    pair[0].end(),
                    pair[1].start(),
                    pair[1].end()
                )));
            }
        }
        Ok(ResponseSet {
            video_id,
            height,
            width,
            occurrences,
        })
    }

    pub fn empty(video_id: impl Into<String>, height: usize, width: usize) -> Self {
        ResponseSet {
            video_id: video_id.into(),
            height,
            width,
            occurrences: Vec::new(),
        }
    }

    /// Groups maximal runs of consecutive non-empty frames into masklets.
    pub fn from_frames(
        video_id: impl Into<String>,
        height: usize,
        width: usize,
        frames: Vec<Option<RleMask>>,
    ) -> Result<Self> {
        let mut occurrences = Vec::new();
        let mut run: Vec<RleMask> = Vec::new();
        let mut run_start = 0;
        for (t, frame) in frames.into_iter().enumerate() {
            match frame.filter(|m| !m.is_empty()) {
                Some(mask) => {
                    if run.is_empty() {
                        run_start = t;
                    }
                    run.push(mask);
                }
                None if !run.is_empty() => {
                    occurrences.push(Masklet::new(run_start, std::mem::take(&mut run))?);
                }
                None => {}
            }
        }
        if !run.is_empty() {
            occurrences.push(Masklet::new(run_start, run)?);
        }
        Self::new(video_id, height, width, occurrences)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn occurrences(&self) -> &[Masklet] {
        &self.occurrences
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &RleMask)> + '_ {
        self.occurrences.iter().flat_map(|m| m.frames())
    }

    pub fn frame_count(&self) -> usize {
        self.occurrences.iter().map(Masklet::len).sum()
    }

    pub fn frame_map(&self) -> BTreeMap<usize, &RleMask> {
        self.frames().collect()
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.occurrences.last().map(Masklet::end)
    }
}
