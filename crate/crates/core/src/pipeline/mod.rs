//! The segmentation pipeline: toy network, candidate mining, adaptive
//! memory generation, stages and clip-wise inference.

pub mod amg;
pub mod config;
pub mod manifest;
pub mod model;
pub mod select;
pub mod stage;

pub use amg::{amg_fuse, AmgOutput};
pub use config::{PipelineConfig, CANDIDATES};
pub use manifest::{PredictionEntry, PredictionManifest};
pub use model::{
    binarize_candidate, init_params, mask_fraction, param_specs, patchify, positional_encoding,
    CandidateVars, FrameCandidates, Geometry, MaskCandidate, MemoryBank, MemoryEntry, MemoryKind,
    Model,
};
pub use select::{best_candidate, dfg_select, finalize_predictions, tfg_select, Selection};
pub use stage::{
    clip_ranges, infer_video, run_clip, run_stage, ClipProvenance, Query, StageContext,
    StageOutput, StageProvenance, VideoPrediction,
};
