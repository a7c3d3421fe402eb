//! Synthetic visual-query scenes, datasets, statistics and validation.

pub mod dataset;
pub mod raster;
pub mod scene;
pub mod stats;
pub mod validate;

pub use dataset::{
    generate_dataset, generate_scenes, DatasetManifest, SceneDistribution, SceneEntry,
};
pub use raster::{ShapeInstance, ShapeKind};
pub use scene::{generate_scene, SceneConfig, SceneParams, SceneRecord};
pub use stats::{compute_stats, DatasetStats, Histogram};
pub use validate::{validate_dataset, validate_manifest, Violation};
