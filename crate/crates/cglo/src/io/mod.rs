//! File formats and dataset plumbing: PNG images, JSON manifests and
//! annotations, the synthetic fixture, and run configuration.

pub mod config;
pub mod dataset;
pub mod fixture;
pub mod image;

pub use config::RunConfig;
pub use dataset::{AnnotationFile, PatchDatasetManifest, SceneAnnotation};
pub use fixture::{make_fixture, FixtureConfig};
pub use image::{decode_image, encode_image};
