//! Synthetic desk-scale dataset: smooth sinusoidal background patches, dark
//! central ellipses for foregrounds, and tiled scenes with annotated embedded
//! ellipses. Foreground and background are linearly separable by center mean,
//! which the acceptance thresholds lean on.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::Patch;
use crate::io::dataset::{AnnotationFile, ManifestEntry, PatchDatasetManifest, SceneAnnotation};
use crate::io::image::encode_image;
use crate::numerics::Tensor;
use crate::seeding::{derive_seed, rng_from};
use crate::synthesis::{plan_placements, AugmentPlan, BoundingBox, SceneImage};

/// Background amplitude of the sinusoidal field.
const BG_AMPLITUDE: f64 = 0.35;
/// Additive ellipse intensity (clamped to [-1, 1]).
const ELLIPSE_INTENSITY: f64 = -0.8;
/// Semi-axis range as a fraction of the region side.
const SEMI_AXIS_RANGE: (f64, f64) = (0.2, 0.35);

const PATCH_STREAM: u64 = 0x0F17;
const SCENE_STREAM: u64 = 0x5CE7;

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureConfig {
    pub n_patches: usize,
    /// Patch side in pixels; matches the generator output size.
    pub patch_size: usize,
    /// Number of annotated scenes; scene i carries i % 4 embedded objects.
    pub n_scenes: usize,
    /// Fraction of foreground patches (0.5 keeps labels balanced).
    pub fg_fraction: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n_patches: 128,
            patch_size: 64,
            n_scenes: 8,
            fg_fraction: 0.5,
            seed: 0,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if ![8, 16, 32, 64].contains(&self.patch_size) {
            return Err(Error::InvalidConfig(format!(
                "fixture patch_size must be one of 8, 16, 32, 64; got {}",
                self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.fg_fraction) {
            return Err(Error::InvalidConfig(format!(
                "fg_fraction must be in [0, 1], got {}",
                self.fg_fraction
            )));
        }
        Ok(())
    }

    /// Scene side: large enough to hold several 2x-4x patch-size boxes.
    pub fn scene_side(&self) -> usize {
        (self.patch_size * 16).clamp(256, 512)
    }
}

fn sample_frequency(rng: &mut ChaCha8Rng) -> f64 {
    // f in {1, 2, 3}
    rng.random_range(1..=3) as f64
}

/// Write the sinusoidal background field into a square region of the tensor.
fn fill_background_region(
    tensor: &mut Tensor,
    x0: usize,
    y0: usize,
    side: usize,
    rng: &mut ChaCha8Rng,
) {
    let (f1, f2) = (sample_frequency(rng), sample_frequency(rng));
    let (p1, p2) = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let width = tensor.shape()[2];
    for row in 0..side {
        let sy = (std::f64::consts::TAU * f2 * row as f64 / side as f64 + p2).sin();
        for col in 0..side {
            let sx = (std::f64::consts::TAU * f1 * col as f64 / side as f64 + p1).sin();
            tensor.data_mut()[(y0 + row) * width + x0 + col] = BG_AMPLITUDE * sx * sy;
        }
    }
}

/// Add a randomly oriented dark ellipse to a square region: center within the
/// region's middle third, semi-axes in [0.2, 0.35] of the side.
fn add_ellipse_to_region(
    tensor: &mut Tensor,
    x0: usize,
    y0: usize,
    side: usize,
    rng: &mut ChaCha8Rng,
) {
    let s = side as f64;
    let cx = rng.random_range(s / 3.0..2.0 * s / 3.0);
    let cy = rng.random_range(s / 3.0..2.0 * s / 3.0);
    let a = rng.random_range(SEMI_AXIS_RANGE.0 * s..SEMI_AXIS_RANGE.1 * s);
    let b = rng.random_range(SEMI_AXIS_RANGE.0 * s..SEMI_AXIS_RANGE.1 * s);
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (sin_t, cos_t) = theta.sin_cos();
    let width = tensor.shape()[2];
    for row in 0..side {
        for col in 0..side {
            let dx = col as f64 + 0.5 - cx;
            let dy = row as f64 + 0.5 - cy;
            let u = dx * cos_t + dy * sin_t;
            let v = -dx * sin_t + dy * cos_t;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                let px = &mut tensor.data_mut()[(y0 + row) * width + x0 + col];
                *px = (*px + ELLIPSE_INTENSITY).clamp(-1.0, 1.0);
            }
        }
    }
}

/// A smooth background patch.
pub fn background_patch(size: usize, rng: &mut ChaCha8Rng) -> Patch {
    let mut tensor = Tensor::zeros(&[1, size, size]);
    fill_background_region(&mut tensor, 0, 0, size, rng);
    Patch::from_tensor(tensor).expect("background stays within range")
}

/// A background patch with a dark central ellipse.
pub fn foreground_patch(size: usize, rng: &mut ChaCha8Rng) -> Patch {
    let mut tensor = Tensor::zeros(&[1, size, size]);
    fill_background_region(&mut tensor, 0, 0, size, rng);
    add_ellipse_to_region(&mut tensor, 0, 0, size, rng);
    Patch::from_tensor(tensor).expect("clamped values stay within range")
}

/// Scene tiled from background fields with `n_objects` embedded, annotated
/// ellipses.
pub fn fixture_scene(
    scene_side: usize,
    patch_size: usize,
    n_objects: usize,
    label: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(SceneImage, Vec<BoundingBox>)> {
    let mut tensor = Tensor::zeros(&[1, scene_side, scene_side]);
    let mut y0 = 0;
    while y0 < scene_side {
        let tile_h = patch_size.min(scene_side - y0);
        let mut x0 = 0;
        while x0 < scene_side {
            let tile = patch_size.min(scene_side - x0).min(tile_h);
            fill_background_region(&mut tensor, x0, y0, tile, rng);
            x0 += tile;
        }
        y0 += tile_h;
    }
    let scene = SceneImage::new(tensor, "fixture")?;
    let plan = AugmentPlan {
        target_count: n_objects,
        min_side: 2 * patch_size,
        max_side: (4 * patch_size).min(scene_side / 3),
        max_overlap_iou: 0.0,
        seed: rng.random(),
        feather: 0,
        label: label.to_string(),
    };
    let placements = plan_placements(&scene, &[], &plan)?;
    let mut tensor = scene.pixels().clone();
    for bbox in &placements.boxes {
        add_ellipse_to_region(&mut tensor, bbox.x, bbox.y, bbox.w, rng);
    }
    Ok((SceneImage::new(tensor, "fixture")?, placements.boxes))
}

pub struct FixtureOutput {
    pub manifest_path: PathBuf,
    pub annotations_path: PathBuf,
    pub manifest: PatchDatasetManifest,
    pub annotations: AnnotationFile,
}

/// Label sequence spreading `fg_fraction` foreground patches evenly, so any
/// prefix is close to the requested ratio.
pub fn label_sequence(n: usize, fg_fraction: f64) -> Vec<bool> {
    (0..n)
        .map(|i| {
            (((i + 1) as f64 * fg_fraction).floor() - (i as f64 * fg_fraction).floor()) >= 1.0
        })
        .collect()
}

/// Generate the patch dataset and annotated scenes under `out_dir`, and write
/// `manifest.json` and `annotations.json`. Deterministic per seed, down to
/// the emitted bytes.
pub fn make_fixture(out_dir: &Path, config: &FixtureConfig) -> Result<FixtureOutput> {
    config.validate()?;
    let patches_dir = out_dir.join("patches");
    let scenes_dir = out_dir.join("scenes");
    std::fs::create_dir_all(&patches_dir).map_err(|e| Error::io(&patches_dir, e))?;
    std::fs::create_dir_all(&scenes_dir).map_err(|e| Error::io(&scenes_dir, e))?;

    let mut patch_rng = rng_from(derive_seed(config.seed, PATCH_STREAM));
    let labels = label_sequence(config.n_patches, config.fg_fraction);
    let mut entries = Vec::with_capacity(config.n_patches);
    for (i, &fg) in labels.iter().enumerate() {
        let patch = if fg {
            foreground_patch(config.patch_size, &mut patch_rng)
        } else {
            background_patch(config.patch_size, &mut patch_rng)
        };
        let name = format!("patch_{i:04}.png");
        encode_image(patch.tensor(), &patches_dir.join(&name))?;
        entries.push(ManifestEntry {
            path: format!("patches/{name}"),
            condition: fg as u8,
        });
    }
    let manifest = PatchDatasetManifest {
        root: ".".into(),
        patch_size: config.patch_size,
        entries,
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;

    let mut scene_rng = rng_from(derive_seed(config.seed, SCENE_STREAM));
    let mut scenes = Vec::with_capacity(config.n_scenes);
    for i in 0..config.n_scenes {
        let (scene, boxes) = fixture_scene(
            config.scene_side(),
            config.patch_size,
            i % 4,
            "object",
            &mut scene_rng,
        )?;
        let name = format!("scene_{i:02}.png");
        encode_image(scene.pixels(), &scenes_dir.join(&name))?;
        scenes.push(SceneAnnotation {
            image: format!("scenes/{name}"),
            boxes,
        });
    }
    let annotations = AnnotationFile { scenes };
    let annotations_path = out_dir.join("annotations.json");
    annotations.save(&annotations_path)?;

    Ok(FixtureOutput {
        manifest_path,
        annotations_path,
        manifest,
        annotations,
    })
}
