//! Run configuration: a flat `section.key = value` text format with strict
//! parsing; unknown keys are hard errors so configs cannot silently drift.
//!
//! One top-level `seed` drives every random stream in a run; component seeds
//! are derived from it per stream, and scene-level seeds additionally mix in
//! the scene index.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::generator::{ConditionLabel, GeneratorConfig};
use crate::io::fixture::FixtureConfig;
use crate::seeding::derive_seed;
use crate::synthesis::AugmentPlan;
use crate::trainer::{InvertConfig, ProjectionMode, TrainConfig};

/// Stream tags for deriving component seeds from the run seed.
pub mod streams {
    pub const GENERATOR: u64 = 0x01;
    pub const TRAINER: u64 = 0x02;
    pub const FIXTURE: u64 = 0x03;
    pub const INVERT: u64 = 0x04;
    pub const GRADCHECK: u64 = 0x05;
    /// Per-scene seeds are SCENE + scene index.
    pub const SCENE: u64 = 0x1000;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSettings {
    /// Number of random coordinates to probe.
    pub coords: usize,
    /// Central-difference step.
    pub step: f64,
    /// Relative tolerance.
    pub tol: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings {
            coords: 25,
            step: 1e-5,
            tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PathSettings {
    pub manifest: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GeneratorConfig,
    pub train: TrainConfig,
    pub invert: InvertConfig,
    pub invert_condition: ConditionLabel,
    pub synth_sample_id: usize,
    pub synth_condition: ConditionLabel,
    pub augment: AugmentPlan,
    pub fixture: FixtureConfig,
    pub gradcheck: GradcheckSettings,
    pub paths: PathSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            gen: GeneratorConfig::default(),
            train: TrainConfig::default(),
            invert: InvertConfig::default(),
            invert_condition: ConditionLabel::Background,
            synth_sample_id: 0,
            synth_condition: ConditionLabel::Foreground,
            augment: AugmentPlan::default(),
            fixture: FixtureConfig::default(),
            gradcheck: GradcheckSettings::default(),
            paths: PathSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                path: path.to_path_buf(),
                line: idx + 1,
                detail: format!("expected `key = value`, got {line:?}"),
            })?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::ConfigParse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    detail: e.to_string(),
                })?;
        }
        Ok(config)
    }

    /// Apply a `key=value` override from the command line.
    pub fn apply_override(&mut self, raw: &str) -> Result<()> {
        let (key, value) = raw.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("override must look like key=value, got {raw:?}"))
        })?;
        self.set(key.trim(), value.trim())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "gen.latent_dim" => self.gen.latent_dim = parse(key, value)?,
            "gen.output_size" => self.gen.output_size = parse(key, value)?,
            "gen.channels" => self.gen.channels = parse(key, value)?,
            "gen.base_feat" => self.gen.base_feat = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.lr_w" => self.train.lr_w = parse(key, value)?,
            "train.lr_z" => self.train.lr_z = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.z_steps_per_epoch" => self.train.z_steps_per_epoch = parse(key, value)?,
            "train.projection" => {
                let mode = parse_projection(value)?;
                self.train.projection = mode;
                self.invert.projection = mode;
            }
            "invert.steps" => self.invert.steps = parse(key, value)?,
            "invert.lr_z" => self.invert.lr_z = parse(key, value)?,
            "invert.condition" => self.invert_condition = parse_condition(value)?,
            "synth.sample_id" => self.synth_sample_id = parse(key, value)?,
            "synth.condition" => self.synth_condition = parse_condition(value)?,
            "augment.target_count" => self.augment.target_count = parse(key, value)?,
            "augment.min_side" => self.augment.min_side = parse(key, value)?,
            "augment.max_side" => self.augment.max_side = parse(key, value)?,
            "augment.max_overlap_iou" => self.augment.max_overlap_iou = parse(key, value)?,
            "augment.feather" => self.augment.feather = parse(key, value)?,
            "augment.label" => self.augment.label = value.to_string(),
            "fixture.n_patches" => self.fixture.n_patches = parse(key, value)?,
            "fixture.n_scenes" => self.fixture.n_scenes = parse(key, value)?,
            "fixture.fg_fraction" => self.fixture.fg_fraction = parse(key, value)?,
            "gradcheck.coords" => self.gradcheck.coords = parse(key, value)?,
            "gradcheck.step" => self.gradcheck.step = parse(key, value)?,
            "gradcheck.tol" => self.gradcheck.tol = parse(key, value)?,
            "paths.manifest" => self.paths.manifest = Some(PathBuf::from(value)),
            "paths.annotations" => self.paths.annotations = Some(PathBuf::from(value)),
            "paths.checkpoint" => self.paths.checkpoint = Some(PathBuf::from(value)),
            "paths.image" => self.paths.image = Some(PathBuf::from(value)),
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Fill the per-component seed fields from the run seed. Called once
    /// after all overrides are applied.
    pub fn resolve_seeds(&mut self) {
        self.gen.seed = derive_seed(self.seed, streams::GENERATOR);
        self.train.seed = derive_seed(self.seed, streams::TRAINER);
        self.fixture.seed = derive_seed(self.seed, streams::FIXTURE);
        // augment.seed is per scene; see `scene_seed`.
        self.fixture.patch_size = self.gen.output_size;
    }

    pub fn scene_seed(&self, scene_index: usize) -> u64 {
        derive_seed(self.seed, streams::SCENE + scene_index as u64)
    }

    /// The resolved flat form, echoed into every run directory. Parsing the
    /// echo reproduces this config.
    pub fn to_flat(&self) -> String {
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("gen.latent_dim = {}", self.gen.latent_dim),
            format!("gen.output_size = {}", self.gen.output_size),
            format!("gen.channels = {}", self.gen.channels),
            format!("gen.base_feat = {}", self.gen.base_feat),
            format!("train.epochs = {}", self.train.epochs),
            format!("train.lr_w = {}", self.train.lr_w),
            format!("train.lr_z = {}", self.train.lr_z),
            format!("train.batch_size = {}", self.train.batch_size),
            format!("train.z_steps_per_epoch = {}", self.train.z_steps_per_epoch),
            format!(
                "train.projection = {}",
                match self.train.projection {
                    ProjectionMode::Ball => "ball",
                    ProjectionMode::Sphere => "sphere",
                }
            ),
            format!("invert.steps = {}", self.invert.steps),
            format!("invert.lr_z = {}", self.invert.lr_z),
            format!("invert.condition = {}", self.invert_condition.bit()),
            format!("synth.sample_id = {}", self.synth_sample_id),
            format!("synth.condition = {}", self.synth_condition.bit()),
            format!("augment.target_count = {}", self.augment.target_count),
            format!("augment.min_side = {}", self.augment.min_side),
            format!("augment.max_side = {}", self.augment.max_side),
            format!("augment.max_overlap_iou = {}", self.augment.max_overlap_iou),
            format!("augment.feather = {}", self.augment.feather),
            format!("augment.label = {}", self.augment.label),
            format!("fixture.n_patches = {}", self.fixture.n_patches),
            format!("fixture.n_scenes = {}", self.fixture.n_scenes),
            format!("fixture.fg_fraction = {}", self.fixture.fg_fraction),
            format!("gradcheck.coords = {}", self.gradcheck.coords),
            format!("gradcheck.step = {}", self.gradcheck.step),
            format!("gradcheck.tol = {}", self.gradcheck.tol),
        ];
        for (key, path) in [
            ("paths.manifest", &self.paths.manifest),
            ("paths.annotations", &self.paths.annotations),
            ("paths.checkpoint", &self.paths.checkpoint),
            ("paths.image", &self.paths.image),
        ] {
            if let Some(p) = path {
                lines.push(format!("{key} = {}", p.display()));
            }
        }
        lines.push(String::new());
        lines.join("\n")
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {value:?} for key {key}")))
}

fn parse_projection(value: &str) -> Result<ProjectionMode> {
    match value {
        "ball" => Ok(ProjectionMode::Ball),
        "sphere" => Ok(ProjectionMode::Sphere),
        other => Err(Error::InvalidConfig(format!(
            "projection must be `ball` or `sphere`, got {other:?}"
        ))),
    }
}

fn parse_condition(value: &str) -> Result<ConditionLabel> {
    match value {
        "0" => Ok(ConditionLabel::Background),
        "1" => Ok(ConditionLabel::Foreground),
        other => Err(Error::InvalidConfig(format!(
            "condition must be 0 or 1, got {other:?}"
        ))),
    }
}
