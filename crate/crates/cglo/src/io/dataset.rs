//! JSON dataset files: the patch manifest consumed by training and the
//! per-scene annotation document consumed and produced by augmentation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ConditionLabel, Patch};
use crate::io::image::decode_image;
use crate::synthesis::BoundingBox;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Image path relative to the dataset root.
    pub path: String,
    /// 0 = background, 1 = foreground.
    pub condition: u8,
}

/// Training-set listing: one patch file plus condition label per sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDatasetManifest {
    /// Dataset root, relative to the manifest file's directory.
    pub root: String,
    /// Declared side length every referenced patch must decode to.
    pub patch_size: usize,
    pub entries: Vec<ManifestEntry>,
}

impl PatchDatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    /// Parse the manifest and check that every referenced file exists and
    /// every label is 0 or 1.
    pub fn load(path: &Path) -> Result<PatchDatasetManifest> {
        let manifest: PatchDatasetManifest = read_json(path)?;
        let base = manifest.base_dir(path);
        for entry in &manifest.entries {
            if entry.condition > 1 {
                return Err(Error::BadManifest(format!(
                    "{}: condition label must be 0 or 1, got {}",
                    entry.path, entry.condition
                )));
            }
            let file = base.join(&entry.path);
            if !file.is_file() {
                return Err(Error::BadManifest(format!(
                    "referenced file {} does not exist",
                    file.display()
                )));
            }
        }
        Ok(manifest)
    }

    fn base_dir(&self, manifest_path: &Path) -> PathBuf {
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        dir.join(&self.root)
    }

    /// Decode every referenced patch, checking the declared size.
    pub fn load_patches(
        &self,
        manifest_path: &Path,
    ) -> Result<(Vec<Patch>, Vec<ConditionLabel>)> {
        let base = self.base_dir(manifest_path);
        let mut patches = Vec::with_capacity(self.entries.len());
        let mut conditions = Vec::with_capacity(self.entries.len());
        for entry in &self.entries {
            let tensor = decode_image(&base.join(&entry.path))?;
            if tensor.shape()[1] != self.patch_size || tensor.shape()[2] != self.patch_size {
                return Err(Error::BadManifest(format!(
                    "{}: decodes to {}, manifest declares {}x{}",
                    entry.path,
                    tensor.shape_str(),
                    self.patch_size,
                    self.patch_size
                )));
            }
            patches.push(Patch::from_tensor(tensor)?);
            conditions.push(ConditionLabel::from_value(entry.condition as f64)?);
        }
        Ok((patches, conditions))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    /// Scene image path relative to the annotation file's directory.
    pub image: String,
    pub boxes: Vec<BoundingBox>,
}

/// One array of scene records; parse/serialize round-trips losslessly.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnnotationFile {
    pub scenes: Vec<SceneAnnotation>,
}

impl AnnotationFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<AnnotationFile> {
        read_json(path)
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}
