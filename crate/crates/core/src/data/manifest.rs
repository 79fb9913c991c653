use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::catalog::{ClassCatalog, ClassEntry};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    name: String,
    #[serde(default)]
    root: Option<PathBuf>,
    image_size: u32,
    resolution_min_m: f64,
    resolution_max_m: f64,
    #[serde(default)]
    num_images: Option<usize>,
    #[serde(default)]
    classes: Vec<ClassFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassFile {
    name: String,
    #[serde(default)]
    aliases: Vec<String>,
    #[serde(default)]
    count: Option<usize>,
}

/// One image on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub path: PathBuf,
    pub class: usize,
}

/// A dataset description. `samples` is filled only by [`load_manifest`],
/// which checks the manifest against the directory-per-class layout under
/// `root`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub root: PathBuf,
    pub image_size: u32,
    pub resolution_range: (f64, f64),
    pub classes: ClassCatalog,
    pub samples: Vec<SampleRef>,
    declared_total: Option<usize>,
}

impl DatasetManifest {
    /// Sum of per-class counts, or the declared total when counts are absent.
    pub fn num_images(&self) -> usize {
        if self.classes.entries().iter().all(|e| e.sample_count.is_some()) && !self.classes.is_empty() {
            self.classes.entries().iter().filter_map(|e| e.sample_count).sum()
        } else {
            self.declared_total.unwrap_or(0)
        }
    }

    /// Builds a manifest in memory; used for synthetic data and tests.
    pub fn in_memory(name: &str, image_size: u32, resolution_range: (f64, f64), classes: ClassCatalog) -> Result<Self> {
        let m = DatasetManifest {
            name: name.to_string(),
            root: PathBuf::new(),
            image_size,
            resolution_range,
            classes,
            samples: Vec::new(),
            declared_total: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// Class index of every sample, class-major, from the per-class counts.
    pub fn labels(&self) -> Vec<usize> {
        if !self.samples.is_empty() {
            return self.samples.iter().map(|s| s.class).collect();
        }
        self.classes
            .entries()
            .iter()
            .enumerate()
            .flat_map(|(i, e)| std::iter::repeat_n(i, e.sample_count.unwrap_or(0)))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.resolution_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Validation(format!(
                "{}: resolution range ({lo}, {hi}) must satisfy 0 < min <= max",
                self.name
            )));
        }
        if self.image_size == 0 {
            return Err(Error::Validation(format!("{}: image_size must be positive", self.name)));
        }
        let counted = self.classes.entries().iter().all(|e| e.sample_count.is_some());
        if let (Some(total), true) = (self.declared_total, counted && !self.classes.is_empty()) {
            let sum: usize = self.classes.entries().iter().filter_map(|e| e.sample_count).sum();
            if sum != total {
                return Err(Error::Validation(format!(
                    "{}: num_images {total} disagrees with the per-class total {sum}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Reads and validates the manifest file without touching the image tree.
pub fn parse_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let root = match file.root {
        Some(r) if r.is_absolute() => r,
        Some(r) => base.join(r),
        None => base.to_path_buf(),
    };
    let classes = ClassCatalog::new(
        file.classes
            .into_iter()
            .map(|c| ClassEntry::new(&c.name, c.aliases, c.count))
            .collect(),
    )
    .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let m = DatasetManifest {
        name: file.name,
        root,
        image_size: file.image_size,
        resolution_range: (file.resolution_min_m, file.resolution_max_m),
        classes,
        samples: Vec::new(),
        declared_total: file.num_images,
    };
    m.validate()?;
    Ok(m)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Parses the manifest and checks it against `root/<class name>/` image
/// directories. Classes without a declared count take the on-disk count.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut m = parse_manifest(path)?;
    let mut entries = Vec::with_capacity(m.classes.len());
    let mut samples = Vec::new();
    for (idx, entry) in m.classes.entries().iter().enumerate() {
        let dir = m.root.join(&entry.name);
        if !dir.is_dir() {
            return Err(Error::Validation(format!(
                "{}: class `{}` has no directory at {}",
                m.name,
                entry.name,
                dir.display()
            )));
        }
        let files = list_images(&dir)?;
        if let Some(expected) = entry.sample_count {
            if expected != files.len() {
                return Err(Error::Validation(format!(
                    "{}: class `{}` declares {expected} images but {} holds {}",
                    m.name,
                    entry.name,
                    dir.display(),
                    files.len()
                )));
            }
        }
        let mut e = entry.clone();
        e.sample_count = Some(files.len());
        entries.push(e);
        samples.extend(files.into_iter().map(|path| SampleRef { path, class: idx }));
    }
    m.classes = ClassCatalog::new(entries)?;
    m.samples = samples;
    m.validate()?;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub classes: usize,
    pub samples: usize,
    pub resolution_range: (f64, f64),
    pub image_size: u32,
    pub per_class: Vec<(String, usize)>,
}

pub fn dataset_stats(m: &DatasetManifest) -> DatasetSummary {
    DatasetSummary {
        name: m.name.clone(),
        classes: m.classes.len(),
        samples: m.num_images(),
        resolution_range: m.resolution_range,
        image_size: m.image_size,
        per_class: m
            .classes
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.sample_count.unwrap_or(0)))
            .collect(),
    }
}
