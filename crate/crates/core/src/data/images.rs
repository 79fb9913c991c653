use rayon::prelude::*;

use super::manifest::DatasetManifest;
use crate::augment::{load_image, RgbImage};
use crate::error::{Error, Result};

/// Decoded images with their class labels, in manifest order.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub name: String,
    pub class_names: Vec<String>,
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn new(name: &str, class_names: Vec<String>, images: Vec<RgbImage>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Validation(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        Ok(LabeledImages {
            name: name.to_string(),
            class_names,
            images,
            labels,
        })
    }

    /// Decodes every sample listed by a loaded manifest, in parallel.
    pub fn from_manifest(m: &DatasetManifest) -> Result<Self> {
        if m.samples.is_empty() {
            return Err(Error::Empty(format!("manifest `{}` lists no samples", m.name)));
        }
        let images = m
            .samples
            .par_iter()
            .map(|s| load_image(&s.path))
            .collect::<Result<Vec<_>>>()?;
        let labels = m.samples.iter().map(|s| s.class).collect();
        LabeledImages::new(&m.name, m.classes.names(), images, labels)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}
