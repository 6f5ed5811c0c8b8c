use std::path::Path;

use super::idx;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Labelled image collection with pixels in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    /// `[count, channels, height, width]`
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Input(format!(
                "images must be [count, channels, height, width], got {:?}",
                images.shape()
            )));
        }
        if images.batch_size() != labels.len() {
            return Err(Error::Input(format!(
                "{} images but {} labels",
                images.batch_size(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Input("dataset is empty".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Input(format!("label {l} outside [0, {num_classes})")));
        }
        if !images.is_finite() {
            return Err(Error::Input("non-finite pixel values".into()));
        }
        Ok(Dataset { name: name.into(), images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[channels, height, width]`
    pub fn image_dims(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copies the listed samples into a standalone dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let images = self.images.gather(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.name.clone(), images, labels, self.num_classes)
    }
}

/// Loads an IDX image/label pair. Pixel bytes are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path, name: &str, num_classes: usize) -> Result<Dataset> {
    let raw = idx::parse_images(&idx::read_maybe_gz(images_path)?, images_path)?;
    let labels = idx::parse_labels(&idx::read_maybe_gz(labels_path)?, labels_path)?;
    if raw.count != labels.len() {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            reason: format!("{} labels for {} images", labels.len(), raw.count),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            reason: format!("label {l} outside [0, {num_classes})"),
        });
    }
    let pixels = raw.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let images = Tensor::new(vec![raw.count, 1, raw.rows, raw.cols], pixels)?;
    Dataset::new(name, images, labels.into_iter().map(usize::from).collect(), num_classes)
}
