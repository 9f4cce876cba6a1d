//! In-memory training examples and their construction from manifests.

use std::collections::HashMap;
use std::path::Path;

use iaa_core::dataset::{Fold, ImageRecord};
use iaa_core::IaaScore;
use image::imageops::FilterType;

use crate::error::{Error, Result};

/// One image with its diagnosis label and optional agreement target.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    /// Row-major grayscale intensities in `[0, 1]`.
    pub image: Vec<f64>,
    pub label: usize,
    pub iaa: Option<f64>,
}

impl Example {
    pub fn malignant(&self) -> bool {
        self.label == 1
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FoldData {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

impl FoldData {
    pub fn fold(&self, fold: Fold) -> &[Example] {
        match fold {
            Fold::Train => &self.train,
            Fold::Valid => &self.valid,
            Fold::Test => &self.test,
        }
    }

    fn fold_mut(&mut self, fold: Fold) -> &mut Vec<Example> {
        match fold {
            Fold::Train => &mut self.train,
            Fold::Valid => &mut self.valid,
            Fold::Test => &mut self.test,
        }
    }

    /// Distributes examples by `split`; unlisted ids are dropped.
    pub fn from_split(examples: Vec<Example>, split: &HashMap<String, Fold>) -> Self {
        let mut out = Self::default();
        for e in examples {
            if let Some(&fold) = split.get(&e.id) {
                out.fold_mut(fold).push(e);
            }
        }
        out
    }
}

/// Loads an image as grayscale, resized to `side x side` with bilinear filtering.
pub fn load_gray(path: &Path, side: usize) -> Result<Vec<f64>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = img.to_luma8();
    let gray = if gray.width() as usize == side && gray.height() as usize == side {
        gray
    } else {
        image::imageops::resize(&gray, side as u32, side as u32, FilterType::Triangle)
    };
    Ok(gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect())
}

/// Builds examples for manifest images; the label is 1 for malignant lesions.
pub fn examples_from_manifest(
    images: &[ImageRecord],
    iaa: &HashMap<String, IaaScore>,
    side: usize,
) -> Result<Vec<Example>> {
    images
        .iter()
        .map(|r| {
            Ok(Example {
                id: r.image_id.clone(),
                image: load_gray(&r.image_path, side)?,
                label: usize::from(r.malignant),
                iaa: iaa.get(&r.image_id).map(|s| s.value),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str) -> Example {
        Example {
            id: id.into(),
            image: vec![0.0; 4],
            label: 0,
            iaa: None,
        }
    }

    #[test]
    fn split_distributes_and_drops_unknown() {
        let split: HashMap<String, Fold> =
            [("a".to_string(), Fold::Train), ("b".to_string(), Fold::Test)].into_iter().collect();
        let data = FoldData::from_split(vec![ex("a"), ex("b"), ex("c")], &split);
        assert_eq!(data.train.len(), 1);
        assert_eq!(data.valid.len(), 0);
        assert_eq!(data.fold(Fold::Test)[0].id, "b");
    }

    #[test]
    fn gray_loader_resizes_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        image::GrayImage::from_pixel(16, 16, image::Luma([255])).save(&path).unwrap();
        let v = load_gray(&path, 8).unwrap();
        assert_eq!(v.len(), 64);
        assert!(v.iter().all(|&p| p == 1.0));
    }
}
