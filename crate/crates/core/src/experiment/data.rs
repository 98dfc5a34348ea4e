//! Materialises the train and evaluation sets an experiment config names.

use crate::data::{
    load_depth_dataset, load_image_dir, synthetic_ood_set, synthetic_test_set, synthetic_train_set, DepthSample,
};
use crate::error::{Error, Result};
use crate::model::{DepthMap, Image};
use crate::nn::Tensor;

use super::config::{DatasetSource, ExperimentConfig, OodSource};

/// An evaluation image with optional ground-truth depth. Depth is a
/// one-channel tensor where zero marks a missing value.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalImage {
    pub image: Image,
    pub depth: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OodData {
    pub name: String,
    pub items: Vec<EvalImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalData {
    pub id: Vec<EvalImage>,
    pub ood: Vec<OodData>,
}

fn images(items: &[EvalImage]) -> Vec<Image> {
    items.iter().map(|e| e.image.clone()).collect()
}

impl EvalData {
    pub fn id_images(&self) -> Vec<Image> {
        images(&self.id)
    }
}

impl OodData {
    pub fn images(&self) -> Vec<Image> {
        images(&self.items)
    }
}

fn with_depth(image: Image, depth: Option<DepthMap>) -> EvalImage {
    EvalImage {
        image,
        depth: depth.map(|d| d.tensor().clone()),
    }
}

/// Depth-supervised training samples. Directory datasets need a dense
/// depth file for every image.
pub fn load_train_samples(cfg: &ExperimentConfig) -> Result<Vec<DepthSample>> {
    match &cfg.dataset.source {
        DatasetSource::Synthetic => synthetic_train_set(&cfg.dataset.split, &cfg.scene_params()),
        DatasetSource::Directory { train, .. } => {
            let rows = load_depth_dataset(train, (cfg.model.height, cfg.model.width), cfg.model.d_max)?;
            if rows.is_empty() {
                return Err(Error::input(format!("no training images under {}", train.display())));
            }
            rows.into_iter()
                .map(|(stem, image, depth)| {
                    let depth = depth.ok_or_else(|| Error::input(format!("training image {stem} has no depth file")))?;
                    let depth = DepthMap::new(depth)
                        .map_err(|e| Error::input(format!("training depth for {stem}: {e}")))?;
                    Ok(DepthSample { image, depth })
                })
                .collect()
        }
    }
}

pub fn load_eval_data(cfg: &ExperimentConfig) -> Result<EvalData> {
    let res = (cfg.model.height, cfg.model.width);
    let scene = cfg.scene_params();
    let id = match &cfg.dataset.source {
        DatasetSource::Synthetic => synthetic_test_set(&cfg.dataset.split, &scene)?
            .into_iter()
            .map(|s| with_depth(s.image, Some(s.depth)))
            .collect(),
        DatasetSource::Directory { test, .. } => load_depth_dataset(test, res, cfg.model.d_max)?
            .into_iter()
            .map(|(_, image, depth)| EvalImage { image, depth })
            .collect(),
    };
    let ood = cfg
        .eval
        .ood
        .iter()
        .map(|source| {
            let items = match source {
                OodSource::Synthetic(v) => synthetic_ood_set(&cfg.dataset.split, *v, &scene)?
                    .into_iter()
                    .map(|(image, depth)| with_depth(image, depth))
                    .collect(),
                OodSource::Directory { path, .. } => load_image_dir(path, res)?
                    .into_iter()
                    .map(|image| EvalImage { image, depth: None })
                    .collect(),
            };
            Ok(OodData {
                name: source.name().to_string(),
                items,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalData { id, ood })
}
