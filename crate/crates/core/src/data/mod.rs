//! In-distribution and OOD data: procedural scenes, directory ingestion
//! and evaluation-set assembly.

mod dir;
mod synth;

use rand::seq::index;
use serde::{Deserialize, Serialize};

pub use dir::{
    load_depth_dataset, load_depth_png, load_image, load_image_dir, load_named_image_dir, resize_bilinear,
    resize_nearest,
};
pub use synth::{
    generate_id_scene, generate_ood_scene, generate_ood_scene_with_depth, palette_colors, render_scene,
    BackgroundStyle, Geometry, OodVariant, Palette, Pattern, Scene, SceneParams, Shape,
};

use crate::error::{Error, Result};
use crate::model::{DepthMap, Image};
use crate::rng::stream;

/// Label of an in-distribution sample.
pub const LABEL_ID: u8 = 1;
/// Label of an OOD sample.
pub const LABEL_OOD: u8 = 0;

/// Default OOD cap per evaluation set.
pub const DEFAULT_OOD_CAP: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthSample {
    pub image: Image,
    pub depth: DepthMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub image: Image,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub samples: Vec<EvalSample>,
    pub n_id: usize,
    pub n_ood: usize,
}

impl EvalSet {
    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Keeps every ID image and at most `cap` OOD images, the latter drawn
/// uniformly without replacement with a seeded stream. Selected OOD
/// images keep their original relative order.
pub fn make_eval_set(id_images: Vec<Image>, ood_images: Vec<Image>, cap: usize, seed: u64) -> Result<EvalSet> {
    if id_images.is_empty() || ood_images.is_empty() {
        return Err(Error::input("evaluation needs both ID and OOD images"));
    }
    let resolution = id_images[0].resolution();
    if id_images
        .iter()
        .chain(&ood_images)
        .any(|img| img.resolution() != resolution)
    {
        return Err(Error::input("evaluation images must share one resolution"));
    }
    let mut keep: Vec<usize> = if ood_images.len() > cap {
        index::sample(&mut stream(seed, "ood-subsample"), ood_images.len(), cap).into_vec()
    } else {
        (0..ood_images.len()).collect()
    };
    keep.sort_unstable();

    let n_id = id_images.len();
    let n_ood = keep.len();
    let mut samples: Vec<EvalSample> = id_images
        .into_iter()
        .enumerate()
        .map(|(i, image)| EvalSample {
            id: format!("id-{i:05}"),
            image,
            label: LABEL_ID,
        })
        .collect();
    let mut ood: Vec<Option<Image>> = ood_images.into_iter().map(Some).collect();
    for i in keep {
        samples.push(EvalSample {
            id: format!("ood-{i:05}"),
            image: ood[i].take().expect("indices are unique"),
            label: LABEL_OOD,
        });
    }
    Ok(EvalSet { samples, n_id, n_ood })
}

/// Sizes of the procedural benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSplit {
    pub train: usize,
    pub test_id: usize,
    pub test_ood: usize,
    pub seed: u64,
}

impl Default for SyntheticSplit {
    fn default() -> Self {
        Self {
            train: 2000,
            test_id: 300,
            test_ood: 150,
            seed: 0,
        }
    }
}

// Disjoint seed ranges per split so no test scene repeats a training scene.
const TRAIN_BASE: u64 = 0;
const TEST_BASE: u64 = 1 << 32;
const OOD_BASE: u64 = 2 << 32;

fn scene_seed(base: u64, split_seed: u64, i: usize) -> u64 {
    base + split_seed.wrapping_mul(1 << 20) + i as u64
}

pub fn synthetic_train_set(split: &SyntheticSplit, p: &SceneParams) -> Result<Vec<DepthSample>> {
    (0..split.train)
        .map(|i| {
            generate_id_scene(scene_seed(TRAIN_BASE, split.seed, i), p).map(|(image, depth)| DepthSample { image, depth })
        })
        .collect()
}

pub fn synthetic_test_set(split: &SyntheticSplit, p: &SceneParams) -> Result<Vec<DepthSample>> {
    (0..split.test_id)
        .map(|i| {
            generate_id_scene(scene_seed(TEST_BASE, split.seed, i), p).map(|(image, depth)| DepthSample { image, depth })
        })
        .collect()
}

pub fn synthetic_ood_set(
    split: &SyntheticSplit,
    variant: OodVariant,
    p: &SceneParams,
) -> Result<Vec<(Image, Option<DepthMap>)>> {
    (0..split.test_ood)
        .map(|i| generate_ood_scene_with_depth(scene_seed(OOD_BASE, split.seed, i), variant, p))
        .collect()
}
