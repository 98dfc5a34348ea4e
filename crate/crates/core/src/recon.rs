//! Image decoder that reconstructs the input from frozen depth features.
//!
//! The decoder copies the depth decoder's structure (blocks and skip
//! wiring) and swaps the head: three output channels and no squashing
//! activation, so reconstructions are unbounded.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    read_checkpoint, write_checkpoint, DecoderBlueprint, DepthModel, Encoder, FeatureEncoder, FeaturePyramid,
    Image, Metadata, WeightDigest,
};
use crate::model::{Decoder, ModelConfig};
use crate::nn::{Parameters, Tensor};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDecoder {
    pub(crate) net: Decoder,
    pub(crate) seed: u64,
}

/// Depth-decoder blueprint with the head rewritten for RGB output.
pub fn image_blueprint(bp: &DecoderBlueprint) -> DecoderBlueprint {
    let mut out = bp.clone();
    out.head.out_channels = IMAGE_CHANNELS;
    out.head.activation = None;
    out
}

/// Fresh image decoder built from a depth-decoder blueprint. Weights are
/// drawn from `seed` and share nothing with the depth decoder.
pub fn build_image_decoder(bp: &DecoderBlueprint, seed: u64) -> Result<ImageDecoder> {
    bp.validate()?;
    let blueprint = image_blueprint(bp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ImageDecoder {
        net: Decoder::new(blueprint, &mut rng),
        seed,
    })
}

impl ImageDecoder {
    pub fn blueprint(&self) -> DecoderBlueprint {
        self.net.blueprint().clone()
    }

    pub fn digest(&self) -> WeightDigest {
        WeightDigest::of(&self.net)
    }

    fn check_pyramid(&self, z: &FeaturePyramid) -> Result<()> {
        let bp = self.net.blueprint();
        let channels: Vec<usize> = z.levels().iter().map(|l| l.channels).collect();
        if channels != bp.pyramid_channels {
            return Err(Error::input(format!(
                "pyramid channels {channels:?} do not match decoder {:?}",
                bp.pyramid_channels
            )));
        }
        // Every level must sit at half the resolution of the one above it.
        let (_, h, w) = z.level(1).shape();
        for (j, l) in z.levels().iter().enumerate() {
            if (l.height << j, l.width << j) != (h, w) {
                return Err(Error::input(format!("pyramid level {} has inconsistent size", j + 1)));
            }
        }
        Ok(())
    }

    /// RGB reconstruction `(3, h, w)`; values are not clamped.
    pub fn reconstruct(&self, z: &FeaturePyramid) -> Result<Tensor> {
        self.check_pyramid(z)?;
        Ok(self.net.forward(z))
    }

    pub fn metadata(&self) -> Metadata {
        let bp = self.net.blueprint();
        let join = |v: &mut dyn Iterator<Item = usize>| v.map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        let skips = bp
            .blocks
            .iter()
            .map(|b| b.skip.map_or("-".to_string(), |s| s.to_string()))
            .collect::<Vec<_>>()
            .join(",");
        Metadata::from_pairs([
            ("architecture", "toy-unet".to_string()),
            ("role", "image_decoder".to_string()),
            ("seed", self.seed.to_string()),
            ("pyramid_channels", join(&mut bp.pyramid_channels.iter().copied())),
            ("decoder_channels", join(&mut bp.blocks.iter().map(|b| b.out_channels))),
            ("skips", skips),
        ])
    }

    /// Loads weights for a decoder matching `bp` (the depth-decoder blueprint).
    pub fn load(path: &Path, bp: &DecoderBlueprint) -> Result<Self> {
        let (meta, blob) = read_checkpoint(path)?;
        if meta.get("role")? != "image_decoder" {
            return Err(Error::file(path, "checkpoint is not an image decoder"));
        }
        let mut dec = build_image_decoder(bp, meta.parse("seed")?)?;
        if meta.to_text() != dec.metadata().to_text() {
            return Err(Error::file(path, "image decoder architecture does not match blueprint"));
        }
        crate::model::load_params(&mut dec.net, &blob).map_err(|m| Error::file(path, m))?;
        Ok(dec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.metadata(), &self.net)
    }
}

impl Parameters for ImageDecoder {
    fn tensors(&self) -> Vec<&[f32]> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.net.tensors_mut()
    }
}

/// Encoder and image decoder trained jointly from scratch purely for
/// reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub(crate) encoder: Encoder,
    pub(crate) decoder: ImageDecoder,
    pub(crate) resolution: (usize, usize),
}

impl Autoencoder {
    /// Encoder initialized as a depth model's encoder would be for
    /// `config`; decoder built from the same blueprint.
    pub fn new(config: &ModelConfig, decoder_seed: u64) -> Result<Self> {
        let template = DepthModel::new(config.clone())?;
        let decoder = build_image_decoder(&template.blueprint(), decoder_seed)?;
        Ok(Self {
            encoder: template.encoder().clone(),
            decoder,
            resolution: template.resolution(),
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &ImageDecoder {
        &self.decoder
    }

    pub fn encoder_digest(&self) -> WeightDigest {
        WeightDigest::of(&self.encoder)
    }

    pub fn save(&self, encoder_path: &Path, decoder_path: &Path) -> Result<()> {
        let mut meta = Metadata::default();
        meta.insert("architecture", "toy-unet");
        meta.insert("role", "ae_encoder");
        meta.insert("height", self.resolution.0.to_string());
        meta.insert("width", self.resolution.1.to_string());
        write_checkpoint(encoder_path, &meta, &self.encoder)?;
        self.decoder.save(decoder_path)
    }

    pub fn load(encoder_path: &Path, decoder_path: &Path, config: &ModelConfig) -> Result<Self> {
        let (meta, blob) = read_checkpoint(encoder_path)?;
        if meta.get("role")? != "ae_encoder" {
            return Err(Error::file(encoder_path, "checkpoint is not an autoencoder encoder"));
        }
        let mut config = config.clone();
        config.height = meta.parse("height")?;
        config.width = meta.parse("width")?;
        let template = DepthModel::new(config)?;
        let mut encoder = template.encoder().clone();
        crate::model::load_params(&mut encoder, &blob).map_err(|m| Error::file(encoder_path, m))?;
        let decoder = ImageDecoder::load(decoder_path, &template.blueprint())?;
        Ok(Self {
            encoder,
            decoder,
            resolution: template.resolution(),
        })
    }
}

impl FeatureEncoder for Autoencoder {
    fn encode_image(&self, x: &Image) -> Result<FeaturePyramid> {
        if x.resolution() != self.resolution {
            return Err(Error::input(format!(
                "image is {}x{}, autoencoder expects {}x{}",
                x.height(),
                x.width(),
                self.resolution.0,
                self.resolution.1
            )));
        }
        Ok(self.encoder.forward(x.tensor()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, ModelConfig};

    fn small_config() -> ModelConfig {
        ModelConfig {
            height: 32,
            width: 32,
            encoder_channels: vec![4, 6, 8, 10],
            decoder_channels: vec![8, 6, 4, 4],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn head_is_rgb_without_activation() {
        let model = DepthModel::new(ModelConfig::default()).unwrap();
        let bp = model.blueprint();
        let dec = build_image_decoder(&bp, 9).unwrap();
        let ibp = dec.blueprint();
        assert_eq!(ibp.head.out_channels, 3);
        assert_eq!(ibp.head.activation, None);
        assert_eq!(ibp.blocks, bp.blocks);
        assert_eq!(bp.head.activation, Some(Activation::Sigmoid));
    }

    #[test]
    fn seeded_initialization() {
        let bp = DepthModel::new(small_config()).unwrap().blueprint();
        let a = build_image_decoder(&bp, 5).unwrap();
        let b = build_image_decoder(&bp, 5).unwrap();
        let c = build_image_decoder(&bp, 6).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn fresh_weights_differ_from_depth_decoder() {
        let cfg = small_config();
        let model = DepthModel::new(cfg.clone()).unwrap();
        // Even with the model's own seed the head shapes differ, so compare blocks too.
        let dec = build_image_decoder(&model.blueprint(), cfg.seed).unwrap();
        assert_ne!(dec.digest(), model.decoder_digest());
        assert_ne!(
            WeightDigest::from_tensors(&dec.net.blocks[0].tensors()),
            WeightDigest::from_tensors(&model.depth_decoder().blocks[0].tensors())
        );
    }

    #[test]
    fn rejects_inconsistent_blueprint() {
        let mut bp = DepthModel::new(small_config()).unwrap().blueprint();
        bp.blocks[2].skip = Some(7);
        assert!(matches!(build_image_decoder(&bp, 0), Err(Error::Construction(_))));
    }

    #[test]
    fn reconstruction_shape_and_determinism() {
        let model = DepthModel::new(small_config()).unwrap();
        let dec = build_image_decoder(&model.blueprint(), 1).unwrap();
        let x = Image::from_fn(32, 32, |y, x| [y as f32 / 32.0, x as f32 / 32.0, 0.5]);
        let z = model.encode(&x).unwrap();
        let r1 = dec.reconstruct(&z).unwrap();
        let r2 = dec.reconstruct(&z).unwrap();
        assert_eq!(r1.shape(), (3, 32, 32));
        assert_eq!(r1, r2);
    }

    #[test]
    fn rejects_foreign_pyramid() {
        let model = DepthModel::new(small_config()).unwrap();
        let dec = build_image_decoder(&model.blueprint(), 1).unwrap();
        let other = DepthModel::new(ModelConfig::default()).unwrap();
        let z = other.encode(&Image::from_fn(64, 64, |_, _| [0.2; 3])).unwrap();
        assert!(matches!(dec.reconstruct(&z), Err(Error::Input(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = DepthModel::new(small_config()).unwrap();
        let dec = build_image_decoder(&model.blueprint(), 4).unwrap();
        let path = dir.path().join("dec.bin");
        dec.save(&path).unwrap();
        let meta = std::fs::read_to_string(path.with_extension("meta")).unwrap();
        assert!(meta.contains("role=image_decoder"));
        let back = ImageDecoder::load(&path, &model.blueprint()).unwrap();
        assert_eq!(back, dec);
    }
}
