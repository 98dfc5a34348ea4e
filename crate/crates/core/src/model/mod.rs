//! Reference encoder/decoder depth network and the frozen-model interface
//! the OOD detector builds on.

mod blueprint;
mod checkpoint;
mod digest;
pub(crate) mod network;
mod types;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use blueprint::{Activation, BlockSpec, DecoderBlueprint, HeadSpec};
pub use checkpoint::{metadata_path, read_checkpoint, write_checkpoint, Metadata};
pub(crate) use checkpoint::load_into as load_params;
pub use digest::WeightDigest;
pub use network::{Decoder, DecoderGrad, Encoder};
pub use types::{DepthMap, FeaturePyramid, Image};

use crate::error::{Error, Result};
use crate::nn::ops::{sigmoid, softplus};
use crate::nn::{Conv2d, ConvGrad, Parameters, Tensor};
use network::DropoutCtx;

/// Smallest scale the heteroscedastic head can emit.
pub const MIN_SCALE: f32 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Heteroscedastic,
    Dropout,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Heteroscedastic => "heteroscedastic",
            Variant::Dropout => "dropout",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "heteroscedastic" | "log" => Ok(Variant::Heteroscedastic),
            "dropout" | "drop" => Ok(Variant::Dropout),
            other => Err(Error::usage(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub d_max: f32,
    pub variant: Variant,
    pub skips: bool,
    /// Drop probability after each decoder block (used by the dropout variant).
    pub dropout: f32,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            d_max: 10.0,
            variant: Variant::Plain,
            skips: true,
            dropout: 0.2,
            encoder_channels: vec![16, 32, 64, 128],
            decoder_channels: vec![64, 32, 16, 8],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Depth-decoder blueprint implied by this configuration.
    pub fn blueprint(&self) -> DecoderBlueprint {
        let m = self.encoder_channels.len();
        let mut prev = self.encoder_channels[m - 1];
        let blocks = self
            .decoder_channels
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let level = m as isize - 1 - i as isize;
                let skip = (self.skips && level >= 1).then_some(level as usize);
                let in_channels = prev + skip.map_or(0, |l| self.encoder_channels[l - 1]);
                prev = out;
                BlockSpec {
                    upsample: 2,
                    kernel: 3,
                    in_channels,
                    out_channels: out,
                    skip,
                    activation: Activation::Relu,
                }
            })
            .collect();
        DecoderBlueprint {
            pyramid_channels: self.encoder_channels.clone(),
            blocks,
            head: HeadSpec {
                kernel: 3,
                in_channels: prev,
                out_channels: 1,
                activation: Some(Activation::Sigmoid),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.encoder_channels.len();
        if m == 0 {
            return Err(Error::Construction("encoder needs at least one level".into()));
        }
        if self.decoder_channels.len() != m {
            return Err(Error::Construction(format!(
                "decoder needs {m} blocks to undo {m} encoder downsamplings"
            )));
        }
        let factor = 1usize << m;
        if self.height == 0 || self.width == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::Construction(format!(
                "resolution {}x{} must be a positive multiple of {factor}",
                self.height, self.width
            )));
        }
        if !(self.d_max.is_finite() && self.d_max > 0.0) {
            return Err(Error::Construction("d_max must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Construction("dropout probability must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Expected `(channels, height, width)` of each pyramid level.
    pub fn pyramid_shapes(&self) -> Vec<(usize, usize, usize)> {
        self.encoder_channels
            .iter()
            .enumerate()
            .map(|(j, &c)| (c, self.height >> (j + 1), self.width >> (j + 1)))
            .collect()
    }
}

/// Output of the depth decoder: depth plus, for the heteroscedastic
/// variant, a per-pixel Laplace scale.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthPrediction {
    pub depth: DepthMap,
    pub scale: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthModel {
    config: ModelConfig,
    pub(crate) encoder: Encoder,
    pub(crate) decoder: Decoder,
    pub(crate) scale_head: Option<Conv2d>,
}

/// Gradient buffers mirroring [`DepthModel`].
#[derive(Clone, Debug)]
pub struct DepthModelGrad {
    pub encoder: Vec<ConvGrad>,
    pub decoder: DecoderGrad,
    pub scale_head: Option<ConvGrad>,
}

impl DepthModel {
    /// Freshly initialized model; parameters are a pure function of `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let blueprint = config.blueprint();
        blueprint.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Encoder::new(3, &config.encoder_channels, &mut rng);
        let trunk = blueprint.head.in_channels;
        let decoder = Decoder::new(blueprint, &mut rng);
        let scale_head =
            (config.variant == Variant::Heteroscedastic).then(|| Conv2d::new(trunk, 1, 1, &mut rng));
        Ok(Self {
            config,
            encoder,
            decoder,
            scale_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn d_max(&self) -> f32 {
        self.config.d_max
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.config.height, self.config.width)
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn depth_decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn blueprint(&self) -> DecoderBlueprint {
        self.decoder.blueprint.clone()
    }

    pub fn encoder_digest(&self) -> WeightDigest {
        WeightDigest::of(&self.encoder)
    }

    /// Digest of the depth decoder including the scale head, if any.
    pub fn decoder_digest(&self) -> WeightDigest {
        let mut tensors = self.decoder.tensors();
        if let Some(h) = &self.scale_head {
            tensors.extend(h.tensors());
        }
        WeightDigest::from_tensors(&tensors)
    }

    pub fn zero_grad(&self) -> DepthModelGrad {
        DepthModelGrad {
            encoder: self.encoder.zero_grad(),
            decoder: self.decoder.zero_grad(),
            scale_head: self.scale_head.as_ref().map(Conv2d::zero_grad),
        }
    }

    pub(crate) fn check_image(&self, x: &Image) -> Result<()> {
        if x.resolution() != self.resolution() {
            return Err(Error::input(format!(
                "image is {}x{}, model expects {}x{}",
                x.height(),
                x.width(),
                self.config.height,
                self.config.width
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Image) -> Result<FeaturePyramid> {
        self.check_image(x)?;
        Ok(self.encoder.forward(x.tensor()))
    }

    pub fn decode_depth(&self, z: &FeaturePyramid) -> Result<DepthPrediction> {
        if z.shapes() != self.config.pyramid_shapes() {
            return Err(Error::input(format!(
                "pyramid shapes {:?} do not match model {:?}",
                z.shapes(),
                self.config.pyramid_shapes()
            )));
        }
        let trace = self.decoder.forward_trace::<ChaCha8Rng>(z, None);
        Ok(self.finish(&trace.head_out, &trace.trunk))
    }

    pub fn predict(&self, x: &Image) -> Result<DepthPrediction> {
        let z = self.encode(x)?;
        self.decode_depth(&z)
    }

    /// One forward pass with decoder dropout active at the configured rate.
    pub fn predict_stochastic<R: Rng>(&self, x: &Image, rng: &mut R) -> Result<DepthMap> {
        let z = self.encode(x)?;
        let trace = self.decoder.forward_trace(
            &z,
            Some(DropoutCtx {
                p: self.config.dropout,
                rng,
            }),
        );
        Ok(self.finish(&trace.head_out, &trace.trunk).depth)
    }

    pub(crate) fn depth_from_logits(&self, logits: &Tensor) -> DepthMap {
        let d_max = self.config.d_max;
        let floor = d_max * 1e-6;
        DepthMap::new(logits.map(|a| (d_max * sigmoid(a)).max(floor)))
            .expect("sigmoid output is positive")
    }

    pub(crate) fn scale_from_logits(logits: &Tensor) -> Tensor {
        logits.map(|a| softplus(a) + MIN_SCALE)
    }

    fn finish(&self, head_out: &Tensor, trunk: &Tensor) -> DepthPrediction {
        let depth = self.depth_from_logits(head_out);
        let scale = self
            .scale_head
            .as_ref()
            .map(|h| Self::scale_from_logits(&h.forward(trunk).0));
        DepthPrediction { depth, scale }
    }

    pub fn metadata(&self) -> Metadata {
        let c = &self.config;
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        Metadata::from_pairs([
            ("architecture", "toy-unet".to_string()),
            ("role", "depth_model".to_string()),
            ("height", c.height.to_string()),
            ("width", c.width.to_string()),
            ("d_max", c.d_max.to_string()),
            ("variant", c.variant.as_str().to_string()),
            ("skips", c.skips.to_string()),
            ("dropout", c.dropout.to_string()),
            ("seed", c.seed.to_string()),
            ("encoder_channels", join(&c.encoder_channels)),
            ("decoder_channels", join(&c.decoder_channels)),
        ])
    }

    pub fn config_from_metadata(meta: &Metadata) -> Result<ModelConfig> {
        let channels = |key: &str| -> Result<Vec<usize>> {
            meta.get(key)?
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| Error::config(key, "expected integer list")))
                .collect()
        };
        Ok(ModelConfig {
            height: meta.parse("height")?,
            width: meta.parse("width")?,
            d_max: meta.parse("d_max")?,
            variant: meta.get("variant")?.parse()?,
            skips: meta.parse("skips")?,
            dropout: meta.parse("dropout")?,
            encoder_channels: channels("encoder_channels")?,
            decoder_channels: channels("decoder_channels")?,
            seed: meta.parse("seed")?,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_checkpoint(path, &self.metadata(), self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (meta, blob) = read_checkpoint(path)?;
        if meta.get("role")? != "depth_model" {
            return Err(Error::file(path, "checkpoint is not a depth model"));
        }
        let mut model = Self::new(Self::config_from_metadata(&meta)?)?;
        load_params(&mut model, &blob).map_err(|m| Error::file(path, m))?;
        Ok(model)
    }
}

impl Parameters for DepthModel {
    fn tensors(&self) -> Vec<&[f32]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        if let Some(h) = &self.scale_head {
            t.extend(h.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        if let Some(h) = &mut self.scale_head {
            t.extend(h.tensors_mut());
        }
        t
    }
}

impl Parameters for DepthModelGrad {
    fn tensors(&self) -> Vec<&[f32]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        if let Some(h) = &self.scale_head {
            t.extend(h.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        if let Some(h) = &mut self.scale_head {
            t.extend(h.tensors_mut());
        }
        t
    }
}

/// Anything that maps an image to a feature pyramid: a trained depth
/// model, or the stand-alone encoder of the autoencoder ablation.
pub trait FeatureEncoder {
    fn encode_image(&self, x: &Image) -> Result<FeaturePyramid>;
}

impl FeatureEncoder for DepthModel {
    fn encode_image(&self, x: &Image) -> Result<FeaturePyramid> {
        self.encode(x)
    }
}
