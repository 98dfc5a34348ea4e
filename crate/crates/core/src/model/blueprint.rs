use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::KERNEL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// One upsampling stage of a decoder: upsample, optionally concatenate a
/// skip level, convolve, activate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub upsample: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Pyramid level (1-based) concatenated after upsampling.
    pub skip: Option<usize>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Option<Activation>,
}

/// Structural description of a decoder that consumes a feature pyramid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderBlueprint {
    /// Channel count of each pyramid level, finest first.
    pub pyramid_channels: Vec<usize>,
    pub blocks: Vec<BlockSpec>,
    pub head: HeadSpec,
}

impl DecoderBlueprint {
    pub fn skip_sources(&self) -> Vec<usize> {
        self.blocks.iter().filter_map(|b| b.skip).collect()
    }

    /// Checks channel bookkeeping, skip wiring and that the upsampling chain
    /// returns the coarsest level to input resolution.
    pub fn validate(&self) -> Result<()> {
        let m = self.pyramid_channels.len();
        if m == 0 {
            return Err(Error::Construction("blueprint has no pyramid levels".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Construction("blueprint has no blocks".into()));
        }
        // Level j sits at scale 2^j relative to the input.
        let mut log_scale = m as i64;
        let mut channels = self.pyramid_channels[m - 1];
        for (i, block) in self.blocks.iter().enumerate() {
            if block.kernel != KERNEL {
                return Err(Error::Construction(format!(
                    "block {i}: only {KERNEL}x{KERNEL} kernels are supported"
                )));
            }
            match block.upsample {
                1 => {}
                2 => log_scale -= 1,
                f => {
                    return Err(Error::Construction(format!(
                        "block {i}: unsupported upsample factor {f}"
                    )))
                }
            }
            let mut expected_in = channels;
            if let Some(level) = block.skip {
                if level == 0 || level > m {
                    return Err(Error::Construction(format!(
                        "block {i}: skip level {level} does not exist (pyramid has {m})"
                    )));
                }
                if level as i64 != log_scale {
                    return Err(Error::Construction(format!(
                        "block {i}: skip level {level} does not match spatial scale 1/2^{log_scale}"
                    )));
                }
                expected_in += self.pyramid_channels[level - 1];
            }
            if block.in_channels != expected_in {
                return Err(Error::Construction(format!(
                    "block {i}: declares {} input channels, chain provides {expected_in}",
                    block.in_channels
                )));
            }
            if block.out_channels == 0 {
                return Err(Error::Construction(format!("block {i}: zero output channels")));
            }
            channels = block.out_channels;
        }
        if log_scale != 0 {
            return Err(Error::Construction(format!(
                "upsampling chain ends at scale 1/2^{log_scale}, not input resolution"
            )));
        }
        if self.head.kernel != KERNEL {
            return Err(Error::Construction("head kernel must be 3x3".into()));
        }
        if self.head.in_channels != channels {
            return Err(Error::Construction(format!(
                "head declares {} input channels, last block provides {channels}",
                self.head.in_channels
            )));
        }
        if self.head.out_channels == 0 {
            return Err(Error::Construction("head has zero output channels".into()));
        }
        Ok(())
    }
}
