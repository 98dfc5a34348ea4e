//! Encoder and blueprint-driven decoder with cached forward traces for
//! backpropagation.

use rand::Rng;

use super::blueprint::DecoderBlueprint;
use super::types::FeaturePyramid;
use crate::nn::ops::{apply_mask, dropout_mask, relu_backward_inplace, relu_inplace, upsample2, upsample2_backward};
use crate::nn::{concat_channels, split_channels, Conv2d, ConvCache, ConvGrad, Parameters, Tensor};

/// Stack of stride-2 3×3 convolutions, each followed by ReLU. Every
/// stage output is one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub(crate) convs: Vec<Conv2d>,
}

pub struct EncoderTrace {
    caches: Vec<ConvCache>,
    pub pyramid: FeaturePyramid,
}

impl Encoder {
    pub fn new<R: Rng>(in_channels: usize, channels: &[usize], rng: &mut R) -> Self {
        let mut prev = in_channels;
        let convs = channels
            .iter()
            .map(|&c| {
                let conv = Conv2d::new(prev, c, 2, rng);
                prev = c;
                conv
            })
            .collect();
        Self { convs }
    }

    pub fn channels(&self) -> Vec<usize> {
        self.convs.iter().map(|c| c.out_channels).collect()
    }

    pub fn zero_grad(&self) -> Vec<ConvGrad> {
        self.convs.iter().map(Conv2d::zero_grad).collect()
    }

    pub fn forward(&self, x: &Tensor) -> FeaturePyramid {
        self.forward_trace(x).pyramid
    }

    pub fn forward_trace(&self, x: &Tensor) -> EncoderTrace {
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut levels: Vec<Tensor> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let input = levels.last().unwrap_or(x);
            let (mut y, cache) = conv.forward(input);
            relu_inplace(&mut y);
            caches.push(cache);
            levels.push(y);
        }
        EncoderTrace {
            caches,
            pyramid: FeaturePyramid::from_levels_unchecked(levels),
        }
    }

    /// `level_grads[j]` is the loss gradient with respect to level `j + 1`.
    pub fn backward(&self, trace: &EncoderTrace, mut level_grads: Vec<Tensor>, grads: &mut [ConvGrad]) {
        let levels = trace.pyramid.levels();
        for i in (0..self.convs.len()).rev() {
            let mut g = std::mem::replace(&mut level_grads[i], Tensor::zeros(0, 0, 0));
            relu_backward_inplace(&mut g, &levels[i]);
            let gin = self.convs[i].backward(&trace.caches[i], &g, &mut grads[i], i > 0);
            if let Some(gin) = gin {
                level_grads[i - 1].add_assign(&gin);
            }
        }
    }
}

impl Parameters for Encoder {
    fn tensors(&self) -> Vec<&[f32]> {
        self.convs.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.convs.tensors_mut()
    }
}

/// Stochastic regularization applied after every decoder block.
pub struct DropoutCtx<'a, R: Rng> {
    pub p: f32,
    pub rng: &'a mut R,
}

/// Decoder instantiated from a [`DecoderBlueprint`]. The head activation is
/// applied by the owner so the same network serves depth and image heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub(crate) blueprint: DecoderBlueprint,
    pub(crate) blocks: Vec<Conv2d>,
    pub(crate) head: Conv2d,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderGrad {
    pub blocks: Vec<ConvGrad>,
    pub head: ConvGrad,
}

pub struct DecoderTrace {
    block_caches: Vec<ConvCache>,
    /// Rectified block outputs before dropout.
    block_outputs: Vec<Tensor>,
    masks: Vec<Option<Vec<f32>>>,
    head_cache: ConvCache,
    /// Last block output after dropout; input to the head(s).
    pub trunk: Tensor,
    /// Head output before any activation.
    pub head_out: Tensor,
}

impl Decoder {
    /// Caller must have validated the blueprint.
    pub fn new<R: Rng>(blueprint: DecoderBlueprint, rng: &mut R) -> Self {
        let blocks = blueprint
            .blocks
            .iter()
            .map(|b| Conv2d::new(b.in_channels, b.out_channels, 1, rng))
            .collect();
        let head = Conv2d::new(blueprint.head.in_channels, blueprint.head.out_channels, 1, rng);
        Self {
            blueprint,
            blocks,
            head,
        }
    }

    pub fn blueprint(&self) -> &DecoderBlueprint {
        &self.blueprint
    }

    pub fn zero_grad(&self) -> DecoderGrad {
        DecoderGrad {
            blocks: self.blocks.iter().map(Conv2d::zero_grad).collect(),
            head: self.head.zero_grad(),
        }
    }

    pub fn forward(&self, z: &FeaturePyramid) -> Tensor {
        self.forward_trace::<rand_chacha::ChaCha8Rng>(z, None).head_out
    }

    pub fn forward_trace<R: Rng>(&self, z: &FeaturePyramid, mut dropout: Option<DropoutCtx<'_, R>>) -> DecoderTrace {
        let n = self.blocks.len();
        let mut block_caches = Vec::with_capacity(n);
        let mut block_outputs = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut h = z.level(z.depth()).clone();
        for (spec, conv) in self.blueprint.blocks.iter().zip(&self.blocks) {
            let up = if spec.upsample == 2 { upsample2(&h) } else { h };
            let input = match spec.skip {
                Some(level) => concat_channels(&[&up, z.level(level)]),
                None => up,
            };
            let (mut y, cache) = conv.forward(&input);
            relu_inplace(&mut y);
            block_caches.push(cache);
            h = y.clone();
            block_outputs.push(y);
            let mask = match dropout.as_mut() {
                Some(ctx) if ctx.p > 0.0 => {
                    let m = dropout_mask(h.data.len(), ctx.p, ctx.rng);
                    apply_mask(&mut h, &m);
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
        }
        let (head_out, head_cache) = self.head.forward(&h);
        DecoderTrace {
            block_caches,
            block_outputs,
            masks,
            head_cache,
            trunk: h,
            head_out,
        }
    }

    /// Backpropagates `grad_head` (gradient at the head pre-activation) plus
    /// an optional extra gradient arriving at the trunk from parallel heads.
    /// Returns per-level pyramid gradients when `want_pyramid` is set.
    pub fn backward(
        &self,
        trace: &DecoderTrace,
        z: &FeaturePyramid,
        grad_head: &Tensor,
        grad_trunk: Option<&Tensor>,
        grads: &mut DecoderGrad,
        want_pyramid: bool,
    ) -> Option<Vec<Tensor>> {
        let mut g = self
            .head
            .backward(&trace.head_cache, grad_head, &mut grads.head, true)
            .expect("head input gradient");
        if let Some(extra) = grad_trunk {
            g.add_assign(extra);
        }
        let mut level_grads: Option<Vec<Tensor>> = want_pyramid.then(|| {
            z.levels()
                .iter()
                .map(|l| Tensor::zeros(l.channels, l.height, l.width))
                .collect()
        });
        for i in (0..self.blocks.len()).rev() {
            if let Some(mask) = &trace.masks[i] {
                apply_mask(&mut g, mask);
            }
            relu_backward_inplace(&mut g, &trace.block_outputs[i]);
            // The first block reads only pyramid features.
            let need_input = want_pyramid || i > 0;
            let gin = self.blocks[i].backward(&trace.block_caches[i], &g, &mut grads.blocks[i], need_input);
            let Some(gin) = gin else { break };
            let spec = &self.blueprint.blocks[i];
            let up_channels = match spec.skip {
                Some(level) => spec.in_channels - z.level(level).channels,
                None => spec.in_channels,
            };
            let mut parts = match spec.skip {
                Some(level) => split_channels(&gin, &[up_channels, z.level(level).channels]),
                None => vec![gin],
            };
            if let (Some(level), Some(lg)) = (spec.skip, level_grads.as_mut()) {
                lg[level - 1].add_assign(&parts[1]);
            }
            let gu = parts.swap_remove(0);
            let gprev = if spec.upsample == 2 { upsample2_backward(&gu) } else { gu };
            if i == 0 {
                if let Some(lg) = level_grads.as_mut() {
                    let m = z.depth();
                    lg[m - 1].add_assign(&gprev);
                }
            } else {
                g = gprev;
            }
        }
        level_grads
    }
}

impl Parameters for Decoder {
    fn tensors(&self) -> Vec<&[f32]> {
        let mut t = self.blocks.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut t = self.blocks.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

impl Parameters for DecoderGrad {
    fn tensors(&self) -> Vec<&[f32]> {
        let mut t = self.blocks.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut t = self.blocks.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}
