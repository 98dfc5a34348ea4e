use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::{Parameters, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// 3×3 convolution with zero padding of one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Row-major (out, in, 3, 3).
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Unfolded input kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Vec<f32>,
    in_shape: (usize, usize, usize),
}

#[inline]
fn out_extent(n: usize, stride: usize) -> usize {
    (n + 2 - KERNEL) / stride + 1
}

impl Conv2d {
    /// Uniform initialization with bound `sqrt(6 / fan_in)`; biases start at zero.
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (in_channels * TAPS) as f32;
        let bound = (6.0 / fan_in).sqrt();
        let weight = (0..out_channels * in_channels * TAPS)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            in_channels,
            out_channels,
            stride,
            weight,
            bias: vec![0.0; out_channels],
        }
    }

    pub fn zero_grad(&self) -> ConvGrad {
        ConvGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn output_shape(&self, height: usize, width: usize) -> (usize, usize, usize) {
        (
            self.out_channels,
            out_extent(height, self.stride),
            out_extent(width, self.stride),
        )
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (_, oh, ow) = self.output_shape(x.height, x.width);
        let n = oh * ow;
        let k = self.in_channels * TAPS;
        let cols = im2col(x, self.stride, oh, ow);

        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for (o, chunk) in out.data.chunks_mut(n).enumerate() {
            chunk.fill(self.bias[o]);
        }
        let w = ArrayView2::from_shape((self.out_channels, k), &self.weight).unwrap();
        let c = ArrayView2::from_shape((k, n), &cols).unwrap();
        let mut y = ArrayViewMut2::from_shape((self.out_channels, n), &mut out.data).unwrap();
        general_mat_mul(1.0, &w, &c, 1.0, &mut y);
        (
            out,
            ConvCache {
                cols,
                in_shape: x.shape(),
            },
        )
    }

    /// Accumulates parameter gradients into `grad` and, when `want_input` is
    /// set, returns the gradient with respect to the layer input.
    pub fn backward(
        &self,
        cache: &ConvCache,
        grad_out: &Tensor,
        grad: &mut ConvGrad,
        want_input: bool,
    ) -> Option<Tensor> {
        let n = grad_out.plane();
        let k = self.in_channels * TAPS;
        let g = ArrayView2::from_shape((self.out_channels, n), &grad_out.data).unwrap();
        let c = ArrayView2::from_shape((k, n), &cache.cols).unwrap();

        let mut gw = ArrayViewMut2::from_shape((self.out_channels, k), &mut grad.weight).unwrap();
        general_mat_mul(1.0, &g, &c.t(), 1.0, &mut gw);
        for (o, row) in grad_out.data.chunks(n).enumerate() {
            grad.bias[o] += row.iter().sum::<f32>();
        }

        if !want_input {
            return None;
        }
        let w = ArrayView2::from_shape((self.out_channels, k), &self.weight).unwrap();
        let mut dcols = vec![0.0f32; k * n];
        {
            let mut dc = ArrayViewMut2::from_shape((k, n), &mut dcols).unwrap();
            general_mat_mul(1.0, &w.t(), &g, 0.0, &mut dc);
        }
        let (ic, ih, iw) = cache.in_shape;
        Some(col2im(
            &dcols,
            (ic, ih, iw),
            self.stride,
            grad_out.height,
            grad_out.width,
        ))
    }
}

impl Parameters for Conv2d {
    fn tensors(&self) -> Vec<&[f32]> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl Parameters for ConvGrad {
    fn tensors(&self) -> Vec<&[f32]> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Output columns `ox` whose input column `ox * stride + kx - 1` lies inside `[0, w)`.
#[inline]
fn valid_cols(kx: usize, stride: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = usize::from(kx == 0);
    let hi = if w < kx { 0 } else { ((w - kx) / stride + 1).min(ow) };
    (lo, hi.max(lo))
}

/// Rows are indexed by (channel, ky, kx), columns by output pixel.
fn im2col(x: &Tensor, stride: usize, oh: usize, ow: usize) -> Vec<f32> {
    let n = oh * ow;
    let w = x.width;
    let mut cols = vec![0.0f32; x.channels * TAPS * n];
    for c in 0..x.channels {
        let src = x.channel(c);
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * n;
                let dst = &mut cols[row..row + n];
                let (lo, hi) = valid_cols(kx, stride, w, ow);
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy == 0 || iy > x.height {
                        continue;
                    }
                    let src_row = &src[(iy - 1) * w..iy * w];
                    let dst_row = &mut dst[oy * ow + lo..oy * ow + hi];
                    let start = lo * stride + kx - 1;
                    if stride == 1 {
                        dst_row.copy_from_slice(&src_row[start..start + dst_row.len()]);
                    } else {
                        for (d, s) in dst_row.iter_mut().zip(src_row[start..].iter().step_by(stride)) {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    dcols: &[f32],
    (channels, height, width): (usize, usize, usize),
    stride: usize,
    oh: usize,
    ow: usize,
) -> Tensor {
    let n = oh * ow;
    let mut out = Tensor::zeros(channels, height, width);
    let plane = height * width;
    for c in 0..channels {
        let dst = &mut out.data[c * plane..(c + 1) * plane];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * n;
                let src = &dcols[row..row + n];
                let (lo, hi) = valid_cols(kx, stride, width, ow);
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy == 0 || iy > height {
                        continue;
                    }
                    let dst_row = &mut dst[(iy - 1) * width..iy * width];
                    let src_row = &src[oy * ow + lo..oy * ow + hi];
                    let start = lo * stride + kx - 1;
                    for (d, s) in dst_row[start..].iter_mut().step_by(stride).zip(src_row) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}
