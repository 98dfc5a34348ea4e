/// Dense channel-major (C, H, W) single-precision tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor data length");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mirror every channel left to right.
    pub fn hflip(&self) -> Tensor {
        let mut out = Tensor::zeros(self.channels, self.height, self.width);
        let w = self.width;
        for (src, dst) in self.data.chunks(w).zip(out.data.chunks_mut(w)) {
            for (x, v) in src.iter().enumerate() {
                dst[w - 1 - x] = *v;
            }
        }
        out
    }
}

/// Stack tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let (h, w) = (parts[0].height, parts[0].width);
    let channels = parts.iter().map(|t| t.channels).sum();
    let mut data = Vec::with_capacity(channels * h * w);
    for t in parts {
        assert_eq!((t.height, t.width), (h, w), "concat spatial mismatch");
        data.extend_from_slice(&t.data);
    }
    Tensor::from_vec(channels, h, w, data)
}

/// Split a channel-stacked tensor back into pieces with the given channel counts.
pub fn split_channels(t: &Tensor, counts: &[usize]) -> Vec<Tensor> {
    let p = t.plane();
    let mut offset = 0;
    counts
        .iter()
        .map(|&c| {
            let part = t.data[offset * p..(offset + c) * p].to_vec();
            offset += c;
            Tensor::from_vec(c, t.height, t.width, part)
        })
        .collect()
}
