use crate::error::{Error, Result};
use crate::nn::Tensor;

/// RGB image with intensities in `[0, 1]`, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    tensor: Tensor,
}

impl Image {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.channels != 3 {
            return Err(Error::input(format!(
                "image must have 3 channels, got {}",
                tensor.channels
            )));
        }
        if tensor.height == 0 || tensor.width == 0 {
            return Err(Error::input("image has zero extent"));
        }
        if let Some(bad) = tensor
            .data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::input(format!("image intensity {bad} outside [0, 1]")));
        }
        Ok(Self { tensor })
    }

    /// Builds an image from a per-pixel colour function; values are clamped into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut tensor = Tensor::zeros(3, height, width);
        for y in 0..height {
            for x in 0..width {
                let rgb = f(y, x);
                for (c, v) in rgb.iter().enumerate() {
                    *tensor.at_mut(c, y, x) = v.clamp(0.0, 1.0);
                }
            }
        }
        Self { tensor }
    }

    pub fn height(&self) -> usize {
        self.tensor.height
    }

    pub fn width(&self) -> usize {
        self.tensor.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.tensor.height, self.tensor.width)
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.tensor.at(0, y, x),
            self.tensor.at(1, y, x),
            self.tensor.at(2, y, x),
        ]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn hflip(&self) -> Image {
        Image {
            tensor: self.tensor.hflip(),
        }
    }
}

/// Per-pixel metric depth, strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    tensor: Tensor,
}

impl DepthMap {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.channels != 1 {
            return Err(Error::input(format!(
                "depth map must have 1 channel, got {}",
                tensor.channels
            )));
        }
        if let Some(bad) = tensor.data.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(Error::input(format!("depth value {bad} is not strictly positive")));
        }
        Ok(Self { tensor })
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::input("depth value count does not match resolution"));
        }
        Self::new(Tensor::from_vec(1, height, width, values))
    }

    pub fn height(&self) -> usize {
        self.tensor.height
    }

    pub fn width(&self) -> usize {
        self.tensor.width
    }

    pub fn values(&self) -> &[f32] {
        &self.tensor.data
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn max_value(&self) -> f32 {
        self.tensor.data.iter().copied().fold(f32::MIN, f32::max)
    }
}

/// Multi-scale encoder activations, finest level first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::input("feature pyramid needs at least one level"));
        }
        for pair in levels.windows(2) {
            if pair[1].height >= pair[0].height || pair[1].width >= pair[0].width {
                return Err(Error::input("pyramid spatial sizes must strictly decrease"));
            }
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::input("pyramid contains non-finite activations"));
        }
        Ok(Self { levels })
    }

    pub(crate) fn from_levels_unchecked(levels: Vec<Tensor>) -> Self {
        Self { levels }
    }

    /// Level `j` counted from 1 (finest) to `M` (coarsest).
    pub fn level(&self, j: usize) -> &Tensor {
        &self.levels[j - 1]
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.levels.iter().map(Tensor::shape).collect()
    }
}
