//! Minimal CPU convolution engine with explicit backward passes.
//!
//! Everything runs single-threaded so results are bit-reproducible for a
//! given seed on one platform.

mod adam;
mod conv;
pub mod ops;
mod tensor;

pub use adam::Adam;
pub use conv::{Conv2d, ConvCache, ConvGrad, KERNEL};
pub use tensor::{concat_channels, split_channels, Tensor};

/// Ordered view over the parameter (or gradient) buffers of a network.
///
/// The order is the definition order and is what digests, checkpoints and
/// the optimizer all key on.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f32]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f32]>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

impl<T: Parameters> Parameters for [T] {
    fn tensors(&self) -> Vec<&[f32]> {
        self.iter().flat_map(|p| p.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.iter_mut().flat_map(|p| p.tensors_mut()).collect()
    }
}

impl<T: Parameters> Parameters for Vec<T> {
    fn tensors(&self) -> Vec<&[f32]> {
        self.as_slice().tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        self.as_mut_slice().tensors_mut()
    }
}
