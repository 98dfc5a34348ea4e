use rand::Rng;

use super::Tensor;

pub fn relu_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zero the gradient wherever the rectified output was not positive.
pub fn relu_backward_inplace(grad: &mut Tensor, output: &Tensor) {
    for (g, o) in grad.data.iter_mut().zip(&output.data) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(t: &Tensor) -> Tensor {
    let (h, w) = (t.height * 2, t.width * 2);
    let mut out = Tensor::zeros(t.channels, h, w);
    for c in 0..t.channels {
        let src = t.channel(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let src_row = &src[(y / 2) * t.width..(y / 2 + 1) * t.width];
            let dst_row = &mut dst[y * w..(y + 1) * w];
            for (x, d) in dst_row.iter_mut().enumerate() {
                *d = src_row[x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2 block.
pub fn upsample2_backward(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.height / 2, grad.width / 2);
    let mut out = Tensor::zeros(grad.channels, h, w);
    for c in 0..grad.channels {
        for y in 0..grad.height {
            for x in 0..grad.width {
                *out.at_mut(c, y / 2, x / 2) += grad.at(c, y, x);
            }
        }
    }
    out
}

/// Inverted-dropout mask: kept units are scaled by `1 / (1 - p)`.
pub fn dropout_mask<R: Rng>(len: usize, p: f32, rng: &mut R) -> Vec<f32> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep })
        .collect()
}

pub fn apply_mask(t: &mut Tensor, mask: &[f32]) {
    for (v, m) in t.data.iter_mut().zip(mask) {
        *v *= m;
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_adjoint_identity() {
        // <up(a), b> == <a, up^T(b)>
        let a = Tensor::from_vec(2, 2, 3, (0..12).map(|v| v as f32 * 0.5 - 2.0).collect());
        let b = Tensor::from_vec(2, 4, 6, (0..48).map(|v| ((v * 7) % 11) as f32 - 5.0).collect());
        let lhs: f32 = upsample2(&a).data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
        let rhs: f32 = a.data.iter().zip(&upsample2_backward(&b).data).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn stable_activations() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-7);
        assert!(sigmoid(-100.0) >= 0.0 && sigmoid(100.0) <= 1.0);
        assert!(softplus(-30.0) > 0.0);
        assert_eq!(softplus(50.0), 50.0);
    }
}
