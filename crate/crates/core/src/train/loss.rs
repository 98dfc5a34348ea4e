//! Loss functions with analytic gradients.
//!
//! The arithmetic lives in `f64` slice kernels; the tensor-level wrappers
//! used by the harnesses convert at the boundary.

use crate::error::{Error, Result};
use crate::model::{DepthMap, Image};
use crate::nn::Tensor;

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference.
pub fn l1_mean(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n
}

pub fn l1_mean_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| sign(p - t) / n).collect()
}

/// Mean Laplace negative log-likelihood `|p - t| / b + ln(2b)`.
pub fn laplace_nll(pred: &[f64], target: &[f64], scale: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .zip(scale)
        .map(|((p, t), b)| (p - t).abs() / b + (2.0 * b).ln())
        .sum::<f64>()
        / n
}

/// Gradients with respect to the prediction and the scale.
pub fn laplace_nll_grad(pred: &[f64], target: &[f64], scale: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .zip(scale)
        .map(|((p, t), b)| {
            let r = p - t;
            (sign(r) / (b * n), (1.0 / b - r.abs() / (b * b)) / n)
        })
        .unzip()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn narrow(v: Vec<f64>, like: &Tensor) -> Tensor {
    Tensor::from_vec(like.channels, like.height, like.width, v.into_iter().map(|x| x as f32).collect())
}

/// `E|x̂ - x|` over every pixel and channel.
pub fn reconstruction_loss(recon: &Tensor, x: &Image) -> Result<f64> {
    Ok(reconstruction_loss_grad(recon, x)?.0)
}

pub fn reconstruction_loss_grad(recon: &Tensor, x: &Image) -> Result<(f64, Tensor)> {
    if recon.shape() != x.tensor().shape() {
        return Err(Error::input(format!(
            "reconstruction shape {:?} does not match image {:?}",
            recon.shape(),
            x.tensor().shape()
        )));
    }
    let (p, t) = (widen(&recon.data), widen(&x.tensor().data));
    Ok((l1_mean(&p, &t), narrow(l1_mean_grad(&p, &t), recon)))
}

/// Depth supervision: plain L1, or Laplace NLL given a positive scale map.
#[derive(Clone, Copy, Debug)]
pub enum DepthLoss<'a> {
    L1,
    Laplace { scale: &'a Tensor },
}

pub struct DepthLossGrad {
    pub loss: f64,
    pub pred: Tensor,
    pub scale: Option<Tensor>,
}

pub fn depth_loss(pred: &DepthMap, target: &DepthMap, kind: DepthLoss<'_>) -> Result<f64> {
    Ok(depth_loss_grad(pred.tensor(), target, kind)?.loss)
}

pub fn depth_loss_grad(pred: &Tensor, target: &DepthMap, kind: DepthLoss<'_>) -> Result<DepthLossGrad> {
    if pred.shape() != target.tensor().shape() {
        return Err(Error::input(format!(
            "prediction shape {:?} does not match target {:?}",
            pred.shape(),
            target.tensor().shape()
        )));
    }
    let (p, t) = (widen(&pred.data), widen(target.values()));
    match kind {
        DepthLoss::L1 => Ok(DepthLossGrad {
            loss: l1_mean(&p, &t),
            pred: narrow(l1_mean_grad(&p, &t), pred),
            scale: None,
        }),
        DepthLoss::Laplace { scale } => {
            if scale.shape() != pred.shape() {
                return Err(Error::input("scale map shape does not match prediction"));
            }
            if let Some(bad) = scale.data.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
                return Err(Error::input(format!("scale {bad} is not strictly positive")));
            }
            let b = widen(&scale.data);
            let (gp, gb) = laplace_nll_grad(&p, &t, &b);
            Ok(DepthLossGrad {
                loss: laplace_nll(&p, &t, &b),
                pred: narrow(gp, pred),
                scale: Some(narrow(gb, scale)),
            })
        }
    }
}
