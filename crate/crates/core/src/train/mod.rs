//! Training harnesses: the depth model (three variants), the post-hoc
//! image decoder, joint depth+reconstruction training, and the
//! from-scratch autoencoder.
//!
//! All harnesses share one loop: a per-epoch shuffle drawn from the run
//! seed, mini-batches whose gradients are summed sample by sample, and an
//! Adam step on the batch mean.

mod loss;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    depth_loss, depth_loss_grad, l1_mean, l1_mean_grad, laplace_nll, laplace_nll_grad, reconstruction_loss,
    reconstruction_loss_grad, DepthLoss, DepthLossGrad,
};

use crate::data::DepthSample;
use crate::error::{Error, Result};
use crate::model::network::DropoutCtx;
use crate::model::{DecoderGrad, DepthModel, DepthModelGrad, Image, ModelConfig, Variant, WeightDigest};
use crate::nn::ops::sigmoid;
use crate::nn::{Adam, Parameters};
use crate::recon::{build_image_decoder, Autoencoder, ImageDecoder};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the reconstruction term in joint training.
    pub lambda: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            epochs: 20,
            seed: 0,
            lambda: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("train.lr", "learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "epochs must be at least 1"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("train.lambda", "joint weight must be non-negative"));
        }
        Ok(())
    }
}

/// Mean training loss per epoch plus the final digest of each parameter group.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub digests: BTreeMap<String, WeightDigest>,
}

impl TrainLog {
    pub fn first_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one epoch")
    }

    /// Appends one `{"harness", "epoch", "loss"}` JSON record per line.
    pub fn append_to(&self, path: &Path, harness: &str) -> Result<()> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::file(path, e))?;
        for (i, loss) in self.losses.iter().enumerate() {
            let record = serde_json::json!({ "harness": harness, "epoch": i + 1, "loss": loss });
            writeln!(file, "{record}").map_err(|e| Error::file(path, e))?;
        }
        Ok(())
    }
}

fn run_epochs(
    harness: &str,
    n: usize,
    cfg: &TrainConfig,
    mut step: impl FnMut(&[usize]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut rng = stream(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            total += step(batch)?;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::input(format!("{harness}: loss diverged at epoch {}", epoch + 1)));
        }
        log::info!("{harness}: epoch {}/{} loss {mean:.5}", epoch + 1, cfg.epochs);
        losses.push(mean);
    }
    Ok(losses)
}

fn check_depth_data(data: &[DepthSample], model: &ModelConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    for (i, s) in data.iter().enumerate() {
        if s.image.resolution() != (model.height, model.width)
            || (s.depth.height(), s.depth.width()) != (model.height, model.width)
        {
            return Err(Error::input(format!(
                "training sample {i} is not at the model resolution {}x{}",
                model.height, model.width
            )));
        }
    }
    Ok(())
}

fn check_images(images: &[Image], resolution: (usize, usize)) -> Result<()> {
    if images.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if let Some(i) = images.iter().position(|x| x.resolution() != resolution) {
        return Err(Error::input(format!(
            "training image {i} is {:?}, expected {:?}",
            images[i].resolution(),
            resolution
        )));
    }
    Ok(())
}

/// Optional reconstruction branch attached to a depth step.
struct ReconBranch<'a> {
    decoder: &'a ImageDecoder,
    grads: &'a mut DecoderGrad,
    lambda: f32,
}

/// Forward and backward pass of one depth sample; accumulates into `grads`.
/// Returns `(depth loss, reconstruction loss)`.
fn depth_sample_step(
    model: &DepthModel,
    grads: &mut DepthModelGrad,
    sample: &DepthSample,
    dropout_rng: &mut ChaCha8Rng,
    recon: Option<ReconBranch<'_>>,
) -> Result<(f64, f64)> {
    let d_max = model.d_max();
    let enc = model.encoder.forward_trace(sample.image.tensor());
    let pyramid = &enc.pyramid;
    let dropout = (model.variant() == Variant::Dropout).then(|| DropoutCtx {
        p: model.config().dropout,
        rng: dropout_rng,
    });
    let dec = model.decoder.forward_trace(pyramid, dropout);

    let squashed = dec.head_out.map(sigmoid);
    let pred = squashed.map(|s| s * d_max);
    let scale_pass = model.scale_head.as_ref().map(|head| {
        let (logits, cache) = head.forward(&dec.trunk);
        (DepthModel::scale_from_logits(&logits), logits, cache)
    });
    let kind = match &scale_pass {
        Some((scale, _, _)) => DepthLoss::Laplace { scale },
        None => DepthLoss::L1,
    };
    let lg = depth_loss_grad(&pred, &sample.depth, kind)?;

    let mut g_logits = lg.pred;
    for (g, s) in g_logits.data.iter_mut().zip(&squashed.data) {
        *g *= d_max * s * (1.0 - s);
    }
    let g_trunk = match (&scale_pass, lg.scale, model.scale_head.as_ref(), grads.scale_head.as_mut()) {
        (Some((_, logits, cache)), Some(mut gb), Some(head), Some(head_grad)) => {
            for (g, a) in gb.data.iter_mut().zip(&logits.data) {
                *g *= sigmoid(*a);
            }
            head.backward(cache, &gb, head_grad, true)
        }
        _ => None,
    };
    let mut level_grads = model
        .decoder
        .backward(&dec, pyramid, &g_logits, g_trunk.as_ref(), &mut grads.decoder, true)
        .expect("pyramid gradients requested");

    let mut recon_loss = 0.0;
    if let Some(branch) = recon {
        let trace = branch.decoder.net.forward_trace::<ChaCha8Rng>(pyramid, None);
        let (rl, mut rg) = reconstruction_loss_grad(&trace.head_out, &sample.image)?;
        recon_loss = rl;
        if branch.lambda != 0.0 {
            rg.data.iter_mut().for_each(|g| *g *= branch.lambda);
            let extra = branch
                .decoder
                .net
                .backward(&trace, pyramid, &rg, None, branch.grads, true)
                .expect("pyramid gradients requested");
            for (l, e) in level_grads.iter_mut().zip(&extra) {
                l.add_assign(e);
            }
        }
    }
    model.encoder.backward(&enc, level_grads, &mut grads.encoder);
    Ok((lg.loss, recon_loss))
}

/// Supervised depth training of a freshly initialized model. The model's
/// initialization seed is `cfg.seed`; `model_cfg.variant` picks the head.
pub fn train_depth_model(
    data: &[DepthSample],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<(DepthModel, TrainLog)> {
    cfg.validate()?;
    check_depth_data(data, model_cfg)?;
    let mut model = DepthModel::new(model_cfg.clone().with_seed(cfg.seed))?;
    let mut grads = model.zero_grad();
    let mut adam = Adam::new(cfg.lr);
    let mut dropout_rng = stream(cfg.seed, "dropout");
    let harness = format!("depth[{}]", model_cfg.variant.as_str());
    let losses = run_epochs(&harness, data.len(), cfg, |batch| {
        grads.zero();
        let mut total = 0.0;
        for &i in batch {
            total += depth_sample_step(&model, &mut grads, &data[i], &mut dropout_rng, None)?.0;
        }
        adam.step(&mut model, &grads, 1.0 / batch.len() as f32);
        Ok(total)
    })?;
    let mut log = TrainLog {
        losses,
        ..TrainLog::default()
    };
    log.digests.insert("encoder".into(), model.encoder_digest());
    log.digests.insert("depth_decoder".into(), model.decoder_digest());
    Ok((model, log))
}

/// Post-hoc image decoder on frozen depth features. The depth model is
/// only ever borrowed immutably; gradients reach the image decoder alone.
pub fn train_image_decoder(
    model: &DepthModel,
    images: &[Image],
    cfg: &TrainConfig,
) -> Result<(ImageDecoder, TrainLog)> {
    cfg.validate()?;
    check_images(images, model.resolution())?;
    let mut decoder = build_image_decoder(&model.blueprint(), derive_seed(cfg.seed, "image-decoder"))?;
    let mut grads = decoder.net.zero_grad();
    let mut adam = Adam::new(cfg.lr);
    let losses = run_epochs("image-decoder", images.len(), cfg, |batch| {
        grads.zero();
        let mut total = 0.0;
        for &i in batch {
            let x = &images[i];
            let pyramid = model.encoder.forward(x.tensor());
            let trace = decoder.net.forward_trace::<ChaCha8Rng>(&pyramid, None);
            let (loss, g) = reconstruction_loss_grad(&trace.head_out, x)?;
            decoder.net.backward(&trace, &pyramid, &g, None, &mut grads, false);
            total += loss;
        }
        adam.step(&mut decoder.net, &grads, 1.0 / batch.len() as f32);
        Ok(total)
    })?;
    let mut log = TrainLog {
        losses,
        ..TrainLog::default()
    };
    log.digests.insert("encoder".into(), model.encoder_digest());
    log.digests.insert("depth_decoder".into(), model.decoder_digest());
    log.digests.insert("image_decoder".into(), decoder.digest());
    Ok((decoder, log))
}

/// Depth model and image decoder optimized together on
/// `depth_loss + lambda * reconstruction_loss`. With `lambda == 0` the
/// depth parameters follow exactly the path of [`train_depth_model`].
pub fn train_joint(
    data: &[DepthSample],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<(DepthModel, ImageDecoder, TrainLog)> {
    cfg.validate()?;
    check_depth_data(data, model_cfg)?;
    let mut model = DepthModel::new(model_cfg.clone().with_seed(cfg.seed))?;
    let mut decoder = build_image_decoder(&model.blueprint(), derive_seed(cfg.seed, "image-decoder"))?;
    let mut grads = model.zero_grad();
    let mut dec_grads = decoder.net.zero_grad();
    let mut adam = Adam::new(cfg.lr);
    let mut dec_adam = Adam::new(cfg.lr);
    let mut dropout_rng = stream(cfg.seed, "dropout");
    let lambda = cfg.lambda;
    let losses = run_epochs("joint", data.len(), cfg, |batch| {
        grads.zero();
        dec_grads.zero();
        let mut total = 0.0;
        for &i in batch {
            let branch = ReconBranch {
                decoder: &decoder,
                grads: &mut dec_grads,
                lambda,
            };
            let (d, r) = depth_sample_step(&model, &mut grads, &data[i], &mut dropout_rng, Some(branch))?;
            total += d + lambda as f64 * r;
        }
        let scale = 1.0 / batch.len() as f32;
        adam.step(&mut model, &grads, scale);
        if lambda != 0.0 {
            dec_adam.step(&mut decoder.net, &dec_grads, scale);
        }
        Ok(total)
    })?;
    let mut log = TrainLog {
        losses,
        ..TrainLog::default()
    };
    log.digests.insert("encoder".into(), model.encoder_digest());
    log.digests.insert("depth_decoder".into(), model.decoder_digest());
    log.digests.insert("image_decoder".into(), decoder.digest());
    Ok((model, decoder, log))
}

/// Encoder plus image decoder trained from scratch on reconstruction only.
/// No depth decoder is involved.
pub fn train_autoencoder(
    images: &[Image],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<(Autoencoder, TrainLog)> {
    cfg.validate()?;
    check_images(images, (model_cfg.height, model_cfg.width))?;
    let mut ae = Autoencoder::new(
        &model_cfg.clone().with_seed(derive_seed(cfg.seed, "ae-encoder")),
        derive_seed(cfg.seed, "image-decoder"),
    )?;
    let mut enc_grads = ae.encoder.zero_grad();
    let mut dec_grads = ae.decoder.net.zero_grad();
    let mut enc_adam = Adam::new(cfg.lr);
    let mut dec_adam = Adam::new(cfg.lr);
    let losses = run_epochs("autoencoder", images.len(), cfg, |batch| {
        enc_grads.zero();
        dec_grads.zero();
        let mut total = 0.0;
        for &i in batch {
            let x = &images[i];
            let enc = ae.encoder.forward_trace(x.tensor());
            let trace = ae.decoder.net.forward_trace::<ChaCha8Rng>(&enc.pyramid, None);
            let (loss, g) = reconstruction_loss_grad(&trace.head_out, x)?;
            let level_grads = ae
                .decoder
                .net
                .backward(&trace, &enc.pyramid, &g, None, &mut dec_grads, true)
                .expect("pyramid gradients requested");
            ae.encoder.backward(&enc, level_grads, &mut enc_grads);
            total += loss;
        }
        let scale = 1.0 / batch.len() as f32;
        enc_adam.step(&mut ae.encoder, &enc_grads, scale);
        dec_adam.step(&mut ae.decoder.net, &dec_grads, scale);
        Ok(total)
    })?;
    let mut log = TrainLog {
        losses,
        ..TrainLog::default()
    };
    log.digests.insert("encoder".into(), ae.encoder_digest());
    log.digests.insert("image_decoder".into(), ae.decoder.digest());
    Ok((ae, log))
}

#[cfg(test)]
mod tests;
