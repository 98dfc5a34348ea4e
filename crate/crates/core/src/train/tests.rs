use super::*;
use crate::data::{synthetic_train_set, SceneParams, SyntheticSplit};
use crate::model::DepthMap;
use crate::nn::Tensor;
use rand::{Rng, SeedableRng};

fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        variant,
        encoder_channels: vec![3, 4, 5, 6],
        decoder_channels: vec![5, 4, 3, 3],
        ..ModelConfig::default()
    }
}

fn tiny_data(n: usize) -> Vec<DepthSample> {
    let params = SceneParams {
        height: 16,
        width: 16,
        ..SceneParams::default()
    };
    let split = SyntheticSplit {
        train: n,
        ..SyntheticSplit::default()
    };
    synthetic_train_set(&split, &params).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 4,
        epochs,
        seed: 3,
        lambda: 1.0,
    }
}

fn sample_loss(model: &DepthModel, s: &DepthSample) -> f64 {
    let pred = model.predict(&s.image).unwrap();
    let kind = match &pred.scale {
        Some(b) => DepthLoss::Laplace { scale: b },
        None => DepthLoss::L1,
    };
    depth_loss(&pred.depth, &s.depth, kind).unwrap()
}

/// Backpropagated gradient of the whole network against central
/// differences on a spread of individual parameters.
#[test]
fn network_backprop_matches_finite_differences() {
    for variant in [Variant::Plain, Variant::Heteroscedastic] {
        let mut model = DepthModel::new(tiny_config(variant).with_seed(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Zero biases put ReLU inputs on padded borders exactly at the kink.
        for t in model.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
        }
        // Targets far from the initial prediction keep the L1 kinks away.
        let depth = DepthMap::from_values(16, 16, (0..256).map(|_| rng.gen_range(8.5..9.9)).collect()).unwrap();
        let image = crate::model::Image::from_fn(16, 16, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let sample = DepthSample { image, depth };

        let mut grads = model.zero_grad();
        depth_sample_step(&model, &mut grads, &sample, &mut stream(0, "unused"), None).unwrap();
        let analytic: Vec<f32> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();

        let n = model.parameter_count();
        let eps = 1e-3f32;
        let mut checked = 0;
        for idx in (0..n).step_by(n / 40) {
            let perturbed = |delta: f32| {
                let mut m = model.clone();
                let mut seen = 0;
                for t in m.tensors_mut() {
                    if idx < seen + t.len() {
                        t[idx - seen] += delta;
                        break;
                    }
                    seen += t.len();
                }
                sample_loss(&m, &sample)
            };
            let fd = (perturbed(eps) - perturbed(-eps)) / (2.0 * eps as f64);
            let an = analytic[idx] as f64;
            let tol = 2e-4 + 1e-2 * fd.abs().max(an.abs());
            assert!((fd - an).abs() < tol, "{variant:?} param {idx}: fd {fd} vs backprop {an}");
            checked += 1;
        }
        assert!(checked >= 40);
    }
}

#[test]
fn depth_training_reduces_loss_and_is_deterministic() {
    let data = tiny_data(24);
    let (m1, log1) = train_depth_model(&data, &quick(4), &tiny_config(Variant::Plain)).unwrap();
    let (m2, log2) = train_depth_model(&data, &quick(4), &tiny_config(Variant::Plain)).unwrap();
    assert_eq!(log1.losses.len(), 4);
    assert!(log1.final_loss() < log1.first_loss(), "{:?}", log1.losses);
    assert_eq!(log1, log2);
    assert_eq!(m1, m2);
}

#[test]
fn single_epoch_single_entry() {
    let data = tiny_data(5);
    for variant in [Variant::Plain, Variant::Heteroscedastic, Variant::Dropout] {
        let (_, log) = train_depth_model(&data, &quick(1), &tiny_config(variant)).unwrap();
        assert_eq!(log.losses.len(), 1);
        assert!(log.losses[0].is_finite());
    }
}

#[test]
fn empty_dataset_rejected() {
    assert!(matches!(
        train_depth_model(&[], &quick(1), &tiny_config(Variant::Plain)),
        Err(Error::Input(_))
    ));
    let model = DepthModel::new(tiny_config(Variant::Plain)).unwrap();
    assert!(train_image_decoder(&model, &[], &quick(1)).is_err());
}

#[test]
fn invalid_config_rejected() {
    let data = tiny_data(2);
    let mut cfg = quick(1);
    cfg.lr = 0.0;
    assert!(matches!(
        train_depth_model(&data, &cfg, &tiny_config(Variant::Plain)),
        Err(Error::Config { .. })
    ));
    cfg = quick(1);
    cfg.batch_size = 0;
    assert!(train_depth_model(&data, &cfg, &tiny_config(Variant::Plain)).is_err());
}

#[test]
fn image_decoder_leaves_depth_model_untouched() {
    let data = tiny_data(16);
    let (model, _) = train_depth_model(&data, &quick(2), &tiny_config(Variant::Plain)).unwrap();
    let before = (model.encoder_digest(), model.decoder_digest());
    let images: Vec<Image> = data.iter().map(|s| s.image.clone()).collect();
    let (dec, log) = train_image_decoder(&model, &images, &quick(5)).unwrap();
    assert_eq!(before, (model.encoder_digest(), model.decoder_digest()));
    assert_eq!(log.digests["encoder"], before.0);
    assert_eq!(log.digests["depth_decoder"], before.1);
    assert!(log.final_loss() < log.first_loss());
    let fresh = build_image_decoder(&model.blueprint(), derive_seed(3, "image-decoder")).unwrap();
    assert_ne!(fresh.digest(), dec.digest());
}

#[test]
fn image_decoder_rejects_wrong_resolution() {
    let model = DepthModel::new(tiny_config(Variant::Plain)).unwrap();
    let big = vec![Image::from_fn(32, 32, |_, _| [0.5; 3])];
    assert!(matches!(train_image_decoder(&model, &big, &quick(1)), Err(Error::Input(_))));
}

#[test]
fn joint_with_zero_weight_matches_depth_training() {
    let data = tiny_data(12);
    let mut cfg = quick(2);
    cfg.lambda = 0.0;
    let (plain, plain_log) = train_depth_model(&data, &cfg, &tiny_config(Variant::Plain)).unwrap();
    let (joint, _, joint_log) = train_joint(&data, &cfg, &tiny_config(Variant::Plain)).unwrap();
    assert_eq!(plain.encoder_digest(), joint.encoder_digest());
    assert_eq!(plain.decoder_digest(), joint.decoder_digest());
    assert_eq!(plain_log.losses, joint_log.losses);
}

#[test]
fn joint_updates_both_parameter_sets() {
    let data = tiny_data(12);
    let cfg = quick(2);
    let model_cfg = tiny_config(Variant::Plain);
    let init = DepthModel::new(model_cfg.clone().with_seed(cfg.seed)).unwrap();
    let init_dec = build_image_decoder(&init.blueprint(), derive_seed(cfg.seed, "image-decoder")).unwrap();
    let (model, dec, log) = train_joint(&data, &cfg, &model_cfg).unwrap();
    assert_ne!(model.encoder_digest(), init.encoder_digest());
    assert_ne!(model.decoder_digest(), init.decoder_digest());
    assert_ne!(dec.digest(), init_dec.digest());
    assert_eq!(log.losses.len(), 2);
}

#[test]
fn autoencoder_trains_encoder_and_decoder() {
    let data = tiny_data(16);
    let images: Vec<Image> = data.iter().map(|s| s.image.clone()).collect();
    let model_cfg = tiny_config(Variant::Plain);
    let (ae, log) = train_autoencoder(&images, &quick(5), &model_cfg).unwrap();
    assert!(log.final_loss() < log.first_loss(), "{:?}", log.losses);
    assert!(!log.digests.contains_key("depth_decoder"));
    let fresh = Autoencoder::new(
        &model_cfg.clone().with_seed(derive_seed(3, "ae-encoder")),
        derive_seed(3, "image-decoder"),
    )
    .unwrap();
    assert_ne!(ae.encoder_digest(), fresh.encoder_digest());
    assert_ne!(ae.decoder().digest(), fresh.decoder().digest());
}

#[test]
fn train_log_written_as_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    let log = TrainLog {
        losses: vec![0.5, 0.25],
        ..TrainLog::default()
    };
    log.append_to(&path, "depth").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["epoch"], 2);
    assert_eq!(lines[1]["loss"], 0.25);
}

#[test]
fn tensor_gradients_have_prediction_shape() {
    let pred = Tensor::filled(1, 2, 2, 3.0);
    let target = DepthMap::from_values(2, 2, vec![1.0; 4]).unwrap();
    let g = depth_loss_grad(&pred, &target, DepthLoss::L1).unwrap();
    assert_eq!(g.pred.shape(), (1, 2, 2));
    assert!(g.pred.data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
}
