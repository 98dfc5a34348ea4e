//! Loads each model an experiment needs from its checkpoint, or trains it.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;

use crate::data::DepthSample;
use crate::error::{Error, Result};
use crate::model::{DepthModel, Image, Variant};
use crate::recon::{Autoencoder, ImageDecoder};
use crate::scoring::Method;
use crate::train::{train_autoencoder, train_depth_model, train_image_decoder, train_joint, TrainLog};

use super::config::ExperimentConfig;
use super::data::load_train_samples;

/// Which models to make available.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Needs {
    pub depth: bool,
    pub decoder: bool,
    pub log: bool,
    pub drop: bool,
    pub sim: bool,
    pub ae: bool,
}

impl Needs {
    pub fn for_methods(methods: &[Method]) -> Self {
        let has = |m| methods.contains(&m);
        Self {
            depth: has(Method::Ours) || has(Method::Post),
            decoder: has(Method::Ours),
            log: has(Method::Log),
            drop: has(Method::Drop),
            sim: has(Method::Sim),
            ae: has(Method::Ae),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub depth: Option<DepthModel>,
    pub decoder: Option<ImageDecoder>,
    pub log: Option<DepthModel>,
    pub drop: Option<DepthModel>,
    pub sim: Option<(DepthModel, ImageDecoder)>,
    pub ae: Option<Autoencoder>,
    /// Training logs for the models trained in this call, by harness.
    pub logs: BTreeMap<String, TrainLog>,
}

fn missing(what: &str) -> Error {
    Error::usage(format!("the {what} model was not prepared"))
}

impl ModelSet {
    pub fn depth(&self) -> Result<&DepthModel> {
        self.depth.as_ref().ok_or_else(|| missing("plain depth"))
    }

    pub fn decoder(&self) -> Result<&ImageDecoder> {
        self.decoder.as_ref().ok_or_else(|| missing("image decoder"))
    }

    pub fn log(&self) -> Result<&DepthModel> {
        self.log.as_ref().ok_or_else(|| missing("heteroscedastic depth"))
    }

    pub fn drop(&self) -> Result<&DepthModel> {
        self.drop.as_ref().ok_or_else(|| missing("dropout depth"))
    }

    pub fn sim(&self) -> Result<(&DepthModel, &ImageDecoder)> {
        self.sim.as_ref().map(|(m, d)| (m, d)).ok_or_else(|| missing("joint"))
    }

    pub fn ae(&self) -> Result<&Autoencoder> {
        self.ae.as_ref().ok_or_else(|| missing("autoencoder"))
    }
}

struct Prep<'a> {
    cfg: &'a ExperimentConfig,
    run_dir: Option<&'a Path>,
    train: OnceCell<Vec<DepthSample>>,
    logs: BTreeMap<String, TrainLog>,
}

impl Prep<'_> {
    fn train_set(&self) -> Result<&[DepthSample]> {
        if self.train.get().is_none() {
            let _ = self.train.set(load_train_samples(self.cfg)?);
        }
        Ok(self.train.get().expect("just set"))
    }

    fn train_images(&self) -> Result<Vec<Image>> {
        Ok(self.train_set()?.iter().map(|s| s.image.clone()).collect())
    }

    /// Configured checkpoint, if any. A configured path must exist.
    fn existing(&self, name: &str) -> Result<Option<&Path>> {
        match self.cfg.checkpoint(name) {
            Some(p) if p.is_file() => Ok(Some(p)),
            Some(p) => Err(Error::file(p, format!("checkpoint `{name}` does not exist"))),
            None => Ok(None),
        }
    }

    fn output(&self, name: &str) -> Result<Option<PathBuf>> {
        let Some(dir) = self.run_dir else { return Ok(None) };
        let dir = dir.join("checkpoints");
        std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        Ok(Some(dir.join(format!("{name}.bin"))))
    }

    fn record(&mut self, harness: &str, log: TrainLog) {
        info!("{harness}: final loss {:.5}", log.final_loss());
        self.logs.insert(harness.to_string(), log);
    }

    fn depth_model(&mut self, name: &str, variant: Variant) -> Result<DepthModel> {
        if let Some(p) = self.existing(name)? {
            let model = DepthModel::load(p)?;
            self.check_model(p, &model, variant)?;
            return Ok(model);
        }
        info!("training {name} depth model");
        let model_cfg = self.cfg.model_config().with_variant(variant);
        let (model, log) = train_depth_model(self.train_set()?, &self.cfg.train_config(name), &model_cfg)?;
        self.record(name, log);
        if let Some(out) = self.output(name)? {
            model.save(&out)?;
        }
        Ok(model)
    }

    fn check_model(&self, path: &Path, model: &DepthModel, variant: Variant) -> Result<()> {
        if model.variant() != variant {
            return Err(Error::file(
                path,
                format!("expected a {} model, found {}", variant.as_str(), model.variant().as_str()),
            ));
        }
        let want = (self.cfg.model.height, self.cfg.model.width);
        if model.resolution() != want {
            return Err(Error::file(
                path,
                format!("model resolution {:?} does not match configured {:?}", model.resolution(), want),
            ));
        }
        Ok(())
    }

    fn image_decoder(&mut self, depth: &DepthModel) -> Result<ImageDecoder> {
        if let Some(p) = self.existing("decoder")? {
            return ImageDecoder::load(p, &depth.blueprint());
        }
        info!("training image decoder");
        let (decoder, log) = train_image_decoder(depth, &self.train_images()?, &self.cfg.train_config("decoder"))?;
        self.record("decoder", log);
        if let Some(out) = self.output("decoder")? {
            decoder.save(&out)?;
        }
        Ok(decoder)
    }

    fn joint(&mut self) -> Result<(DepthModel, ImageDecoder)> {
        match (self.existing("sim_model")?, self.existing("sim_decoder")?) {
            (Some(m), Some(d)) => {
                let model = DepthModel::load(m)?;
                self.check_model(m, &model, Variant::Plain)?;
                let decoder = ImageDecoder::load(d, &model.blueprint())?;
                return Ok((model, decoder));
            }
            (None, None) => {}
            _ => {
                return Err(Error::config(
                    "checkpoint.sim_model",
                    "sim_model and sim_decoder must be given together",
                ))
            }
        }
        info!("training joint depth and reconstruction model");
        let (model, decoder, log) = train_joint(self.train_set()?, &self.cfg.train_config("sim"), &self.cfg.model_config())?;
        self.record("sim", log);
        if let (Some(m), Some(d)) = (self.output("sim_model")?, self.output("sim_decoder")?) {
            model.save(&m)?;
            decoder.save(&d)?;
        }
        Ok((model, decoder))
    }

    fn autoencoder(&mut self) -> Result<Autoencoder> {
        match (self.existing("ae_encoder")?, self.existing("ae_decoder")?) {
            (Some(e), Some(d)) => return Autoencoder::load(e, d, &self.cfg.model_config()),
            (None, None) => {}
            _ => {
                return Err(Error::config(
                    "checkpoint.ae_encoder",
                    "ae_encoder and ae_decoder must be given together",
                ))
            }
        }
        info!("training autoencoder");
        let (ae, log) = train_autoencoder(&self.train_images()?, &self.cfg.train_config("ae"), &self.cfg.model_config())?;
        self.record("ae", log);
        if let (Some(e), Some(d)) = (self.output("ae_encoder")?, self.output("ae_decoder")?) {
            ae.save(&e, &d)?;
        }
        Ok(ae)
    }
}

/// Loads or trains every model in `needs`. Freshly trained models are
/// saved under `run_dir/checkpoints/` and their logs appended to
/// `run_dir/train.jsonl` when a run directory is given.
pub fn prepare_models(cfg: &ExperimentConfig, needs: Needs, run_dir: Option<&Path>) -> Result<ModelSet> {
    let mut prep = Prep {
        cfg,
        run_dir,
        train: OnceCell::new(),
        logs: BTreeMap::new(),
    };
    let mut set = ModelSet::default();
    if needs.depth || needs.decoder {
        let depth = prep.depth_model("depth", Variant::Plain)?;
        if needs.decoder {
            set.decoder = Some(prep.image_decoder(&depth)?);
        }
        set.depth = Some(depth);
    }
    if needs.log {
        set.log = Some(prep.depth_model("log", Variant::Heteroscedastic)?);
    }
    if needs.drop {
        set.drop = Some(prep.depth_model("drop", Variant::Dropout)?);
    }
    if needs.sim {
        set.sim = Some(prep.joint()?);
    }
    if needs.ae {
        set.ae = Some(prep.autoencoder()?);
    }
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        for (harness, log) in &prep.logs {
            log.append_to(&dir.join("train.jsonl"), harness)?;
        }
    }
    set.logs = prep.logs;
    Ok(set)
}
