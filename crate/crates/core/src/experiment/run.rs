//! End-to-end evaluation: prepare models, score every method on every
//! OOD set, and collect depth and detection metrics.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;

use crate::data::{make_eval_set, EvalSample, EvalSet, LABEL_OOD};
use crate::error::{Error, Result};
use crate::metrics::{depth_metrics_masked, DepthMetrics};
use crate::model::DepthModel;
use crate::scoring::{reconstruct_image, write_scores_csv, Method, ScoreRecord, Scorer};

use super::config::ExperimentConfig;
use super::data::{load_eval_data, EvalData, EvalImage};
use super::models::{prepare_models, ModelSet, Needs};
use super::report::{render_report, save_sample, unix_now, EvaluationReport, ReportMeta};

pub struct ExperimentOutput {
    pub report: EvaluationReport,
    pub models: ModelSet,
    /// Score records per OOD set (ID samples first, then the capped OOD samples).
    pub records: BTreeMap<String, Vec<ScoreRecord>>,
}

/// Binds `method` to the prepared models.
pub fn scorer<'a>(method: Method, models: &'a ModelSet, cfg: &ExperimentConfig) -> Result<Scorer<'a>> {
    Ok(match method {
        Method::Ours => Scorer::Recon {
            method,
            encoder: models.depth()?,
            decoder: models.decoder()?,
        },
        Method::Sim => {
            let (model, decoder) = models.sim()?;
            Scorer::Recon {
                method,
                encoder: model,
                decoder,
            }
        }
        Method::Ae => {
            let ae = models.ae()?;
            Scorer::Recon {
                method,
                encoder: ae,
                decoder: ae.decoder(),
            }
        }
        Method::Post => Scorer::Post(models.depth()?),
        Method::Log => Scorer::Log(models.log()?),
        Method::Drop => Scorer::Drop {
            model: models.drop()?,
            passes: cfg.eval.dropout_passes,
            seed: cfg.seed,
        },
    })
}

/// Assembles the capped evaluation set for each OOD set, by name.
pub fn eval_sets(cfg: &ExperimentConfig, data: &EvalData) -> Result<Vec<(String, EvalSet)>> {
    data.ood
        .iter()
        .map(|o| {
            let set = make_eval_set(data.id_images(), o.images(), cfg.eval.ood_cap, cfg.seed)
                .map_err(|e| Error::input(format!("OOD set {}: {e}", o.name)))?;
            Ok((o.name.clone(), set))
        })
        .collect()
}

/// Scores every method on every set. ID samples are shared by all sets,
/// so they are scored once per method.
pub fn score_all(
    cfg: &ExperimentConfig,
    models: &ModelSet,
    sets: &[(String, EvalSet)],
) -> Result<BTreeMap<String, Vec<ScoreRecord>>> {
    let mut out: BTreeMap<String, Vec<ScoreRecord>> = BTreeMap::new();
    let Some((_, first)) = sets.first() else {
        return Ok(out);
    };
    let id_part = |set: &EvalSet| -> Vec<EvalSample> { set.samples[..set.n_id].to_vec() };
    let id_samples = id_part(first);
    for &method in &cfg.eval.methods {
        info!("scoring {method}");
        let s = scorer(method, models, cfg)?;
        let id_set = EvalSet {
            samples: id_samples.clone(),
            n_id: id_samples.len(),
            n_ood: 0,
        };
        let id_records = s.score_set(&id_set)?;
        for (name, set) in sets {
            let ood: Vec<EvalSample> = set.samples.iter().filter(|x| x.label == LABEL_OOD).cloned().collect();
            let ood_set = EvalSet {
                n_id: 0,
                n_ood: ood.len(),
                samples: ood,
            };
            let entry = out.entry(name.clone()).or_default();
            entry.extend(id_records.iter().cloned());
            entry.extend(s.score_set(&ood_set)?);
        }
    }
    Ok(out)
}

/// Mean per-image depth metrics over the items that carry ground truth.
pub fn depth_metrics_over(model: &DepthModel, items: &[EvalImage]) -> Result<Option<DepthMetrics>> {
    let per_image = items
        .iter()
        .filter_map(|e| e.depth.as_ref().map(|d| (&e.image, d)))
        .map(|(x, d)| {
            let pred = model.predict(x)?.depth;
            let mask = vec![true; d.data.len()];
            depth_metrics_masked(pred.values(), &d.data, &mask)
        })
        .collect::<Result<Vec<_>>>()?;
    if per_image.is_empty() {
        return Ok(None);
    }
    DepthMetrics::mean(&per_image).map(Some)
}

fn write_samples(cfg: &ExperimentConfig, models: &ModelSet, data: &EvalData, dir: &Path) -> Result<()> {
    let (Some(depth), Some(decoder)) = (&models.depth, &models.decoder) else {
        return Ok(());
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let sets = std::iter::once(("id", &data.id)).chain(data.ood.iter().map(|o| (o.name.as_str(), &o.items)));
    for (name, items) in sets {
        for (i, item) in items.iter().take(cfg.eval.samples).enumerate() {
            let (recon, err) = reconstruct_image(depth, decoder, &item.image)?;
            save_sample(dir, &format!("{name}-{i:03}"), &item.image, &recon, &err)?;
        }
    }
    Ok(())
}

/// Runs the whole evaluation. With a run directory, also writes the
/// canonical config, training logs, checkpoints of freshly trained
/// models, per-set score CSVs, the report files and sample panels.
pub fn run_experiment(cfg: &ExperimentConfig, run_dir: Option<&Path>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let path = dir.join("config.txt");
        std::fs::write(&path, cfg.to_text()).map_err(|e| Error::file(&path, e))?;
    }
    let mut needs = Needs::for_methods(&cfg.eval.methods);
    needs.depth = true;
    let models = prepare_models(cfg, needs, run_dir)?;
    let data = load_eval_data(cfg)?;
    let sets = eval_sets(cfg, &data)?;
    let records = score_all(cfg, &models, &sets)?;

    let mut report = EvaluationReport::new(ReportMeta {
        seed: cfg.seed,
        config_digest: cfg.digest(),
        timestamp: unix_now(),
    });
    for (name, rs) in &records {
        report.add_scores(name, rs)?;
    }
    let depth = models.depth()?;
    if let Some(m) = depth_metrics_over(depth, &data.id)? {
        report.depth.insert("id".into(), m);
    }
    for o in &data.ood {
        if let Some(m) = depth_metrics_over(depth, &o.items)? {
            report.depth.insert(o.name.clone(), m);
        }
    }
    if let Some((sim, _)) = &models.sim {
        if let Some(m) = depth_metrics_over(sim, &data.id)? {
            report.depth.insert("sim/id".into(), m);
        }
    }

    if let Some(dir) = run_dir {
        let scores = dir.join("scores");
        std::fs::create_dir_all(&scores).map_err(|e| Error::file(&scores, e))?;
        for (name, rs) in &records {
            write_scores_csv(&scores.join(format!("{name}.csv")), rs)?;
        }
        render_report(&report, dir)?;
        write_samples(cfg, &models, &data, &dir.join("samples"))?;
    }
    Ok(ExperimentOutput {
        report,
        models,
        records,
    })
}
