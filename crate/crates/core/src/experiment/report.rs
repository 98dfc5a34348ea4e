//! Evaluation report: JSON/CSV serialisation and qualitative sample PNGs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{DepthMetrics, OodMetrics};
use crate::model::Image;
use crate::nn::Tensor;
use crate::scoring::{labeled_scores, ErrorMap, Method, ScoreRecord};

/// Error maps are drawn on a fixed scale so panels are comparable.
pub const ERROR_MAP_MAX: f32 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_digest: String,
    /// Unix seconds at report creation.
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub meta: ReportMeta,
    /// Depth metrics keyed by evaluation set (`id`, OOD set names, `sim/id`).
    pub depth: BTreeMap<String, DepthMetrics>,
    /// Detection metrics keyed by method, then OOD set.
    pub ood: BTreeMap<String, BTreeMap<String, OodMetrics>>,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Detection metrics per method for one OOD set's score records.
pub fn ood_metrics_by_method(records: &[ScoreRecord]) -> Result<BTreeMap<Method, OodMetrics>> {
    let mut by_method: BTreeMap<Method, Vec<ScoreRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r.clone());
    }
    by_method
        .into_iter()
        .map(|(m, rs)| Ok((m, OodMetrics::compute(&labeled_scores(&rs)?)?)))
        .collect()
}

impl EvaluationReport {
    pub fn new(meta: ReportMeta) -> Self {
        Self {
            meta,
            depth: BTreeMap::new(),
            ood: BTreeMap::new(),
        }
    }

    /// Adds the metrics of every method scored on `ood_set`.
    pub fn add_scores(&mut self, ood_set: &str, records: &[ScoreRecord]) -> Result<()> {
        for (method, m) in ood_metrics_by_method(records)? {
            self.ood
                .entry(method.to_string())
                .or_default()
                .insert(ood_set.to_string(), m);
        }
        Ok(())
    }

    pub fn metrics(&self, method: Method, ood_set: &str) -> Option<&OodMetrics> {
        self.ood.get(method.as_str()).and_then(|m| m.get(ood_set))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::file(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::file(path, e))
    }

    /// `method,ood_set,auroc,auprs,aupre,fpr95`, one row per pair.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::file(path, e))?;
        let io = |e: csv::Error| Error::file(path, e);
        w.write_record(["method", "ood_set", "auroc", "auprs", "aupre", "fpr95"])
            .map_err(io)?;
        for (method, sets) in &self.ood {
            for (set, m) in sets {
                w.write_record([
                    method.clone(),
                    set.clone(),
                    m.auroc.to_string(),
                    m.auprs.to_string(),
                    m.aupre.to_string(),
                    m.fpr95.to_string(),
                ])
                .map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::file(path, e))
    }

    /// `set,abs_rel,rmse,delta1`.
    pub fn write_depth_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::file(path, e))?;
        let io = |e: csv::Error| Error::file(path, e);
        w.write_record(["set", "abs_rel", "rmse", "delta1"]).map_err(io)?;
        for (set, m) in &self.depth {
            w.write_record([set.clone(), m.abs_rel.to_string(), m.rmse.to_string(), m.delta1.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::file(path, e))
    }
}

/// Writes `report.json`, `report.csv` and `depth.csv` into `dir`.
pub fn render_report(report: &EvaluationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    report.write_json(&dir.join("report.json"))?;
    report.write_csv(&dir.join("report.csv"))?;
    report.write_depth_csv(&dir.join("depth.csv"))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_png(x: &Image) -> image::RgbImage {
    let (h, w) = x.resolution();
    image::RgbImage::from_fn(w as u32, h as u32, |px, py| image::Rgb(x.pixel(py as usize, px as usize).map(to_u8)))
}

/// Reconstruction clamped to [0, 1] for display.
pub fn reconstruction_png(recon: &Tensor) -> Result<image::RgbImage> {
    if recon.channels != 3 {
        return Err(Error::input(format!("reconstruction has {} channels, expected 3", recon.channels)));
    }
    Ok(image::RgbImage::from_fn(recon.width as u32, recon.height as u32, |px, py| {
        let (y, x) = (py as usize, px as usize);
        image::Rgb([recon.at(0, y, x), recon.at(1, y, x), recon.at(2, y, x)].map(to_u8))
    }))
}

/// Error map on the fixed scale [0, ERROR_MAP_MAX], clipped above.
pub fn error_png(err: &ErrorMap) -> image::GrayImage {
    let w = err.width();
    image::GrayImage::from_fn(w as u32, err.height() as u32, |px, py| {
        image::Luma([to_u8(err.values()[py as usize * w + px as usize] / ERROR_MAP_MAX)])
    })
}

/// Writes `<stem>-input.png`, `<stem>-recon.png` and `<stem>-error.png`.
pub fn save_sample(dir: &Path, stem: &str, x: &Image, recon: &Tensor, err: &ErrorMap) -> Result<()> {
    if recon.shape() != x.tensor().shape() || (err.height(), err.width()) != x.resolution() {
        return Err(Error::input("sample inputs differ in resolution"));
    }
    let save = |name: &str, result: image::ImageResult<()>| result.map_err(|e| Error::file(dir.join(name), e));
    let name = format!("{stem}-input.png");
    save(&name, image_png(x).save(dir.join(&name)))?;
    let name = format!("{stem}-recon.png");
    save(&name, reconstruction_png(recon)?.save(dir.join(&name)))?;
    let name = format!("{stem}-error.png");
    save(&name, error_png(err).save(dir.join(&name)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LABEL_ID, LABEL_OOD};

    fn records() -> Vec<ScoreRecord> {
        let mut out = Vec::new();
        for (i, s) in [0.1, 0.2, 0.3].into_iter().enumerate() {
            out.push(ScoreRecord::new(&format!("id-{i}"), Method::Ours, s, LABEL_ID).unwrap());
            out.push(ScoreRecord::new(&format!("id-{i}"), Method::Post, 1.0 - s, LABEL_ID).unwrap());
        }
        for (i, s) in [0.25, 0.9].into_iter().enumerate() {
            out.push(ScoreRecord::new(&format!("ood-{i}"), Method::Ours, s, LABEL_OOD).unwrap());
            out.push(ScoreRecord::new(&format!("ood-{i}"), Method::Post, s, LABEL_OOD).unwrap());
        }
        out
    }

    fn report() -> EvaluationReport {
        let mut r = EvaluationReport::new(ReportMeta {
            seed: 1,
            config_digest: "ab".into(),
            timestamp: 5,
        });
        r.add_scores("noise", &records()).unwrap();
        r.depth.insert(
            "id".into(),
            DepthMetrics {
                abs_rel: 0.1,
                rmse: 0.5,
                delta1: 0.9,
            },
        );
        r
    }

    #[test]
    fn metrics_grouped_by_method() {
        let r = report();
        // ours: pairs (id < ood) = 5 of 6.
        assert!((r.metrics(Method::Ours, "noise").unwrap().auroc - 5.0 / 6.0).abs() < 1e-12);
        assert!(r.metrics(Method::Post, "noise").is_some());
        assert!(r.metrics(Method::Log, "noise").is_none());
    }

    #[test]
    fn json_schema_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        render_report(&r, dir.path()).unwrap();
        let back = EvaluationReport::read_json(&dir.path().join("report.json")).unwrap();
        assert_eq!(back, r);
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(v["meta"]["seed"], 1);
        assert!(v["ood"]["ours"]["noise"]["fpr95"].is_number());
        assert!(v["depth"]["id"]["delta1"].is_number());
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "method,ood_set,auroc,auprs,aupre,fpr95");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("ours,noise,"));
        let depth = std::fs::read_to_string(dir.path().join("depth.csv")).unwrap();
        assert_eq!(depth.lines().nth(1).unwrap(), "id,0.1,0.5,0.9");
    }

    #[test]
    fn sample_rendering() {
        let x = Image::from_fn(2, 3, |_, _| [1.0, 0.0, 0.5]);
        assert_eq!(image_png(&x).get_pixel(2, 1).0, [255, 0, 128]);
        let recon = Tensor::from_vec(3, 1, 2, vec![-1.0, 0.5, 2.0, 0.0, 1.0, 1.0]);
        let r = reconstruction_png(&recon).unwrap();
        assert_eq!(r.get_pixel(0, 0).0, [0, 255, 255]);
        assert_eq!(r.get_pixel(1, 0).0, [128, 0, 255]);
        let err = ErrorMap::new(1, 4, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let e = error_png(&err);
        let px: Vec<u8> = e.pixels().map(|p| p.0[0]).collect();
        assert_eq!(px, [0, 128, 255, 255]);
    }

    #[test]
    fn zero_error_map_is_black() {
        let err = ErrorMap::new(3, 3, vec![0.0; 9]).unwrap();
        assert!(error_png(&err).pixels().all(|p| p.0[0] == 0));
    }

    #[test]
    fn sample_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let x = Image::from_fn(2, 2, |_, _| [0.2; 3]);
        let err = ErrorMap::new(2, 2, vec![0.1; 4]).unwrap();
        save_sample(dir.path(), "id-000", &x, x.tensor(), &err).unwrap();
        for f in ["id-000-input.png", "id-000-recon.png", "id-000-error.png"] {
            let img = image::open(dir.path().join(f)).unwrap();
            assert_eq!((img.width(), img.height()), (2, 2));
        }
        assert!(save_sample(dir.path(), "bad", &x, &Tensor::zeros(3, 2, 3), &err).is_err());
    }

    #[test]
    fn unwritable_directory_is_file_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        assert!(matches!(render_report(&report(), &blocker.join("sub")), Err(Error::File { .. })));
    }
}
