//! Per-image OOD scores: reconstruction error and the three uncertainty
//! baselines. Every score is oriented so that higher means more OOD.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EvalSet, LABEL_ID, LABEL_OOD};
use crate::error::{Error, Result};
use crate::metrics::LabeledScores;
use crate::model::{DepthModel, FeatureEncoder, Image, Variant};
use crate::nn::Tensor;
use crate::recon::ImageDecoder;
use crate::rng::stream;

pub const DEFAULT_DROPOUT_PASSES: usize = 8;

/// Per-pixel maximum over channels of `|x̂ - x|`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ErrorMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::input(format!(
                "{} error values for a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::input(format!("error map entry {v} is not a finite non-negative value")));
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

pub fn error_map(x: &Image, recon: &Tensor) -> Result<ErrorMap> {
    if recon.shape() != x.tensor().shape() {
        return Err(Error::input(format!(
            "reconstruction shape {:?} does not match image {:?}",
            recon.shape(),
            x.tensor().shape()
        )));
    }
    let plane = recon.plane();
    let mut values = vec![0.0f32; plane];
    for c in 0..recon.channels {
        for ((e, r), v) in values.iter_mut().zip(recon.channel(c)).zip(x.tensor().channel(c)) {
            *e = e.max((r - v).abs());
        }
    }
    ErrorMap::new(x.height(), x.width(), values)
}

/// Pixel mean of the error map.
pub fn ood_score(e: &ErrorMap) -> f64 {
    e.values.iter().map(|&v| v as f64).sum::<f64>() / e.values.len() as f64
}

/// `1` (in-distribution) when `s <= tau`, else `0`.
pub fn classify(s: f64, tau: f64) -> u8 {
    if s <= tau {
        LABEL_ID
    } else {
        LABEL_OOD
    }
}

/// Reconstruction and error map for one image.
pub fn reconstruct_image<E: FeatureEncoder + ?Sized>(
    encoder: &E,
    decoder: &ImageDecoder,
    x: &Image,
) -> Result<(Tensor, ErrorMap)> {
    let recon = decoder.reconstruct(&encoder.encode_image(x)?)?;
    let e = error_map(x, &recon)?;
    Ok((recon, e))
}

pub fn recon_score<E: FeatureEncoder + ?Sized>(encoder: &E, decoder: &ImageDecoder, x: &Image) -> Result<f64> {
    Ok(ood_score(&reconstruct_image(encoder, decoder, x)?.1))
}

/// Mean of `|d̂(x) - flip(d̂(flip(x)))|`.
pub fn post_score(model: &DepthModel, x: &Image) -> Result<f64> {
    let direct = model.predict(x)?.depth;
    let flipped = model.predict(&x.hflip())?.depth.tensor().hflip();
    let n = direct.values().len() as f64;
    Ok(direct
        .values()
        .iter()
        .zip(&flipped.data)
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / n)
}

/// Mean predicted Laplace scale.
pub fn log_score(model: &DepthModel, x: &Image) -> Result<f64> {
    if model.variant() != Variant::Heteroscedastic {
        return Err(Error::usage(format!(
            "log score needs a heteroscedastic model, got {}",
            model.variant().as_str()
        )));
    }
    let scale = model.predict(x)?.scale.expect("heteroscedastic model predicts a scale");
    Ok(scale.data.iter().map(|&b| b as f64).sum::<f64>() / scale.data.len() as f64)
}

/// Random stream for the dropout passes of one sample.
pub fn dropout_stream(seed: u64, sample_id: &str) -> ChaCha8Rng {
    stream(seed, &format!("dropout/{sample_id}"))
}

/// Stochastic depth maps from `passes` dropout forward passes.
pub fn dropout_passes(model: &DepthModel, x: &Image, passes: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f32>>> {
    if model.variant() != Variant::Dropout {
        return Err(Error::usage(format!(
            "dropout score needs a dropout model, got {}",
            model.variant().as_str()
        )));
    }
    if passes < 2 {
        return Err(Error::usage(format!("dropout score needs at least 2 passes, got {passes}")));
    }
    (0..passes)
        .map(|_| Ok(model.predict_stochastic(x, rng)?.values().to_vec()))
        .collect()
}

/// Pixel mean of the per-pixel variance (divided by N) across passes.
pub fn pass_variance(passes: &[Vec<f32>]) -> f64 {
    let n = passes.len() as f64;
    let pixels = passes[0].len();
    let mut total = 0.0;
    for i in 0..pixels {
        let mean = passes.iter().map(|p| p[i] as f64).sum::<f64>() / n;
        total += passes.iter().map(|p| (p[i] as f64 - mean).powi(2)).sum::<f64>() / n;
    }
    total / pixels as f64
}

pub fn dropout_score(model: &DepthModel, x: &Image, passes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    Ok(pass_variance(&dropout_passes(model, x, passes, rng)?))
}

/// Scoring methods reported in an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ours,
    Post,
    Log,
    Drop,
    Sim,
    Ae,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Ours, Method::Post, Method::Log, Method::Drop, Method::Sim, Method::Ae];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Post => "post",
            Method::Log => "log",
            Method::Drop => "drop",
            Method::Sim => "sim",
            Method::Ae => "ae",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::usage(format!("unknown method '{s}' (expected ours, post, log, drop, sim or ae)")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A scoring method bound to the models it needs.
pub enum Scorer<'a> {
    Recon {
        method: Method,
        encoder: &'a dyn FeatureEncoder,
        decoder: &'a ImageDecoder,
    },
    Post(&'a DepthModel),
    Log(&'a DepthModel),
    Drop {
        model: &'a DepthModel,
        passes: usize,
        seed: u64,
    },
}

impl Scorer<'_> {
    pub fn method(&self) -> Method {
        match self {
            Scorer::Recon { method, .. } => *method,
            Scorer::Post(_) => Method::Post,
            Scorer::Log(_) => Method::Log,
            Scorer::Drop { .. } => Method::Drop,
        }
    }

    pub fn score(&self, id: &str, x: &Image) -> Result<f64> {
        match self {
            Scorer::Recon { encoder, decoder, .. } => recon_score(*encoder, decoder, x),
            Scorer::Post(m) => post_score(m, x),
            Scorer::Log(m) => log_score(m, x),
            Scorer::Drop { model, passes, seed } => dropout_score(model, x, *passes, &mut dropout_stream(*seed, id)),
        }
    }

    pub fn score_set(&self, set: &EvalSet) -> Result<Vec<ScoreRecord>> {
        set.samples
            .iter()
            .map(|s| {
                ScoreRecord::new(&s.id, self.method(), self.score(&s.id, &s.image)?, s.label)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub method: Method,
    pub score: f64,
    pub label: u8,
}

impl ScoreRecord {
    pub fn new(id: &str, method: Method, score: f64, label: u8) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::input(format!("score for {id} is not finite")));
        }
        if label != LABEL_ID && label != LABEL_OOD {
            return Err(Error::input(format!("label {label} for {id} is not binary")));
        }
        Ok(Self {
            id: id.to_string(),
            method,
            score,
            label,
        })
    }
}

pub fn labeled_scores(records: &[ScoreRecord]) -> Result<LabeledScores> {
    LabeledScores::new(
        records.iter().map(|r| r.score).collect(),
        records.iter().map(|r| r.label).collect(),
    )
}

/// Writes `id,method,score,label` rows with a header.
pub fn write_scores_csv(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::file(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::file(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: ScoreRecord = row.map_err(|e| Error::file(path, e))?;
        out.push(ScoreRecord::new(&rec.id, rec.method, rec.score, rec.label).map_err(|e| Error::file(path, e))?);
    }
    Ok(out)
}
