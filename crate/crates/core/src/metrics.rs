//! Threshold-free OOD metrics and depth-quality metrics.
//!
//! Scores are stored with "higher = more OOD" orientation. Every ranking
//! metric treats in-distribution samples as ranked by ascending score.

use serde::{Deserialize, Serialize};

use crate::data::{LABEL_ID, LABEL_OOD};
use crate::error::{Error, Result};
use crate::model::DepthMap;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::input(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::input("no scores"));
        }
        if let Some(l) = labels.iter().find(|&&l| l != LABEL_ID && l != LABEL_OOD) {
            return Err(Error::input(format!("label {l} is not binary")));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::input(format!("score {s} is not finite")));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (n_id, n_ood) = (self.count(LABEL_ID), self.count(LABEL_OOD));
        if n_id == 0 || n_ood == 0 {
            return Err(Error::usage(format!(
                "ranking metric needs both classes (got {n_id} ID, {n_ood} OOD)"
            )));
        }
        Ok((n_id, n_ood))
    }

    /// Groups of tied scores in ascending order as `(n_id, n_ood)` counts.
    fn tie_groups(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        let mut groups: Vec<(usize, usize)> = Vec::new();
        let mut last = None;
        for i in order {
            if last != Some(self.scores[i]) {
                groups.push((0, 0));
                last = Some(self.scores[i]);
            }
            let g = groups.last_mut().unwrap();
            if self.labels[i] == LABEL_ID {
                g.0 += 1;
            } else {
                g.1 += 1;
            }
        }
        groups
    }
}

/// Which class counts as positive for a precision-recall curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positive {
    Id,
    Ood,
}

/// Probability that a random ID sample scores below a random OOD sample,
/// ties counted half.
pub fn auroc(ls: &LabeledScores) -> Result<f64> {
    let (n_id, n_ood) = ls.require_both()?;
    // Walk groups upward; every OOD sample beats all ID samples strictly below it.
    let mut id_below = 0usize;
    let mut wins = 0.0f64;
    for (gi, go) in ls.tie_groups() {
        wins += go as f64 * (id_below as f64 + 0.5 * gi as f64);
        id_below += gi;
    }
    Ok(wins / (n_id as f64 * n_ood as f64))
}

/// Step-wise average precision. Tied scores enter the ranking together.
pub fn aupr(ls: &LabeledScores, positive: Positive) -> Result<f64> {
    let mut groups = ls.tie_groups();
    let mut groups: Vec<(usize, usize)> = match positive {
        Positive::Id => groups,
        Positive::Ood => {
            groups.reverse();
            groups.into_iter().map(|(i, o)| (o, i)).collect()
        }
    };
    let n_pos: usize = groups.iter().map(|g| g.0).sum();
    if n_pos == 0 {
        return Err(Error::usage("precision-recall needs at least one positive sample"));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (pos, neg) in groups.drain(..) {
        tp += pos;
        fp += neg;
        if pos > 0 {
            ap += (pos as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// False positive rate at the smallest cutoff whose true positive rate
/// reaches `target`, with ID positive and `score <= cutoff` meaning ID.
pub fn fpr_at_tpr(ls: &LabeledScores, target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::usage(format!("target TPR {target} outside (0, 1]")));
    }
    let (n_id, n_ood) = ls.require_both()?;
    let need = (target * n_id as f64 - 1e-9).ceil() as usize;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (gi, go) in ls.tie_groups() {
        tp += gi;
        fp += go;
        if tp >= need {
            break;
        }
    }
    Ok(fp as f64 / n_ood as f64)
}

/// The four detection metrics reported per method and OOD set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    pub auroc: f64,
    pub auprs: f64,
    pub aupre: f64,
    pub fpr95: f64,
}

impl OodMetrics {
    pub fn compute(ls: &LabeledScores) -> Result<Self> {
        Ok(Self {
            auroc: auroc(ls)?,
            auprs: aupr(ls, Positive::Id)?,
            aupre: aupr(ls, Positive::Ood)?,
            fpr95: fpr_at_tpr(ls, 0.95)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub rmse: f64,
    pub delta1: f64,
}

impl DepthMetrics {
    /// Per-image metrics averaged over a dataset.
    pub fn mean(items: &[DepthMetrics]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::input("no depth metrics to average"));
        }
        let n = items.len() as f64;
        Ok(Self {
            abs_rel: items.iter().map(|m| m.abs_rel).sum::<f64>() / n,
            rmse: items.iter().map(|m| m.rmse).sum::<f64>() / n,
            delta1: items.iter().map(|m| m.delta1).sum::<f64>() / n,
        })
    }
}

/// AbsRel, RMSE and δ1 over the pixels where `mask` is set and the ground
/// truth is positive.
pub fn depth_metrics_masked(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<DepthMetrics> {
    if pred.len() != gt.len() || mask.len() != gt.len() {
        return Err(Error::input("depth metric inputs differ in size"));
    }
    let (mut n, mut rel, mut sq, mut good) = (0usize, 0.0f64, 0.0f64, 0usize);
    for ((&p, &t), &m) in pred.iter().zip(gt).zip(mask) {
        if !m || t <= 0.0 {
            continue;
        }
        let (p, t) = (p as f64, t as f64);
        n += 1;
        rel += (p - t).abs() / t;
        sq += (p - t) * (p - t);
        if (p / t).max(t / p) < 1.25 {
            good += 1;
        }
    }
    if n == 0 {
        return Err(Error::input("depth mask selects no pixels"));
    }
    let n = n as f64;
    Ok(DepthMetrics {
        abs_rel: rel / n,
        rmse: (sq / n).sqrt(),
        delta1: good as f64 / n,
    })
}

pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::input(format!(
            "prediction {}x{} does not match ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mask: Vec<bool> = gt.values().iter().map(|&d| d > 0.0).collect();
    depth_metrics_masked(pred.values(), gt.values(), &mask)
}
