//! Displacement and diversity metrics, in pixels.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Point;

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_pair(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} points, ground truth {}", pred.len(), gt.len())));
    }
    Ok(())
}

pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(&p, &g)| dist(p, g)).sum::<f64>() / pred.len() as f64)
}

pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(dist(pred[pred.len() - 1], gt[gt.len() - 1]))
}

/// Mean over ground truths of the best prediction's error, and the distinct
/// predictions chosen (lowest index on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct MinMatch {
    pub value: f64,
    pub used: BTreeSet<usize>,
}

fn min_k(preds: &[Vec<Point>], gts: &[Vec<Point>], err: fn(&[Point], &[Point]) -> Result<f64>) -> Result<MinMatch> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if gts.is_empty() {
        return Err(Error::Empty("ground-truth futures"));
    }
    let mut total = 0.0;
    let mut used = BTreeSet::new();
    for gt in gts {
        let mut best = (usize::MAX, f64::INFINITY);
        for (k, p) in preds.iter().enumerate() {
            let e = err(p, gt)?;
            if e < best.1 || best.0 == usize::MAX {
                best = (k, e);
            }
        }
        total += best.1;
        used.insert(best.0);
    }
    Ok(MinMatch {
        value: total / gts.len() as f64,
        used,
    })
}

pub fn min_ade_k(preds: &[Vec<Point>], gts: &[Vec<Point>]) -> Result<MinMatch> {
    min_k(preds, gts, ade)
}

pub fn min_fde_k(preds: &[Vec<Point>], gts: &[Vec<Point>]) -> Result<MinMatch> {
    min_k(preds, gts, fde)
}

/// Mean over samples of `used / ground truths`.
pub fn ptu(used_counts: &[usize], gt_counts: &[usize]) -> Result<f64> {
    if used_counts.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if used_counts.len() != gt_counts.len() {
        return Err(Error::Shape(format!("{} used counts for {} samples", used_counts.len(), gt_counts.len())));
    }
    let mut sum = 0.0;
    for (&u, &j) in used_counts.iter().zip(gt_counts) {
        if j == 0 {
            return Err(Error::Empty("ground-truth futures"));
        }
        sum += u as f64 / j as f64;
    }
    Ok(sum / used_counts.len() as f64)
}

/// Average and final distance of each prediction to its nearest other one.
pub fn asd_fsd(preds: &[Vec<Point>]) -> Result<(f64, f64)> {
    if preds.len() < 2 {
        return Err(Error::Config(format!("self distance needs at least 2 predictions, got {}", preds.len())));
    }
    let (mut asd, mut fsd) = (0.0, 0.0);
    for (a, pa) in preds.iter().enumerate() {
        let (mut na, mut nf) = (f64::INFINITY, f64::INFINITY);
        for (b, pb) in preds.iter().enumerate() {
            if a != b {
                na = na.min(ade(pa, pb)?);
                nf = nf.min(fde(pa, pb)?);
            }
        }
        asd += na;
        fsd += nf;
    }
    let k = preds.len() as f64;
    Ok((asd / k, fsd / k))
}

/// Per-sample results; `ade`/`fde` score the top-ranked prediction
/// (index 0) averaged over ground truths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub k: usize,
    pub j: usize,
    pub ade: f64,
    pub fde: f64,
    pub min_ade_k: f64,
    pub min_fde_k: f64,
    pub used_ade: usize,
    pub used_fde: usize,
    pub asd: Option<f64>,
    pub fsd: Option<f64>,
}

pub fn evaluate_sample(id: &str, preds: &[Vec<Point>], gts: &[Vec<Point>]) -> Result<SampleMetrics> {
    let ma = min_ade_k(preds, gts)?;
    let mf = min_fde_k(preds, gts)?;
    let top = min_ade_k(&preds[..1], gts)?.value;
    let top_f = min_fde_k(&preds[..1], gts)?.value;
    let (asd, fsd) = match asd_fsd(preds) {
        Ok((a, f)) => (Some(a), Some(f)),
        Err(_) => (None, None),
    };
    Ok(SampleMetrics {
        id: id.to_string(),
        k: preds.len(),
        j: gts.len(),
        ade: top,
        fde: top_f,
        min_ade_k: ma.value,
        min_fde_k: mf.value,
        used_ade: ma.used.len(),
        used_fde: mf.used.len(),
        asd,
        fsd,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ade: f64,
    pub fde: f64,
    pub min_ade_k: f64,
    pub min_fde_k: f64,
    pub ptu_ade: f64,
    pub ptu_fde: f64,
    /// Absent when every sample has a single prediction.
    pub asd: Option<f64>,
    pub fsd: Option<f64>,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn from_samples(rows: &[SampleMetrics]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("samples"));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let js: Vec<usize> = rows.iter().map(|r| r.j).collect();
        let ua: Vec<usize> = rows.iter().map(|r| r.used_ade).collect();
        let uf: Vec<usize> = rows.iter().map(|r| r.used_fde).collect();
        let self_mean = |f: fn(&SampleMetrics) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Ok(Self {
            ade: mean(|r| r.ade),
            fde: mean(|r| r.fde),
            min_ade_k: mean(|r| r.min_ade_k),
            min_fde_k: mean(|r| r.min_fde_k),
            ptu_ade: ptu(&ua, &js)?,
            ptu_fde: ptu(&uf, &js)?,
            asd: self_mean(|r| r.asd),
            fsd: self_mean(|r| r.fsd),
            n_samples: rows.len(),
        })
    }
}
