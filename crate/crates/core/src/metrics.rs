//! Pixel overlap metrics and the symmetric average Hausdorff distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RgbBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub slide_id: String,
    pub dsc: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when either mask is empty.
    pub avg_hausdorff: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// Both masks empty; dsc and iou were set to 1 by convention.
    pub both_empty: bool,
    /// Precision or recall had a zero denominator.
    pub prf_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some denominator was zero and the affected score was set to 0.
    pub undefined: bool,
}

/// Precision, recall and their harmonic mean, evaluated as
/// `2tp / (2tp + fp + fn)` so it coincides exactly with the Dice score.
pub fn prf(tp: u64, fp: u64, fn_: u64) -> Prf {
    let (tp_f, fp_f, fn_f) = (tp as f64, fp as f64, fn_ as f64);
    let mut undefined = false;
    let precision = if tp + fp == 0 {
        undefined = true;
        0.0
    } else {
        tp_f / (tp_f + fp_f)
    };
    let recall = if tp + fn_ == 0 {
        undefined = true;
        0.0
    } else {
        tp_f / (tp_f + fn_f)
    };
    let f1 = if tp == 0 {
        if precision + recall == 0.0 {
            undefined = true;
        }
        0.0
    } else {
        2.0 * tp_f / (2.0 * tp_f + fp_f + fn_f)
    };
    Prf {
        precision,
        recall,
        f1,
        undefined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<Confusion> {
    check_dims(pred, truth)?;
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Consistency(format!(
            "mask dims differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Confusion counts, overlap ratios and (when defined) average Hausdorff.
pub fn overlap_metrics(slide_id: &str, pred: &BinaryMask, truth: &BinaryMask) -> Result<MetricsReport> {
    let c = confusion(pred, truth)?;
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let both_empty = c.tp + c.fp + c.fn_ == 0;
    let (dsc, iou) = if both_empty {
        (1.0, 1.0)
    } else {
        (2.0 * tp / (2.0 * tp + fp + fn_), tp / (tp + fp + fn_))
    };
    let scores = prf(c.tp, c.fp, c.fn_);
    let avg_hausdorff = match average_hausdorff(pred, truth) {
        Ok(d) => Some(d),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        slide_id: slide_id.to_string(),
        dsc,
        iou,
        precision: scores.precision,
        recall: scores.recall,
        f1: scores.f1,
        avg_hausdorff,
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        tn: c.tn,
        both_empty,
        prf_undefined: scores.undefined,
    })
}

const FAR: f64 = 1e20;

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
    };
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        // z[0] is -inf, so k never underflows.
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        out[q] = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest set
/// pixel of `mask`. Set pixels get 0.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let n = w.max(h);
    let mut grid: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b != 0 { 0.0 } else { FAR })
        .collect();
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

fn mean_distance_to(from: &BinaryMask, to_sq_dist: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0u64;
    for (&b, &d2) in from.bits().iter().zip(to_sq_dist) {
        if b != 0 {
            sum += d2.sqrt();
            n += 1;
        }
    }
    sum / n as f64
}

/// `(mean_{a in A} d(a, B) + mean_{b in B} d(b, A)) / 2` over foreground
/// pixels, Euclidean, in pixels.
pub fn average_hausdorff(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    check_dims(pred, truth)?;
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::UndefinedMetric(
            "average Hausdorff distance needs two non-empty masks".into(),
        ));
    }
    let to_truth = squared_distance_transform(truth);
    let to_pred = squared_distance_transform(pred);
    Ok((mean_distance_to(pred, &to_truth) + mean_distance_to(truth, &to_pred)) / 2.0)
}

/// True positives green, false positives white, false negatives red.
pub fn overlay(pred: &BinaryMask, truth: &BinaryMask) -> Result<RgbBlock> {
    check_dims(pred, truth)?;
    Ok(RgbBlock::from_fn(pred.width(), pred.height(), |x, y| {
        image::Rgb(match (pred.get(x, y), truth.get(x, y)) {
            (true, true) => [0, 255, 0],
            (true, false) => [255, 255, 255],
            (false, true) => [255, 0, 0],
            (false, false) => [0, 0, 0],
        })
    }))
}
