//! Paired Wilcoxon signed-rank test and cohort summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

/// Largest number of nonzero differences handled by exact enumeration.
pub const EXACT_CUTOFF: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `a` tends to exceed `b`.
    Greater,
    /// `a` tends to fall below `b`.
    Less,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n_effective: usize,
    /// `min(W+, W-)` for two-sided tests, `W+` otherwise.
    pub w_statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
    pub alternative: Alternative,
}

/// Two-sided test of `paired_a - paired_b`.
pub fn wilcoxon_signed_rank(paired_a: &[f64], paired_b: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(paired_a, paired_b, Alternative::TwoSided)
}

/// Mid-ranks of `values` (1-based), doubled so they stay integral.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share rank ((i+1)+(j+1))/2; doubled: i+j+2.
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Number of sign assignments giving each doubled `W+`, indexed by the sum.
fn signed_rank_counts(doubled: &[u64]) -> Vec<u64> {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

pub fn wilcoxon_signed_rank_with(paired_a: &[f64], paired_b: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    if paired_a.len() != paired_b.len() {
        return Err(Error::Input(format!(
            "paired samples differ in length: {} vs {}",
            paired_a.len(),
            paired_b.len()
        )));
    }
    if paired_a.is_empty() {
        return Err(Error::Input("paired samples are empty".into()));
    }
    let diffs: Vec<f64> = paired_a
        .iter()
        .zip(paired_b)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite paired difference".into()));
    }
    let n = diffs.len();
    if n == 0 {
        return Err(Error::DegenerateTest("all paired differences are zero".into()));
    }

    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_midranks(&abs);
    let total2: u64 = ranks2.iter().sum();
    let w_plus2: u64 = diffs
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_minus2 = total2 - w_plus2;
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = w_minus2 as f64 / 2.0;
    let w_statistic = match alternative {
        Alternative::TwoSided => w_plus.min(w_minus),
        _ => w_plus,
    };

    let (p, method) = if n <= EXACT_CUTOFF {
        let counts = signed_rank_counts(&ranks2);
        let denom = 2f64.powi(n as i32);
        let lower = |upto: u64| counts[..=upto as usize].iter().sum::<u64>() as f64 / denom;
        let upper = |from: u64| counts[from as usize..].iter().sum::<u64>() as f64 / denom;
        let p = match alternative {
            Alternative::TwoSided => 2.0 * lower(w_plus2.min(w_minus2)),
            Alternative::Greater => upper(w_plus2),
            Alternative::Less => lower(w_plus2),
        };
        (p, WilcoxonMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let sd = var.sqrt();
        let p = match alternative {
            Alternative::TwoSided => {
                let z = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
                2.0 * normal_sf(z)
            }
            Alternative::Greater => normal_sf((w_plus - mean - 0.5) / sd),
            Alternative::Less => normal_sf((mean - w_plus - 0.5) / sd),
        };
        (p, WilcoxonMethod::NormalApprox)
    };

    Ok(WilcoxonResult {
        n_effective: n,
        w_statistic,
        w_plus,
        w_minus,
        p_value: p.clamp(f64::MIN_POSITIVE, 1.0),
        method,
        alternative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data (numpy's default).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Option<MetricSummary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(MetricSummary {
        n: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

pub const METRIC_NAMES: [&str; 6] = ["dsc", "iou", "precision", "recall", "f1", "avg_hausdorff"];

fn metric_value(r: &MetricsReport, name: &str) -> Option<f64> {
    match name {
        "dsc" => Some(r.dsc),
        "iou" => Some(r.iou),
        "precision" => Some(r.precision),
        "recall" => Some(r.recall),
        "f1" => Some(r.f1),
        "avg_hausdorff" => r.avg_hausdorff,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_slides: usize,
    /// `(metric, summary)` in [`METRIC_NAMES`] order; absent when no slide
    /// defines the metric.
    pub metrics: Vec<(String, Option<MetricSummary>)>,
}

impl CohortSummary {
    pub fn get(&self, metric: &str) -> Option<&MetricSummary> {
        self.metrics
            .iter()
            .find(|(m, _)| m == metric)
            .and_then(|(_, s)| s.as_ref())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,n,mean,median,q1,q3,min,max\n");
        for (name, s) in &self.metrics {
            match s {
                Some(s) => writeln!(
                    out,
                    "{name},{},{},{},{},{},{},{}",
                    s.n, s.mean, s.median, s.q1, s.q3, s.min, s.max
                ),
                None => writeln!(out, "{name},0,,,,,,"),
            }
            .expect("writing to String");
        }
        out
    }
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<CohortSummary> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to aggregate".into()));
    }
    let metrics = METRIC_NAMES
        .iter()
        .map(|&name| {
            let vals: Vec<f64> = reports.iter().filter_map(|r| metric_value(r, name)).collect();
            (name.to_string(), summarize(&vals))
        })
        .collect();
    Ok(CohortSummary {
        n_slides: reports.len(),
        metrics,
    })
}

/// One row per slide: `config,slide_id,dsc,iou,precision,recall,f1,avg_hausdorff`.
pub fn boxplot_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut out = String::from("config,slide_id,dsc,iou,precision,recall,f1,avg_hausdorff\n");
    for (config, r) in rows {
        let hd = r.avg_hausdorff.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{config},{},{},{},{},{},{},{hd}",
            r.slide_id, r.dsc, r.iou, r.precision, r.recall, r.f1
        )
        .expect("writing to String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_positive_differences() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert_eq!(r.w_statistic, 0.0);
        assert_eq!(r.p_value, 0.0625);
        let g = wilcoxon_signed_rank_with(&a, &b, Alternative::Greater).unwrap();
        assert_eq!(g.p_value, 1.0 / 32.0);
        let l = wilcoxon_signed_rank_with(&a, &b, Alternative::Less).unwrap();
        assert_eq!(l.p_value, 1.0);
    }

    #[test]
    fn single_nonzero_pair() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.5]).unwrap();
        assert_eq!(r.n_effective, 1);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn degenerate_and_bad_inputs() {
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::DegenerateTest(_))
        ));
        assert!(matches!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]), Err(Error::Input(_))));
        assert!(matches!(wilcoxon_signed_rank(&[], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn midranks_with_ties() {
        assert_eq!(doubled_midranks(&[3.0, 1.0, 3.0, 2.0]), vec![7, 2, 7, 4]);
    }

    #[test]
    fn normal_approximation_branch() {
        let a: Vec<f64> = (0..40).map(|i| f64::from(i) + 0.5).collect();
        let b: Vec<f64> = (0..40).map(|i| if i % 4 == 0 { f64::from(i) + 1.0 } else { f64::from(i) }).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, WilcoxonMethod::NormalApprox);
        assert!(r.p_value > 0.0 && r.p_value < 0.05);
    }

    #[test]
    fn summary_arithmetic() {
        let s = summarize(&[0.8, 0.9, 1.0]).unwrap();
        assert!((s.mean - 0.9).abs() < 1e-15);
        assert_eq!(s.median, 0.9);
        assert_eq!((s.min, s.max), (0.8, 1.0));
        let one = summarize(&[0.42]).unwrap();
        assert_eq!((one.mean, one.median, one.q1, one.q3), (0.42, 0.42, 0.42, 0.42));
        assert!(summarize(&[]).is_none());
        let q = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
    }
}
