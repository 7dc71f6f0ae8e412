//! Runs several named pipeline configurations on one slide set and compares
//! them pairwise on per-slide DSC.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{run_pipeline, write_json, write_text, PipelineConfig, PipelineReport, SlideSource};
use crate::error::{Error, Result};
use crate::stats::{aggregate, boxplot_csv, wilcoxon_signed_rank, CohortSummary, WilcoxonResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConfig {
    pub name: String,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub output_dir: PathBuf,
    pub configs: Vec<NamedConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigOutcome {
    pub name: String,
    pub n_failed: usize,
    pub summary: Option<CohortSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub a: String,
    pub b: String,
    pub n_pairs: usize,
    pub mean_dsc_a: f64,
    pub mean_dsc_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wilcoxon: Option<WilcoxonResult>,
    /// No nonzero paired difference, so no test was possible.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub configs: Vec<ConfigOutcome>,
    pub pairings: Vec<Pairing>,
}

fn slide_set(slides: &[SlideSource]) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = slides.iter().map(|s| s.path.clone()).collect();
    v.sort();
    v
}

/// Pairwise comparison of already-computed cohort reports, in list order.
pub fn compare_reports(named: &[(String, PipelineReport)]) -> Result<Vec<Pairing>> {
    let dsc: Vec<BTreeMap<&str, f64>> = named
        .iter()
        .map(|(_, r)| r.metrics().map(|m| (m.slide_id.as_str(), m.dsc)).collect())
        .collect();
    let mut pairings = Vec::new();
    for i in 0..named.len() {
        for j in i + 1..named.len() {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (id, &va) in &dsc[i] {
                if let Some(&vb) = dsc[j].get(id) {
                    a.push(va);
                    b.push(vb);
                }
            }
            let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            let (wilcoxon, degenerate) = if a.is_empty() {
                (None, true)
            } else {
                match wilcoxon_signed_rank(&a, &b) {
                    Ok(w) => (Some(w), false),
                    Err(Error::DegenerateTest(_)) => (None, true),
                    Err(e) => return Err(e),
                }
            };
            pairings.push(Pairing {
                a: named[i].0.clone(),
                b: named[j].0.clone(),
                n_pairs: a.len(),
                mean_dsc_a: mean(&a),
                mean_dsc_b: mean(&b),
                wilcoxon,
                degenerate,
            });
        }
    }
    Ok(pairings)
}

/// Each config runs under `<output_dir>/<name>/`; the comparison table,
/// pairings and boxplot CSV go to `<output_dir>`.
pub fn run_experiment_matrix(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    if spec.configs.len() < 2 {
        return Err(Error::Config("an experiment needs at least two configs".into()));
    }
    let mut names: Vec<&str> = spec.configs.iter().map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| n.is_empty() || n.contains(['/', '\\'])) {
        return Err(Error::Config("config names must be unique, non-empty path segments".into()));
    }
    let reference = slide_set(&spec.configs[0].config.slides);
    for c in &spec.configs[1..] {
        if slide_set(&c.config.slides) != reference {
            return Err(Error::Consistency(format!(
                "config {} uses a different slide set than {}",
                c.name, spec.configs[0].name
            )));
        }
    }
    if spec.configs[0].config.slides.iter().any(|s| s.truth.is_none()) {
        return Err(Error::Input("every slide in an experiment needs a truth mask".into()));
    }
    fs::create_dir_all(&spec.output_dir).map_err(|e| Error::io(&spec.output_dir, e))?;

    let mut reports = Vec::with_capacity(spec.configs.len());
    for c in &spec.configs {
        let mut cfg = c.config.clone();
        cfg.output_dir = spec.output_dir.join(&c.name);
        reports.push((c.name.clone(), run_pipeline(&cfg)?.report));
    }

    let mut configs = Vec::with_capacity(reports.len());
    let mut rows = Vec::new();
    for (name, r) in &reports {
        let metrics: Vec<_> = r.metrics().cloned().collect();
        configs.push(ConfigOutcome {
            name: name.clone(),
            n_failed: r.slides.iter().filter(|s| !s.ok).count(),
            summary: if metrics.is_empty() { None } else { Some(aggregate(&metrics)?) },
        });
        rows.extend(r.metrics().map(|m| (name.as_str(), m)));
    }
    let pairings = compare_reports(&reports)?;
    write_text(&spec.output_dir.join("boxplot.csv"), &boxplot_csv(rows))?;

    let mut table = String::from("config,n,mean_dsc,median_dsc,q1_dsc,q3_dsc,n_failed\n");
    for c in &configs {
        match c.summary.as_ref().and_then(|s| s.get("dsc")) {
            Some(s) => table.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.name, s.n, s.mean, s.median, s.q1, s.q3, c.n_failed
            )),
            None => table.push_str(&format!("{},0,,,,,{}\n", c.name, c.n_failed)),
        }
    }
    write_text(&spec.output_dir.join("comparison.csv"), &table)?;

    let mut pairs = String::from("a,b,n_pairs,mean_dsc_a,mean_dsc_b,w_statistic,p_value,method,degenerate\n");
    for p in &pairings {
        let (w, pv, m) = match &p.wilcoxon {
            Some(w) => (w.w_statistic.to_string(), w.p_value.to_string(), format!("{:?}", w.method)),
            None => Default::default(),
        };
        pairs.push_str(&format!(
            "{},{},{},{},{},{w},{pv},{m},{}\n",
            p.a, p.b, p.n_pairs, p.mean_dsc_a, p.mean_dsc_b, p.degenerate
        ));
    }
    write_text(&spec.output_dir.join("pairings.csv"), &pairs)?;

    let report = ExperimentReport { configs, pairings };
    write_json(&spec.output_dir.join("experiment.json"), &report)?;
    Ok(report)
}
