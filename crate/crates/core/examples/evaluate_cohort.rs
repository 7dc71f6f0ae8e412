//! Scores two imperfect "segmenters" against phantom truth masks, summarises
//! each cohort and asks whether the difference is significant.
//!
//! The segmenters are stand-ins: one erodes the truth slightly, the other
//! erodes it more and adds a stray blob. No classification is involved.
//!
//! cargo run --release --example evaluate_cohort

use slideseg::metrics::overlap_metrics;
use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::postprocess::{dilate, erode};
use slideseg::stats::{aggregate, boxplot_csv, wilcoxon_signed_rank, METRIC_NAMES};
use slideseg::BinaryMask;

fn with_blob(mask: &BinaryMask, cx: u32, cy: u32, r: u32) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (dx, dy) = (x.abs_diff(cx), y.abs_diff(cy));
        mask.get(x, y) || dx * dx + dy * dy <= r * r
    })
}

fn main() -> slideseg::Result<()> {
    let mut careful = Vec::new();
    let mut sloppy = Vec::new();
    for seed in 0..8 {
        let ph = generate_phantom(&PhantomSpec::with_seed(seed).scaled_to(1024))?;
        let truth = ph.tumor_truth.resize_nearest(512, 512);
        let id = ph.spec.slide_id();
        careful.push(overlap_metrics(&id, &erode(&truth, 3)?, &truth)?);
        let rough = with_blob(&dilate(&erode(&truth, 9)?, 3)?, 40 + 10 * seed as u32, 40, 12);
        sloppy.push(overlap_metrics(&id, &rough, &truth)?);
    }

    for (name, cohort) in [("careful", &careful), ("sloppy", &sloppy)] {
        let summary = aggregate(cohort)?;
        println!("{name}: {} slides", summary.n_slides);
        for metric in METRIC_NAMES {
            if let Some(s) = summary.get(metric) {
                println!("  {metric:>14} median {:.4} iqr [{:.4}, {:.4}]", s.median, s.q1, s.q3);
            }
        }
    }

    let a: Vec<f64> = careful.iter().map(|r| r.dsc).collect();
    let b: Vec<f64> = sloppy.iter().map(|r| r.dsc).collect();
    let w = wilcoxon_signed_rank(&a, &b)?;
    println!(
        "wilcoxon on dsc: W={} n={} p={:.5} ({:?})",
        w.w_statistic, w.n_effective, w.p_value, w.method
    );

    let rows = careful.iter().map(|r| ("careful", r)).chain(sloppy.iter().map(|r| ("sloppy", r)));
    let csv = boxplot_csv(rows);
    println!("boxplot table: {} rows, header `{}`", csv.lines().count() - 1, csv.lines().next().unwrap_or(""));
    Ok(())
}
