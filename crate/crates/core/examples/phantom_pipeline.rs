//! Runs the full pipeline on a few generated phantoms and prints per-slide
//! scores for both heatmap mappings.
//!
//! cargo run --release --example phantom_pipeline -- [n_phantoms]

use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::pipeline::{run_slide, HeatmapMapping, PipelineConfig};

fn main() -> slideseg::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let out = std::env::temp_dir().join("slideseg-phantom-pipeline");
    for seed in 0..n {
        let p = generate_phantom(&PhantomSpec::with_seed(seed))?;
        for mapping in [HeatmapMapping::Registered, HeatmapMapping::AlignCorners] {
            let cfg = PipelineConfig {
                heatmap_mapping: mapping,
                write_tensor: false,
                ..PipelineConfig::default()
            };
            let t = std::time::Instant::now();
            let r = run_slide(&p.slide, Some(&p.tumor_truth), &cfg, &out.join(p.slide.slide_id()))?;
            let m = r.metrics.expect("truth was supplied");
            println!(
                "{} {mapping:?}: dsc={:.4} iou={:.4} hd={:.2} ({:.2}s)",
                p.slide.slide_id(),
                m.dsc,
                m.iou,
                m.avg_hausdorff.unwrap_or(f64::NAN),
                t.elapsed().as_secs_f64()
            );
        }
    }
    let _ = std::fs::remove_dir_all(&out);
    Ok(())
}
