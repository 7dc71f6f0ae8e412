//! Compares two heatmap-to-raster mappings over a small phantom cohort and
//! prints the pairwise test.
//!
//! cargo run --release --example experiment_matrix -- [n_slides]

use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::pipeline::{run_experiment_matrix, ExperimentSpec, HeatmapMapping, NamedConfig, PipelineConfig, SlideSource};

fn main() -> slideseg::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(6);
    let root = std::env::temp_dir().join("slideseg-experiment");
    let slides = (0..)
        .filter_map(|seed| generate_phantom(&PhantomSpec::with_seed(seed).scaled_to(2048)).ok())
        .take(n)
        .map(|ph| {
            let d = root.join("slides").join(ph.spec.slide_id());
            ph.save(&d)?;
            Ok(SlideSource::discover(d))
        })
        .collect::<slideseg::Result<Vec<_>>>()?;

    let base = PipelineConfig {
        slides,
        refinement_size: 512,
        write_tensor: false,
        ..PipelineConfig::default()
    };
    let spec = ExperimentSpec {
        output_dir: root.join("matrix"),
        configs: vec![
            NamedConfig { name: "registered".into(), config: base.clone() },
            NamedConfig {
                name: "align-corners".into(),
                config: PipelineConfig {
                    heatmap_mapping: HeatmapMapping::AlignCorners,
                    ..base
                },
            },
        ],
    };
    let report = run_experiment_matrix(&spec)?;
    for p in &report.pairings {
        print!("{} vs {}: mean dsc {:.4} / {:.4}", p.a, p.b, p.mean_dsc_a, p.mean_dsc_b);
        match &p.wilcoxon {
            Some(w) => println!(", p={:.4} over {} slides", w.p_value, p.n_pairs),
            None => println!(", no difference to test"),
        }
    }
    println!("tables under {}", spec.output_dir.display());
    Ok(())
}
