//! Fuse, refine and post-process one phantom, reporting the score after each
//! clean-up step so the effect of every stage is visible.
//!
//! cargo run --release --example refine_postprocess -- [seed]

use slideseg::metrics::overlap_metrics;
use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::pipeline::{run_slide, PipelineConfig};
use slideseg::postprocess::{
    median_blur, morphological_open, postprocess, refine, remove_small_fragments, threshold_mask, PostprocessConfig,
    Refiner,
};
use slideseg::heatmap::RefinementInput;
use slideseg::ScalarRaster;

fn main() -> slideseg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2);
    let ph = generate_phantom(&PhantomSpec::with_seed(seed))?;
    let out = std::env::temp_dir().join("slideseg-refine");
    let cfg = PipelineConfig::default();
    run_slide(&ph.slide, Some(&ph.tumor_truth), &cfg, &out)?;

    // The fused tensor is what a trained refinement network would consume.
    let input = RefinementInput::load(&out.join("fuse"), "refinement_input")?;
    println!("refinement input {}x{}x4", input.width, input.height);
    let refined: ScalarRaster = refine(&input, &Refiner::Identity)?;

    let truth = ph.tumor_truth.resize_nearest(input.width, input.height);
    let pp = PostprocessConfig::default();
    let score = |name: &str, m: &slideseg::BinaryMask| -> slideseg::Result<()> {
        let r = overlap_metrics(name, m, &truth)?;
        println!(
            "{name:>12}: dsc={:.4} hd={:.2} px={}",
            r.dsc,
            r.avg_hausdorff.unwrap_or(f64::NAN),
            m.count_ones()
        );
        Ok(())
    };
    let t = threshold_mask(&refined, pp.threshold);
    score("threshold", &t)?;
    let f = remove_small_fragments(&t, pp.min_fragment_area);
    score("fragments", &f)?;
    let o = morphological_open(&f, pp.opening_kernel)?;
    score("opening", &o)?;
    let m = median_blur(&o, pp.median_kernel)?;
    score("median", &m)?;
    assert_eq!(m, postprocess(&refined, &pp)?);

    let _ = std::fs::remove_dir_all(&out);
    Ok(())
}
