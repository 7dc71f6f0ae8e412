//! Classifies the tissue patches of a phantom with the built-in heuristic
//! backend, stitches the heatmap and prints it next to the truth.
//!
//! cargo run --release --example classify_stitch -- [seed]

use rayon::prelude::*;
use slideseg::bridge::{classify_batch, BackendDescriptor, Patch, PATCH_SIDE};
use slideseg::heatmap::{resize_heatmap_registered, stitch_heatmap};
use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::tissue::{
    build_patch_grid, compute_tissue_mask, extract_patch, PatchLabel, DEFAULT_BRIGHTNESS_CEILING,
    DEFAULT_GRADIENT_THRESHOLD, DEFAULT_PATCH_SIZE,
};

fn shade(p: f64) -> char {
    [' ', '.', ':', '+', '#'][((p * 5.0) as usize).min(4)]
}

fn main() -> slideseg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let ph = generate_phantom(&PhantomSpec::with_seed(seed))?;
    let slide = &ph.slide;
    let tissue = compute_tissue_mask(
        slide,
        slide.level_nearest_factor(32.0),
        DEFAULT_GRADIENT_THRESHOLD,
        DEFAULT_BRIGHTNESS_CEILING,
    )?;
    let grid = build_patch_grid(slide, 0, DEFAULT_PATCH_SIZE, &tissue, Some(&ph.tumor_truth))?;

    let patches = grid
        .tissue_records()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|r| {
            Ok(Patch {
                grid_x: r.grid_x,
                grid_y: r.grid_y,
                pixels: extract_patch(slide, &grid, r, PATCH_SIDE)?,
            })
        })
        .collect::<slideseg::Result<Vec<_>>>()?;
    let probs = classify_batch(&BackendDescriptor::heuristic(), &patches)?;
    let heatmap = stitch_heatmap(&grid, &probs)?;

    println!("heatmap (left) and truth labels (right), {} patches classified", probs.len());
    for y in 0..grid.rows {
        let hm: String = (0..grid.cols).map(|x| shade(heatmap.get(x, y))).collect();
        let truth: String = (0..grid.cols)
            .map(|x| match grid.record(x, y).map(|r| r.label) {
                Some(PatchLabel::Tumor) => '#',
                Some(PatchLabel::AmbiguousExcluded) => '?',
                Some(PatchLabel::GlassExcluded) | None => ' ',
                _ => '.',
            })
            .collect();
        println!("|{hm}|   |{truth}|");
    }

    let tumor: Vec<f64> = grid
        .records
        .iter()
        .filter(|r| r.label == PatchLabel::Tumor)
        .map(|r| heatmap.get(r.grid_x, r.grid_y))
        .collect();
    let stroma: Vec<f64> = grid
        .records
        .iter()
        .filter(|r| r.label == PatchLabel::NonTumor)
        .map(|r| heatmap.get(r.grid_x, r.grid_y))
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    println!("mean p: tumor patches {:.3}, stroma patches {:.3}", mean(&tumor), mean(&stroma));

    let resized = resize_heatmap_registered(&heatmap, &grid.header(), 1120, 1120)?;
    println!("registered 1120x1120 resize, mass {:.0}", resized.data().iter().map(|&v| f64::from(v)).sum::<f64>());
    Ok(())
}
