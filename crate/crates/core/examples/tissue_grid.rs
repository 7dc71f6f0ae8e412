//! Tissue mask and patch lattice of a phantom, with label counts and an
//! ASCII map of the lattice.
//!
//! cargo run --release --example tissue_grid -- [seed]

use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::tissue::{
    build_patch_grid, compute_tissue_mask, PatchLabel, DEFAULT_BRIGHTNESS_CEILING, DEFAULT_GRADIENT_THRESHOLD,
    DEFAULT_PATCH_SIZE,
};

fn main() -> slideseg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let ph = generate_phantom(&PhantomSpec::with_seed(seed))?;
    let slide = &ph.slide;

    // Masks are computed at the level nearest a 32x downsample.
    let level = slide.level_nearest_factor(32.0);
    let tissue = compute_tissue_mask(slide, level, DEFAULT_GRADIENT_THRESHOLD, DEFAULT_BRIGHTNESS_CEILING)?;
    println!(
        "tissue mask at level {level}: {}x{}, {} tissue pixels",
        tissue.mask.width(),
        tissue.mask.height(),
        tissue.mask.count_ones()
    );

    let grid = build_patch_grid(slide, 0, DEFAULT_PATCH_SIZE, &tissue, Some(&ph.tumor_truth))?;
    println!("{}x{} lattice of {} px patches", grid.cols, grid.rows, grid.patch_size);
    for label in [
        PatchLabel::GlassExcluded,
        PatchLabel::NonTumor,
        PatchLabel::AmbiguousExcluded,
        PatchLabel::Tumor,
    ] {
        println!("  {label:?}: {}", grid.count(label));
    }

    // . glass   - stroma   ? ambiguous   # tumor
    for y in 0..grid.rows {
        let row: String = (0..grid.cols)
            .map(|x| match grid.record(x, y).map(|r| r.label) {
                Some(PatchLabel::Tumor) => '#',
                Some(PatchLabel::AmbiguousExcluded) => '?',
                Some(PatchLabel::NonTumor) | Some(PatchLabel::Eligible) => '-',
                _ => '.',
            })
            .collect();
        println!("  {row}");
    }
    Ok(())
}
