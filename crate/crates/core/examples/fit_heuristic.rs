//! Refits the heuristic backend's logistic weights on phantom patches and
//! prints them as Rust constants.
//!
//! The target of each tissue patch is its tumor fraction, so boundary patches
//! learn intermediate probabilities.
//! Training phantoms use seeds 1000.. so evaluation seeds stay unseen.
//!
//! cargo run --release --example fit_heuristic -- [n_phantoms]

use rayon::prelude::*;
use slideseg::bridge::heuristic::{fit_logistic, heuristic_probability, patch_features, FEATURE_DIM};
use slideseg::bridge::PATCH_SIDE;
use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::tissue::{
    build_patch_grid, compute_tissue_mask, extract_patch, DEFAULT_BRIGHTNESS_CEILING,
    DEFAULT_GRADIENT_THRESHOLD, DEFAULT_PATCH_SIZE,
};

fn samples_for(seed: u64) -> slideseg::Result<Vec<([f64; FEATURE_DIM], f64)>> {
    let p = generate_phantom(&PhantomSpec::with_seed(seed))?;
    let level = p.slide.level_nearest_factor(32.0);
    let tissue = compute_tissue_mask(&p.slide, level, DEFAULT_GRADIENT_THRESHOLD, DEFAULT_BRIGHTNESS_CEILING)?;
    let grid = build_patch_grid(&p.slide, 0, DEFAULT_PATCH_SIZE, &tissue, Some(&p.tumor_truth))?;
    grid.tissue_records()
        .map(|r| {
            let px = extract_patch(&p.slide, &grid, r, PATCH_SIDE)?;
            Ok((patch_features(&px), r.tumor_fraction.unwrap_or(0.0)))
        })
        .collect()
}

fn main() -> slideseg::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let per: Vec<_> = (1000..1000 + n).into_par_iter().map(samples_for).collect::<slideseg::Result<_>>()?;
    let samples: Vec<_> = per.into_iter().flatten().collect();
    let positives = samples.iter().filter(|s| s.1 >= 0.5).count();
    eprintln!("{} patches, {positives} at least half tumor", samples.len());

    let (w, b) = fit_logistic(&samples, 20000, 0.5, 1e-4);
    let mut correct = 0;
    for (f, y) in &samples {
        let p = heuristic_probability(f, &w, b)?;
        if (p >= 0.5) == (*y >= 0.5) {
            correct += 1;
        }
    }
    eprintln!("training accuracy {:.4}", correct as f64 / samples.len() as f64);
    println!("pub const FROZEN_WEIGHTS: [f64; FEATURE_DIM] = {w:?};");
    println!("pub const FROZEN_BIAS: f64 = {b:?};");
    Ok(())
}
