//! Unsupervised patch clustering with an evolved cluster count, a balanced
//! training sample drawn from the clusters, and a five-shot prototype
//! classifier built from labelled patches.
//!
//! cargo run --release --example cluster_fewshot -- [seed]

use slideseg::bridge::{extract_features, BackendDescriptor, Patch, PATCH_SIDE};
use slideseg::cluster::{balanced_sample, class_prototypes, evolve_cluster_count, prototype_classify, EvolutionConfig};
use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::tissue::{
    build_patch_grid, compute_tissue_mask, extract_patch, PatchLabel, DEFAULT_BRIGHTNESS_CEILING,
    DEFAULT_GRADIENT_THRESHOLD,
};

fn main() -> slideseg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let ph = generate_phantom(&PhantomSpec::with_seed(seed))?;
    let slide = &ph.slide;
    let tissue = compute_tissue_mask(
        slide,
        slide.level_nearest_factor(32.0),
        DEFAULT_GRADIENT_THRESHOLD,
        DEFAULT_BRIGHTNESS_CEILING,
    )?;
    // Smaller patches give a denser lattice to cluster.
    let grid = build_patch_grid(slide, 0, 128, &tissue, Some(&ph.tumor_truth))?;
    let records: Vec<_> = grid.tissue_records().cloned().collect();
    let patches = records
        .iter()
        .map(|r| {
            Ok(Patch {
                grid_x: r.grid_x,
                grid_y: r.grid_y,
                pixels: extract_patch(slide, &grid, r, PATCH_SIDE)?,
            })
        })
        .collect::<slideseg::Result<Vec<_>>>()?;
    let features = extract_features(&BackendDescriptor::heuristic(), &patches)?;

    let cfg = EvolutionConfig {
        k_max: 6,
        seed,
        ..EvolutionConfig::default()
    };
    let model = evolve_cluster_count(&features, &cfg)?;
    println!("{} tissue patches, evolved k={} (objective {:.4})", records.len(), model.k, model.objective);
    for c in 0..model.k {
        let members: Vec<_> = records.iter().zip(&model.assignment).filter(|(_, &a)| a == c).collect();
        let tumor = members.iter().filter(|(r, _)| r.label == PatchLabel::Tumor).count();
        println!("  cluster {c}: {} patches, {tumor} tumor", members.len());
    }
    let sample = balanced_sample(&grid, &model, 10, seed)?;
    println!("balanced sample of {} patches for annotation", sample.len());

    // An annotator labels the balanced sample; five clear examples per class
    // become the support set.
    let feature_of = |gx, gy| {
        records
            .iter()
            .position(|r| (r.grid_x, r.grid_y) == (gx, gy))
            .map(|i| features[i].clone())
    };
    let shots = |tumor: bool| -> Vec<Vec<f64>> {
        sample
            .iter()
            .filter(|r| match r.tumor_fraction {
                Some(f) if tumor => f > 0.9,
                Some(f) => f == 0.0,
                None => false,
            })
            .filter_map(|r| feature_of(r.grid_x, r.grid_y))
            .take(5)
            .collect()
    };
    let protos = class_prototypes(&[shots(false), shots(true)])?;
    let (mut right, mut total) = (0, 0);
    for (r, f) in records.iter().zip(&features) {
        let truth = match r.tumor_fraction {
            Some(t) if t > 0.5 => 1,
            Some(t) if t == 0.0 => 0,
            _ => continue,
        };
        right += usize::from(prototype_classify(&protos, f)? == truth);
        total += 1;
    }
    println!("five-shot prototype accuracy on unambiguous patches: {right}/{total}");
    Ok(())
}
