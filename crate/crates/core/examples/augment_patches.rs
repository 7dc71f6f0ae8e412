//! Writes augmented copies of a phantom patch with a grid drawn on first, so
//! the lens warps are visible.
//!
//! cargo run --release --example augment_patches -- [count] [out_dir]

use std::path::PathBuf;

use slideseg::augment::{apply_multi_lens_distortion, augment_patch, draw_grid_overlay, sample_lenses, AugmentConfig};
use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::rng::patch_stream;
use slideseg::slide::Region;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: u32 = args.next().and_then(|a| a.parse().ok()).unwrap_or(6);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("slideseg-augment"), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let ph = generate_phantom(&PhantomSpec::with_seed(1).scaled_to(2048))?;
    let (cx, cy) = (ph.tissue_shape.cx as u32, ph.tissue_shape.cy as u32);
    let patch = ph.slide.read_region(&Region::new(0, cx - 160, cy - 160, 320, 320))?;
    let gridded = draw_grid_overlay(&patch, 20, [20, 20, 20]);
    gridded.save(out.join("original.png"))?;

    let cfg = AugmentConfig::default();
    for i in 0..count {
        // One stream per (slide, patch, epoch): results do not depend on
        // which thread handles which patch.
        let mut rng = patch_stream(42, ph.slide.slide_id(), 0, 0, i);
        let (w, h) = gridded.dimensions();
        let lenses = sample_lenses(&cfg, (h, w), &mut rng)?;
        apply_multi_lens_distortion(&gridded, &lenses).save(out.join(format!("lens_{i}.png")))?;
        let mut rng = patch_stream(42, ph.slide.slide_id(), 0, 0, i);
        augment_patch(&gridded, &cfg, &mut rng)?.save(out.join(format!("full_{i}.png")))?;
        let desc: Vec<String> = lenses
            .iter()
            .map(|l| format!("({:.0},{:.0}) r={:.0} s={:+.2}", l.cx, l.cy, l.radius, l.strength))
            .collect();
        println!("{i}: {}", desc.join(" "));
    }
    println!("images in {}", out.display());
    Ok(())
}
