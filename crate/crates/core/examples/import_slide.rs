//! Imports a PNG/TIFF raster as a tiled pyramid and reads a region back.
//!
//! cargo run --release --example import_slide -- [image.png] [out_dir]
//!
//! Without arguments a small phantom is rendered to a PNG first.

use std::path::PathBuf;

use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::slide::{import_raster, Region};
use slideseg::TiledSlide;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = std::env::temp_dir().join("slideseg-import");
    let input = match args.next() {
        Some(p) => PathBuf::from(p),
        None => {
            let ph = generate_phantom(&PhantomSpec::with_seed(3).scaled_to(2048))?;
            let png = out.join("phantom-3.png");
            std::fs::create_dir_all(&out)?;
            ph.slide.level_image(0)?.save(&png)?;
            png
        }
    };
    let slide_dir = args.next().map_or_else(|| out.join("slide"), PathBuf::from);

    let slide = import_raster(&input, 512)?;
    slide.save(&slide_dir)?;
    println!("{} -> {}", input.display(), slide_dir.display());
    for l in slide.levels() {
        println!(
            "  level {}: {}x{} (downsample {}), {} tiles",
            l.level,
            l.width,
            l.height,
            l.downsample_factor,
            l.tiles_across(512) * l.tiles_down(512)
        );
    }

    // Reopening reads the manifest; level 0 is the original pixels.
    let reopened = TiledSlide::open(&slide_dir)?;
    let crop = reopened.read_region(&Region::new(0, 100, 200, 224, 224))?;
    let original = image::open(&input)?.to_rgb8();
    let same = image::imageops::crop_imm(&original, 100, 200, 224, 224).to_image() == crop;
    println!("224px region at (100,200) matches the source: {same}");
    Ok(())
}
